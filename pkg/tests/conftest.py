import sys
import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def write_rgb(tmp_path):
    """Write an HxWx3 uint8 array to ``tmp_path/name`` and return the path."""

    def _write(arr, name="img.png"):
        path = tmp_path / name
        Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="RGB").save(path)
        return path

    return _write


@pytest.fixture
def write_gray(tmp_path):
    def _write(arr, name="gray.png"):
        path = tmp_path / name
        Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="L").save(path)
        return path

    return _write


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.RESULTS[n])
