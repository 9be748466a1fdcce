"""Single-predictor linear friction models and their fit diagnostics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from pavetex.errors import ComputationError, DataError

CALIBRATION_NOTE = (
    "Built-in models were calibrated on laboratory slabs under controlled lighting; "
    "thresholds and coefficients should be recalibrated before field use."
)


@dataclass(frozen=True)
class RegressionModel:
    mixture: str
    intercept: float
    slope: float
    n: int = 0
    pearson_r: float = float("nan")
    r2: float = float("nan")
    r2_adj: float = float("nan")
    indicator: str = "area"
    provenance: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("pearson_r", "r2", "r2_adj"):
            if isinstance(d[key], float) and math.isnan(d[key]):
                d[key] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionModel":
        d = dict(d)
        for key in ("pearson_r", "r2", "r2_adj"):
            if d.get(key) is None:
                d[key] = float("nan")
        return cls(**d)


class Prediction(NamedTuple):
    dft: float
    out_of_range: bool


def _as_arrays(xs, ys):
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("x and y must be 1-D sequences of equal length")
    return x, y


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    x, y = _as_arrays(xs, ys)
    if x.size < 2:
        raise DataError("correlation needs at least 2 observations")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ComputationError("correlation undefined: zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def r_squared(ys: Sequence[float], yhats: Sequence[float]) -> float:
    """Coefficient of determination 1 - SSE/SST."""
    y, yhat = _as_arrays(ys, yhats)
    if y.size < 2:
        raise DataError("R^2 needs at least 2 observations")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0:
        raise ComputationError("R^2 undefined: observed values have zero variance")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / sst


def adjusted_r_squared(r2: float, n: int, p: int = 1) -> float:
    if n <= p + 1:
        raise DataError(f"adjusted R^2 needs n > p + 1 (n={n}, p={p})")
    return 1.0 - ((1.0 - r2) * (n - 1)) / (n - p - 1)


class ObservationSet(NamedTuple):
    """Paired (indicator value, measured DFT40) observations for one mixture."""

    xs: Sequence[float]
    ys: Sequence[float]
    mixture: str = ""
    indicator: str = "area"


def ols_fit(xs, ys=None, mixture: str = "", indicator: str = "area") -> RegressionModel:
    """Closed-form least squares ``y = intercept + slope * x`` with diagnostics.

    Accepts either an ObservationSet or separate ``xs``/``ys`` sequences.
    With constant ``y`` the line is exact but r and R^2 are undefined; they
    are reported as NaN.
    """
    if isinstance(xs, ObservationSet):
        xs, ys, mixture, indicator = xs
    x, y = _as_arrays(xs, ys)
    if x.size < 3:
        raise DataError(f"need at least 3 observations to fit, got {x.size}")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0:
        raise ComputationError("degenerate predictor: all x values are identical")
    slope = float(dx @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    if np.all(y == y[0]):
        r = r2 = r2_adj = float("nan")
    else:
        r = pearson_r(x, y)
        r2 = r_squared(y, intercept + slope * x)
        r2_adj = adjusted_r_squared(r2, x.size, 1)
    return RegressionModel(mixture, intercept, slope, int(x.size), r, r2, r2_adj, indicator, "fitted")


def predict(model: RegressionModel, x: float) -> Prediction:
    """Linear prediction; values outside [0, 1] are flagged, never clamped."""
    v = model.intercept + model.slope * float(x)
    return Prediction(v, not 0.0 <= v <= 1.0)


def normalize_mixture(label: str) -> str:
    """Canonical mixture key: 'Chip Seal', 'chip_seal' and 'ChipSeal' all map to 'CHIPSEAL'."""
    return "".join(ch for ch in label.upper() if ch.isalnum())


class ModelRegistry:
    """Read-only mixture -> model lookup, tolerant of label spelling."""

    def __init__(self, models: Sequence[RegressionModel]):
        self._models = {normalize_mixture(m.mixture): m for m in models}

    def __getitem__(self, mixture: str) -> RegressionModel:
        try:
            return self._models[normalize_mixture(mixture)]
        except KeyError:
            raise KeyError(f"no model for mixture {mixture!r}") from None

    def __contains__(self, mixture: str) -> bool:
        return normalize_mixture(mixture) in self._models

    def __iter__(self):
        return iter(self._models.values())

    def __len__(self):
        return len(self._models)


_TABLE2 = (
    # mixture, intercept, slope, r, R^2, adjusted R^2
    ("DGAC", 0.2396, 1.0632e-4, 0.9620, 0.9255, 0.9130),
    ("ChipSeal", 0.3151, 1.4331e-4, 0.9851, 0.9704, 0.9655),
    ("OGFC", -0.2504, 2.4260e-4, 0.9782, 0.9569, 0.9498),
)


def builtin_models() -> ModelRegistry:
    """The three published Area -> DFT40 models (n = 8 wear levels each)."""
    return ModelRegistry(
        [
            RegressionModel(mix, b0, b1, 8, r, r2, r2a, "area", "builtin: published laboratory model. " + CALIBRATION_NOTE)
            for mix, b0, b1, r, r2, r2a in _TABLE2
        ]
    )


def save_models(models: Sequence[RegressionModel], path) -> None:
    doc = {"models": [m.to_dict() for m in models], "note": CALIBRATION_NOTE}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_models(path) -> ModelRegistry:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return ModelRegistry([RegressionModel.from_dict(d) for d in doc["models"]])
    except FileNotFoundError as exc:
        raise DataError(f"file not found: {path}") from exc
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed model file {path}: {exc}") from exc
