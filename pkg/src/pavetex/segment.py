"""Global thresholding, binarisation and the protruding-aggregate Area indicator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
from PIL import Image

from pavetex.errors import ComputationError, DataError
from pavetex.raster import GrayRaster

ISODATA_MAX_ITER = 100

# Relative tolerance under which two entropy scores count as tied.
_ENTROPY_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Histogram256:
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (256,):
            raise DataError(f"histogram needs 256 bins, got shape {c.shape}")
        if (c < 0).any():
            raise DataError("histogram counts must be non-negative")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def occupied(self) -> np.ndarray:
        return np.flatnonzero(self.counts)


@dataclass(frozen=True)
class BinaryMask:
    """Boolean grid; True marks foreground."""

    bits: np.ndarray
    mm_per_px: Optional[float] = None

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2:
            raise DataError(f"mask must be 2-D, got shape {b.shape}")
        object.__setattr__(self, "bits", b)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def save(self, path) -> None:
        """Write as PBM/PNG in display polarity: foreground black, background white."""
        Image.fromarray(np.where(self.bits, 0, 255).astype(np.uint8), mode="L").convert("1").save(
            str(path)
        )


@dataclass(frozen=True)
class ThresholdResult:
    threshold: int
    iterations: int = 0
    converged: bool = True


def histogram(img: GrayRaster) -> Histogram256:
    if img.values.size == 0:
        raise DataError("cannot build a histogram of an empty image")
    return Histogram256(np.bincount(img.values.ravel(), minlength=256))


def _require_two_levels(h: Histogram256) -> np.ndarray:
    occ = h.occupied()
    if occ.size < 2:
        raise ComputationError("no threshold exists: histogram has a single occupied gray level")
    return occ


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def isodata_threshold(h: Histogram256, epsilon: float = 0.5) -> ThresholdResult:
    """Ridler-Calvard iterative selection.

    Starts at the midpoint of the occupied gray range and moves the threshold
    to the mean of the two class means (low class: value <= T) until the step
    is below ``epsilon``. After ``ISODATA_MAX_ITER`` steps the last threshold
    is returned with ``converged=False``.
    """
    occ = _require_two_levels(h)
    counts = h.counts.astype(np.float64)
    levels = np.arange(256, dtype=np.float64)
    cum_n = np.cumsum(counts)
    cum_s = np.cumsum(counts * levels)
    total_n, total_s = cum_n[-1], cum_s[-1]

    t = (occ[0] + occ[-1]) / 2.0
    for it in range(1, ISODATA_MAX_ITER + 1):
        k = int(math.floor(t))
        n_lo = cum_n[k] if k >= 0 else 0.0
        n_hi = total_n - n_lo
        if n_lo == 0 or n_hi == 0:
            raise ComputationError(f"degenerate partition at T={t:.3f}")
        mu_lo = cum_s[k] / n_lo
        mu_hi = (total_s - cum_s[k]) / n_hi
        t_new = (mu_lo + mu_hi) / 2.0
        if abs(t_new - t) < epsilon:
            return ThresholdResult(_round_half_up(t_new), it, True)
        t = t_new
    return ThresholdResult(_round_half_up(t), ISODATA_MAX_ITER, False)


def otsu_threshold(h: Histogram256) -> ThresholdResult:
    """Threshold maximising between-class variance (low class: value <= T).

    Scores are compared exactly via the integer form
    (N*S0 - n0*S)^2 / (n0*n1), so ties resolve to the smallest T.
    """
    _require_two_levels(h)
    counts = [int(c) for c in h.counts]
    total_n = sum(counts)
    total_s = sum(v * c for v, c in enumerate(counts))
    best_t, best = None, None
    n0 = s0 = 0
    for t in range(255):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        score = Fraction((total_n * s0 - n0 * total_s) ** 2, n0 * n1)
        if best is None or score > best:
            best_t, best = t, score
    return ThresholdResult(best_t)


def max_entropy_threshold(h: Histogram256) -> ThresholdResult:
    """Kapur's threshold: maximise the summed Shannon entropies of both classes.

    Scores within a relative 1e-12 of the maximum count as ties and the
    smallest such T is returned.
    """
    _require_two_levels(h)
    p = h.counts.astype(np.float64) / h.total
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    cum_p = np.cumsum(p)
    cum_plogp = np.cumsum(plogp)
    p_lo = cum_p[:-1]
    p_hi = 1.0 - p_lo
    valid = (np.cumsum(h.counts)[:-1] > 0) & (np.cumsum(h.counts)[:-1] < h.total)
    with np.errstate(divide="ignore", invalid="ignore"):
        h_lo = np.log(p_lo) - cum_plogp[:-1] / p_lo
        h_hi = np.log(p_hi) - (cum_plogp[-1] - cum_plogp[:-1]) / p_hi
    score = np.where(valid, h_lo + h_hi, -np.inf)
    best = score.max()
    tol = _ENTROPY_TIE_RTOL * max(1.0, abs(best))
    return ThresholdResult(int(np.flatnonzero(score >= best - tol)[0]))


def binarize(img: GrayRaster, t: int, polarity: str = "above") -> BinaryMask:
    """``above``: foreground where value > t. ``below``: foreground where value <= t."""
    if not 0 <= t <= 255:
        raise DataError(f"threshold must lie in [0, 255], got {t}")
    if polarity == "above":
        bits = img.values > t
    elif polarity == "below":
        bits = img.values <= t
    else:
        raise DataError(f"polarity must be 'above' or 'below', got {polarity!r}")
    return BinaryMask(bits, img.mm_per_px)


def area_mm2(mask: BinaryMask) -> float:
    """Foreground area in mm^2: pixel count times the pixel footprint."""
    if mask.mm_per_px is None:
        raise DataError("mask has no physical scale (mm_per_px)")
    return mask.count * mask.mm_per_px**2
