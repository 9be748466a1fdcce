"""Literature comparison indicators: aggregate ratio, wavelet macrotexture index, fractal dimension."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from pavetex.errors import ComputationError, DataError
from pavetex.raster import GrayRaster
from pavetex.segment import BinaryMask

DEFAULT_SMI_BAND_MM = (0.5, 50.0)


class DegenerateFitWarning(UserWarning):
    """Box-count curve is flat, so no dimension can be fitted."""


def aggregate_ratio(mask: BinaryMask) -> float:
    """Fraction of the surface covered by foreground."""
    if mask.bits.size == 0:
        raise DataError("aggregate ratio of an empty mask is undefined")
    return mask.count / mask.bits.size


@dataclass
class WaveletPyramid:
    """Haar decomposition; ``details[l-1]`` holds the (H, V, D) bands of level l."""

    details: list
    approx: np.ndarray
    shapes: list = field(default_factory=list)
    mm_per_px: Optional[float] = None

    @property
    def levels(self) -> int:
        return len(self.details)

    def energy(self) -> float:
        e = float(np.sum(self.approx**2))
        for bands in self.details:
            e += sum(float(np.sum(b**2)) for b in bands)
        return e


def _haar_step(a: np.ndarray):
    h, w = a.shape
    if h % 2:
        a = np.vstack([a, a[-1:, :]])
    if w % 2:
        a = np.hstack([a, a[:, -1:]])
    p00, p01 = a[0::2, 0::2], a[0::2, 1::2]
    p10, p11 = a[1::2, 0::2], a[1::2, 1::2]
    ll = (p00 + p01 + p10 + p11) / 2.0
    hd = (p00 + p01 - p10 - p11) / 2.0
    vd = (p00 - p01 + p10 - p11) / 2.0
    dd = (p00 - p01 - p10 + p11) / 2.0
    return ll, (hd, vd, dd)


def _haar_step_inverse(ll, bands, shape):
    hd, vd, dd = bands
    out = np.empty((2 * ll.shape[0], 2 * ll.shape[1]), dtype=np.float64)
    out[0::2, 0::2] = (ll + hd + vd + dd) / 2.0
    out[0::2, 1::2] = (ll + hd - vd - dd) / 2.0
    out[1::2, 0::2] = (ll - hd + vd - dd) / 2.0
    out[1::2, 1::2] = (ll - hd - vd + dd) / 2.0
    return out[: shape[0], : shape[1]]


def haar_dwt2(img: Union[GrayRaster, np.ndarray], levels: int) -> WaveletPyramid:
    """Orthonormal 2-D Haar analysis, recursing on the approximation band.

    Odd dimensions are extended by repeating the last row/column before a
    step, so energy is conserved exactly only when both dimensions are
    divisible by ``2**levels``.
    """
    if isinstance(img, GrayRaster):
        a, scale = img.values.astype(np.float64), img.mm_per_px
    else:
        a, scale = np.asarray(img, dtype=np.float64), None
    if levels < 1:
        raise DataError("wavelet levels must be >= 1")
    if min(a.shape) < 2**levels:
        raise DataError(f"{levels} levels need both dimensions >= {2**levels}, got {a.shape}")
    details, shapes = [], []
    for _ in range(levels):
        shapes.append(a.shape)
        a, bands = _haar_step(a)
        details.append(bands)
    return WaveletPyramid(details, a, shapes, scale)


def haar_idwt2(p: WaveletPyramid) -> np.ndarray:
    a = p.approx
    for bands, shape in zip(reversed(p.details), reversed(p.shapes)):
        a = _haar_step_inverse(a, bands, shape)
    return a


def level_energies(p: WaveletPyramid) -> list[float]:
    """Mean squared detail coefficient per level, pooled over H, V and D."""
    out = []
    for bands in p.details:
        total = sum(float(np.sum(b * b)) for b in bands)
        out.append(total / sum(b.size for b in bands))
    return out


def level_scale_mm(level: int, mm_per_px: float) -> float:
    return mm_per_px * 2**level


def max_levels(shape, mm_per_px: Optional[float], band=DEFAULT_SMI_BAND_MM) -> int:
    """Deepest level the image supports whose scale does not exceed the band's upper edge."""
    n = int(math.floor(math.log2(min(shape))))
    if mm_per_px is not None:
        while n > 1 and level_scale_mm(n, mm_per_px) > band[1]:
            n -= 1
    return max(n, 1)


def smi(
    energies: Sequence[float],
    mm_per_px: Optional[float] = None,
    band=DEFAULT_SMI_BAND_MM,
    weights: Optional[Union[Sequence[float], Mapping[int, float]]] = None,
) -> float:
    """Weighted sum of level energies over the macrotexture band.

    A level ``l`` (1-based) takes part when ``mm_per_px * 2**l`` lies inside
    ``band`` (mm). Without a physical scale every level takes part. Weights
    default to 1 and may be given per level as a sequence or a mapping.
    """
    lo, hi = band
    total, used = 0.0, 0
    for level, e in enumerate(energies, start=1):
        if mm_per_px is not None and not lo <= level_scale_mm(level, mm_per_px) <= hi:
            continue
        if weights is None:
            w = 1.0
        elif isinstance(weights, Mapping):
            w = float(weights.get(level, 0.0))
        else:
            w = float(weights[level - 1])
        total += w * e
        used += 1
    if used == 0:
        raise ComputationError(f"no wavelet level falls inside the {lo}-{hi} mm macrotexture band")
    return total


@dataclass(frozen=True)
class BoxCountCurve:
    sizes: tuple
    counts: tuple

    def to_csv_rows(self):
        return [("box_size_px", "occupied_count")] + list(zip(self.sizes, self.counts))


def default_box_sizes(width: int, height: int) -> list[int]:
    """Dyadic sizes 2, 4, 8, ... up to min(width, height) / 4."""
    limit = min(width, height) / 4
    sizes, s = [], 2
    while s <= limit:
        sizes.append(s)
        s *= 2
    return sizes


def box_count(mask: BinaryMask, sizes: Optional[Sequence[int]] = None) -> BoxCountCurve:
    """Occupied ``e x e`` cells on an origin-anchored grid, partial edge cells included."""
    bits = mask.bits
    if not bits.any():
        raise ComputationError("no foreground to count")
    if sizes is None:
        sizes = default_box_sizes(mask.width, mask.height)
    sizes = [int(s) for s in sizes]
    if any(s <= 0 for s in sizes) or sizes != sorted(set(sizes)):
        raise DataError("box sizes must be positive, distinct and ascending")
    h, w = bits.shape
    counts = []
    for s in sizes:
        ny, nx = -(-h // s), -(-w // s)
        padded = np.zeros((ny * s, nx * s), dtype=bool)
        padded[:h, :w] = bits
        counts.append(int(padded.reshape(ny, s, nx, s).any(axis=(1, 3)).sum()))
    return BoxCountCurve(tuple(sizes), tuple(counts))


def fractal_dimension(curve: BoxCountCurve) -> float:
    """Least-squares slope of log N(e) against log(1/e).

    A flat curve (all counts equal) returns 0.0 and emits DegenerateFitWarning.
    """
    if len(curve.sizes) < 3 or len(set(curve.sizes)) < 3:
        raise DataError("fractal dimension needs at least 3 distinct box sizes")
    if len(set(curve.counts)) == 1:
        warnings.warn("box counts are constant; dimension reported as 0", DegenerateFitWarning)
        return 0.0
    x = -np.log(np.asarray(curve.sizes, dtype=np.float64))
    y = np.log(np.asarray(curve.counts, dtype=np.float64))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)
