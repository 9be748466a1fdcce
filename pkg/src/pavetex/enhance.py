"""Brightness normalisation (CLAHE) and Gaussian denoising."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pavetex.errors import DataError
from pavetex.raster import GrayRaster, round_to_u8


@dataclass(frozen=True)
class ClaheParams:
    """Tile grid, clip limit and histogram resolution for CLAHE.

    ``clip_limit`` is a multiple of the uniform bin height, i.e. a tile of
    ``n`` pixels clips every bin at ``clip_limit * n / bins`` counts.
    """

    tiles_x: int = 8
    tiles_y: int = 8
    clip_limit: float = 2.0
    bins: int = 256

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise DataError("CLAHE tile counts must be >= 1")
        if not self.clip_limit >= 1.0:
            raise DataError(f"CLAHE clip limit must be >= 1.0, got {self.clip_limit}")
        if not 2 <= self.bins <= 256:
            raise DataError(f"CLAHE bin count must lie in [2, 256], got {self.bins}")


@dataclass(frozen=True)
class GaussianParams:
    sigma: float = 1.0
    radius: int = 3

    def __post_init__(self):
        if not self.sigma > 0:
            raise DataError(f"Gaussian sigma must be positive, got {self.sigma}")
        if self.radius < 1 or self.radius < math.ceil(2 * self.sigma):
            raise DataError(
                f"Gaussian radius {self.radius} must be >= max(1, ceil(2*sigma)) = "
                f"{max(1, math.ceil(2 * self.sigma))}"
            )


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return (np.arange(tiles + 1) * n) // tiles


def clip_histogram(hist: np.ndarray, clip: float) -> np.ndarray:
    """Clip bins at ``clip`` and spread the excess evenly over all bins (one pass)."""
    hist = hist.astype(np.float64)
    excess = np.maximum(hist - clip, 0.0).sum()
    return np.minimum(hist, clip) + excess / hist.size


def equalization_lut(hist: np.ndarray, total: float) -> np.ndarray:
    """Mid-rank cumulative mapping of each bin onto [0, 255].

    A bin maps to the cumulative mass below it plus half its own mass, so a
    histogram that is uniform after clipping yields a near-identity mapping.
    """
    below = np.cumsum(hist) - hist
    return 255.0 * (below + 0.5 * hist) / total


def _blend_axis(n: int, edges: np.ndarray):
    # Interpolation between tile centres; clamped outside the outermost centres.
    centres = 0.5 * (edges[:-1] + edges[1:])
    pos = np.arange(n, dtype=np.float64) + 0.5
    hi = np.searchsorted(centres, pos, side="right")
    lo = np.clip(hi - 1, 0, centres.size - 1)
    hi = np.clip(hi, 0, centres.size - 1)
    span = centres[hi] - centres[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(span > 0, (pos - centres[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo, hi, np.clip(w, 0.0, 1.0)


def clahe_float(img: GrayRaster, params: ClaheParams) -> np.ndarray:
    """CLAHE output before the final rounding to 8 bits."""
    v = img.values
    h, w = v.shape
    if h < params.tiles_y or w < params.tiles_x:
        raise DataError(
            f"image {w}x{h} is smaller than the {params.tiles_x}x{params.tiles_y} tile grid"
        )
    bins = params.bins
    b = (v.astype(np.intp) * bins) >> 8
    ye = _tile_edges(h, params.tiles_y)
    xe = _tile_edges(w, params.tiles_x)

    luts = np.empty((params.tiles_y, params.tiles_x, bins), dtype=np.float64)
    for i in range(params.tiles_y):
        for j in range(params.tiles_x):
            tile = b[ye[i] : ye[i + 1], xe[j] : xe[j + 1]]
            n = tile.size
            hist = np.bincount(tile.ravel(), minlength=bins)
            clipped = clip_histogram(hist, params.clip_limit * n / bins)
            luts[i, j] = equalization_lut(clipped, n)

    yl, yh, wy = _blend_axis(h, ye)
    xl, xh, wx = _blend_axis(w, xe)
    wy = wy[:, None]
    wx = wx[None, :]
    top = luts[yl[:, None], xl[None, :], b] * (1.0 - wx) + luts[yl[:, None], xh[None, :], b] * wx
    bottom = luts[yh[:, None], xl[None, :], b] * (1.0 - wx) + luts[yh[:, None], xh[None, :], b] * wx
    return top * (1.0 - wy) + bottom * wy


def clahe(img: GrayRaster, params: ClaheParams = ClaheParams()) -> GrayRaster:
    """Contrast-limited adaptive histogram equalisation.

    Each tile's histogram is clipped, the clipped mass is redistributed, and
    the resulting per-tile mappings are blended bilinearly between tile
    centres. Dimensions and physical scale are preserved.
    """
    return img.with_values(round_to_u8(clahe_float(img, params)))


def gaussian_kernel_1d(params: GaussianParams) -> np.ndarray:
    k = np.arange(-params.radius, params.radius + 1, dtype=np.float64)
    g = np.exp(-(k * k) / (2.0 * params.sigma**2))
    return g / g.sum()


def gaussian_kernel(params: GaussianParams = GaussianParams()) -> np.ndarray:
    """Square (2r+1)^2 kernel of exp(-(x^2+y^2)/(2 sigma^2)), normalised to sum 1."""
    k = np.arange(-params.radius, params.radius + 1, dtype=np.float64)
    x2 = k[None, :] ** 2 + k[:, None] ** 2
    g = np.exp(-x2 / (2.0 * params.sigma**2))
    return g / g.sum()


def _correlate_axis(a: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = kernel.size // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    padded = np.pad(a, pad, mode="reflect")
    n = a.shape[axis]
    out = np.zeros_like(a, dtype=np.float64)
    for k, wk in enumerate(kernel):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(k, k + n)
        out += wk * padded[tuple(sl)]
    return out


def gaussian_smooth_float(values: np.ndarray, params: GaussianParams) -> np.ndarray:
    """Separable Gaussian convolution with mirror borders, no rounding."""
    g = gaussian_kernel_1d(params)
    a = np.asarray(values, dtype=np.float64)
    return _correlate_axis(_correlate_axis(a, g, axis=1), g, axis=0)


def gaussian_smooth(img: GrayRaster, params: GaussianParams = GaussianParams()) -> GrayRaster:
    """Convolve with the Gaussian kernel (separably, mirror borders) and round to 8 bits."""
    return img.with_values(round_to_u8(gaussian_smooth_float(img.values, params)))
