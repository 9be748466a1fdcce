"""Raster containers, decoding, grayscale conversion and ROI normalisation."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from pavetex.errors import DataError

SUPPORTED_FORMATS = ("PNG", "JPEG", "PPM")

# Eq. weights expressed in thousandths so the weighted sum stays in integers.
_GRAY_WEIGHTS = (299, 587, 114)


@dataclass(frozen=True)
class ColorRaster:
    """An RGB image stored as an (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DataError(f"color raster must be HxWx3, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.min(initial=0) < 0 or px.max(initial=0) > 255:
                raise DataError("color channel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class GrayRaster:
    """8-bit luminance grid with an optional physical pixel pitch (mm/px)."""

    values: np.ndarray
    mm_per_px: Optional[float] = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise DataError(f"gray raster must be 2-D, got shape {v.shape}")
        if v.dtype != np.uint8:
            if v.size and (v.min() < 0 or v.max() > 255):
                raise DataError("gray values must lie in [0, 255]")
            v = v.astype(np.uint8)
        if self.mm_per_px is not None and not self.mm_per_px > 0:
            raise DataError(f"mm_per_px must be positive, got {self.mm_per_px}")
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def with_values(self, values: np.ndarray) -> "GrayRaster":
        """Return a raster carrying ``values`` and this raster's scale."""
        return GrayRaster(values, self.mm_per_px)


@dataclass(frozen=True)
class RoiSpec:
    """Source rectangle plus the physical size and pixel grid it maps onto.

    ``width_px``/``height_px`` default to the remainder of the source image
    right of ``x0`` and below ``y0``.
    """

    x0: int = 0
    y0: int = 0
    width_px: Optional[int] = None
    height_px: Optional[int] = None
    roi_width_mm: float = 100.0
    roi_height_mm: float = 75.0
    target_width_px: int = 3400
    target_height_px: int = 2550

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0:
            raise DataError("ROI offsets must be non-negative")
        for name in ("width_px", "height_px"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise DataError(f"ROI {name} must be positive")
        if self.roi_width_mm <= 0 or self.roi_height_mm <= 0:
            raise DataError("ROI physical dimensions must be positive")
        if self.target_width_px <= 0 or self.target_height_px <= 0:
            raise DataError("ROI target dimensions must be positive")
        mm_aspect = self.roi_width_mm / self.roi_height_mm
        px_aspect = self.target_width_px / self.target_height_px
        if abs(px_aspect / mm_aspect - 1.0) > 1e-3:
            raise DataError(
                f"target aspect {px_aspect:.5f} differs from ROI aspect {mm_aspect:.5f} by more than 0.1%"
            )

    @property
    def mm_per_px(self) -> float:
        return self.roi_width_mm / self.target_width_px


def load_image(path) -> ColorRaster:
    """Decode a PNG, JPEG or PPM/PGM file into an RGB raster."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    try:
        with Image.open(path) as im:
            if im.format not in SUPPORTED_FORMATS:
                raise DataError(f"unsupported format {im.format!r}: {path}")
            im.load()
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise DataError(f"unsupported format: {path}") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"corrupt image stream: {path} ({exc})") from exc
    return ColorRaster(rgb)


def save_gray(img: GrayRaster, path) -> None:
    """Write a grayscale raster; the suffix picks the format (.png, .pgm)."""
    Image.fromarray(img.values, mode="L").save(os.fspath(path))


def to_grayscale(img: ColorRaster) -> GrayRaster:
    """Weighted-average luminance, rounded half away from zero.

    Computed in exact integer arithmetic: (299 R + 587 G + 114 B + 500) // 1000.
    """
    px = img.pixels.astype(np.int32)
    wr, wg, wb = _GRAY_WEIGHTS
    acc = wr * px[..., 0] + wg * px[..., 1] + wb * px[..., 2]
    gray = (acc + 500) // 1000
    return GrayRaster(np.clip(gray, 0, 255).astype(np.uint8))


def _bilinear_axis(n_src: int, n_dst: int):
    # Half-pixel-centre convention: dst centre j maps to src coord (j + .5) * s - .5.
    scale = n_src / n_dst
    coords = (np.arange(n_dst, dtype=np.float64) + 0.5) * scale - 0.5
    coords = np.clip(coords, 0.0, n_src - 1)
    lo = np.floor(coords).astype(np.intp)
    hi = np.minimum(lo + 1, n_src - 1)
    frac = coords - lo
    return lo, hi, frac


def resize_bilinear(values: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resample of a 2-D array to ``height`` x ``width`` (float64 out)."""
    src = np.asarray(values, dtype=np.float64)
    h, w = src.shape
    ylo, yhi, fy = _bilinear_axis(h, height)
    xlo, xhi, fx = _bilinear_axis(w, width)
    rows = src[ylo, :] * (1.0 - fy)[:, None] + src[yhi, :] * fy[:, None]
    return rows[:, xlo] * (1.0 - fx)[None, :] + rows[:, xhi] * fx[None, :]


def round_to_u8(values: np.ndarray) -> np.ndarray:
    """Round half away from zero (inputs are non-negative) and clamp to uint8."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def crop_resize(img: GrayRaster, roi: RoiSpec) -> GrayRaster:
    """Crop the ROI rectangle and resample it onto the target pixel grid."""
    w = roi.width_px if roi.width_px is not None else img.width - roi.x0
    h = roi.height_px if roi.height_px is not None else img.height - roi.y0
    if w <= 0 or h <= 0 or roi.x0 + w > img.width or roi.y0 + h > img.height:
        raise DataError(
            f"ROI ({roi.x0}, {roi.y0}, {w}x{h}) exceeds image bounds {img.width}x{img.height}"
        )
    patch = img.values[roi.y0 : roi.y0 + h, roi.x0 : roi.x0 + w]
    if (w, h) == (roi.target_width_px, roi.target_height_px):
        out = patch.copy()
    else:
        out = round_to_u8(resize_bilinear(patch, roi.target_width_px, roi.target_height_px))
    return GrayRaster(out, roi.mm_per_px)
