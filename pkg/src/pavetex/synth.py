"""Seeded synthetic textures used as ground-truth fixtures.

Randomness comes from a counter-based SplitMix64 generator so that every
fixture is a pure function of its parameters and seed, identical across
platforms and numpy versions:

    key     = mix64(seed) XOR (stream * 0xD1B54A32D192ED03)      (mod 2**64)
    word_i  = mix64(key + (i + 1) * 0x9E3779B97F4A7C15)           (i = 0, 1, ...)
    mix64(z): z = (z ^ z>>30) * 0xBF58476D1CE4E5B9
              z = (z ^ z>>27) * 0x94D049BB133111EB
              return z ^ z>>31

Uniforms are ``(word >> 11) * 2**-53``; normals use Box-Muller on
consecutive pairs of uniforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from pavetex.errors import DataError
from pavetex.raster import GrayRaster, resize_bilinear, round_to_u8
from pavetex.segment import BinaryMask

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STREAM_MULT = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Stream:
    """Sequential view over the counter-based generator for one (seed, stream) pair."""

    def __init__(self, seed: int, stream: int = 0):
        seed_word = np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        with np.errstate(over="ignore"):
            self._key = mix64(seed_word)[0] ^ (np.uint64(stream & 0xFFFFFFFFFFFFFFFF) * _STREAM_MULT)
        self._counter = 0

    def words(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return mix64(self._key + idx * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        return (self.words(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def integers(self, lo: int, hi: int, n: int) -> np.ndarray:
        """Integers in the closed range [lo, hi]."""
        return lo + np.floor(self.uniform(n) * (hi - lo + 1)).astype(np.int64)

    def normal(self, n: int) -> np.ndarray:
        u = self.uniform(2 * n)
        u1, u2 = u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * math.pi * u2)


def _check_dims(dims):
    w, h = dims
    if w <= 0 or h <= 0:
        raise DataError(f"dimensions must be positive, got {dims}")
    return int(w), int(h)


def add_noise(img: GrayRaster, sigma: float, seed: int) -> GrayRaster:
    """Additive Gaussian noise overlay, rounded and clamped to 8 bits."""
    if sigma <= 0:
        return img
    noise = Stream(seed, stream=99).normal(img.values.size).reshape(img.values.shape)
    return img.with_values(round_to_u8(img.values + sigma * noise))


def gen_bimodal(dims, low: int, high: int, fraction_high: float, seed: int) -> GrayRaster:
    """Independent pixels: ``high`` with probability ``fraction_high``, else ``low``."""
    w, h = _check_dims(dims)
    if not (0 <= low < high <= 255):
        raise DataError(f"need 0 <= low < high <= 255, got low={low}, high={high}")
    if not 0.0 < fraction_high < 1.0:
        raise DataError(f"fraction_high must lie strictly inside (0, 1), got {fraction_high}")
    u = Stream(seed, stream=1).uniform(w * h).reshape(h, w)
    return GrayRaster(np.where(u < fraction_high, high, low).astype(np.uint8))


@dataclass(frozen=True)
class DiskFieldSpec:
    """Bright caps on a dark background, optionally sitting on larger aggregate bodies.

    With ``body_gray`` set, every disk is an aggregate body of full radius
    drawn in ``body_gray`` and its cap is a concentric disk of radius
    ``r * cap_fraction`` drawn in ``cap_gray``.
    """

    dims: tuple
    n_disks: int
    radius_range: tuple
    cap_gray: int = 220
    bg_gray: int = 40
    body_gray: Optional[int] = None
    cap_fraction: float = 1.0
    mm_per_px: Optional[float] = None
    allow_overlap: bool = True
    noise_sigma: float = 0.0

    def __post_init__(self):
        _check_dims(self.dims)
        if self.n_disks < 0:
            raise DataError("n_disks must be non-negative")
        rmin, rmax = self.radius_range
        if not 1 <= rmin <= rmax:
            raise DataError(f"invalid radius range {self.radius_range}")
        w, h = self.dims
        if self.n_disks and 2 * rmax + 1 > min(w, h):
            raise DataError(f"disks of radius {rmax} do not fit in a {w}x{h} image")
        if not self.cap_gray > self.bg_gray:
            raise DataError("cap_gray must be brighter than bg_gray")
        if self.body_gray is not None and not self.bg_gray < self.body_gray < self.cap_gray:
            raise DataError("body_gray must lie strictly between bg_gray and cap_gray")
        if not 0.0 <= self.cap_fraction <= 1.0:
            raise DataError("cap_fraction must lie in [0, 1]")


_MAX_PLACEMENT_TRIES = 1000


def _layout(spec: DiskFieldSpec, seed: int):
    w, h = spec.dims
    rmin, rmax = spec.radius_range
    rng = Stream(seed, stream=2)
    disks = []
    for _ in range(spec.n_disks):
        for _attempt in range(_MAX_PLACEMENT_TRIES):
            r = int(rng.integers(rmin, rmax, 1)[0])
            cx = int(rng.integers(r, w - 1 - r, 1)[0])
            cy = int(rng.integers(r, h - 1 - r, 1)[0])
            if spec.allow_overlap or all(
                (cx - ox) ** 2 + (cy - oy) ** 2 > (r + orad + 1) ** 2 for ox, oy, orad in disks
            ):
                disks.append((cx, cy, r))
                break
        else:
            raise DataError(
                f"impossible placement: could not place disk {len(disks) + 1} of {spec.n_disks} "
                f"without overlap after {_MAX_PLACEMENT_TRIES} tries"
            )
    return disks


def _stamp(canvas: np.ndarray, cx: int, cy: int, radius: float) -> None:
    if radius <= 0:
        return
    r = int(math.floor(radius))
    y0, y1 = max(cy - r, 0), min(cy + r + 1, canvas.shape[0])
    x0, x1 = max(cx - r, 0), min(cx + r + 1, canvas.shape[1])
    yy, xx = np.ogrid[y0:y1, x0:x1]
    canvas[y0:y1, x0:x1] |= (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius


def _render(spec: DiskFieldSpec, disks, cap_scale: float, seed: int):
    w, h = spec.dims
    caps = np.zeros((h, w), dtype=bool)
    img = np.full((h, w), spec.bg_gray, dtype=np.uint8)
    if spec.body_gray is not None:
        bodies = np.zeros((h, w), dtype=bool)
        for cx, cy, r in disks:
            _stamp(bodies, cx, cy, r)
        img[bodies] = spec.body_gray
    for cx, cy, r in disks:
        _stamp(caps, cx, cy, r * cap_scale)
    img[caps] = spec.cap_gray
    out = GrayRaster(img, spec.mm_per_px)
    if spec.noise_sigma > 0:
        out = add_noise(out, spec.noise_sigma, seed)
    return out, int(caps.sum())


def render_disk_field(spec: DiskFieldSpec, seed: int):
    """Render ``spec``; returns (image, true cap pixel count, overlaps counted once)."""
    return _render(spec, _layout(spec, seed), spec.cap_fraction, seed)


def gen_disk_field(dims, n_disks: int, radius_range, cap_gray: int, bg_gray: int, seed: int, **extra):
    """Bright disks on a dark background plus the ground-truth disk pixel count."""
    spec = DiskFieldSpec(tuple(dims), n_disks, tuple(radius_range), cap_gray, bg_gray, **extra)
    return render_disk_field(spec, seed)


def gen_polish_sequence(base: DiskFieldSpec, wear_fractions: Sequence[float], seed: int):
    """One image per wear level: every cap radius is scaled by (1 - f).

    The disk layout (and any aggregate bodies) is shared across the sequence.
    Returns a list of (image, true cap pixel count).
    """
    fr = [float(f) for f in wear_fractions]
    if not fr or any(not 0.0 <= f < 1.0 for f in fr) or any(b <= a for a, b in zip(fr, fr[1:])):
        raise DataError("wear fractions must be strictly ascending within [0, 1)")
    disks = _layout(base, seed)
    return [_render(base, disks, base.cap_fraction * (1.0 - f), seed) for f in fr]


def gen_sierpinski(depth: int) -> BinaryMask:
    """Sierpinski carpet of side 3**depth; True marks retained cells."""
    if not 1 <= depth <= 6:
        raise DataError(f"carpet depth must lie in [1, 6], got {depth}")
    n = 3**depth
    idx = np.arange(n)
    keep = np.ones((n, n), dtype=bool)
    for _ in range(depth):
        keep &= ~(((idx % 3) == 1)[:, None] & ((idx % 3) == 1)[None, :])
        idx = idx // 3
    return BinaryMask(keep)


def value_noise(dims, cell_px: int, seed: int) -> np.ndarray:
    """Random lattice in [-1, 1) every ``cell_px`` pixels, bilinearly interpolated.

    ``cell_px=1`` gives white noise; larger cells give coarser bumps.
    """
    w, h = _check_dims(dims)
    if cell_px < 1:
        raise DataError("cell_px must be >= 1")
    if cell_px == 1:
        return 2.0 * Stream(seed, stream=3).uniform(w * h).reshape(h, w) - 1.0
    gw, gh = -(-w // cell_px) + 1, -(-h // cell_px) + 1
    lattice = 2.0 * Stream(seed, stream=3).uniform(gw * gh).reshape(gh, gw) - 1.0
    return resize_bilinear(lattice, (gw - 1) * cell_px, (gh - 1) * cell_px)[:h, :w]


def gen_value_noise(dims, cell_px: int, mean: float, amplitude: float, seed: int,
                    mm_per_px: Optional[float] = None) -> GrayRaster:
    field = value_noise(dims, cell_px, seed)
    return GrayRaster(round_to_u8(mean + amplitude * field), mm_per_px)


def with_cap_fraction(spec: DiskFieldSpec, fraction: float) -> DiskFieldSpec:
    return replace(spec, cap_fraction=fraction)
