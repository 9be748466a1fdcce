import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pavetex.enhance import ClaheParams, GaussianParams, clahe, gaussian_kernel, gaussian_smooth
from pavetex.errors import DataError
from pavetex.raster import GrayRaster

NO_CLIP = 1e9


def global_he_oracle(values):
    """Mid-rank histogram equalisation, computed per pixel from sorted ranks."""
    flat = np.sort(values.ravel())
    n = flat.size
    less = np.searchsorted(flat, values, side="left")
    equal = np.searchsorted(flat, values, side="right") - less
    return np.floor(255.0 * (less + 0.5 * equal) / n + 0.5).astype(np.uint8)


def chi2_to_uniform(values):
    h = np.bincount(values.ravel(), minlength=256).astype(float)
    e = h.sum() / 256
    return float(np.sum((h - e) ** 2 / e))


def _mirror(i, n):
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * n - 2 - i
    return i


def direct_conv_oracle(values, params):
    """Full 2-D convolution with an explicitly evaluated Gaussian, mirror borders."""
    r, s = params.radius, params.sigma
    w = {(dy, dx): math.exp(-(dx * dx + dy * dy) / (2 * s * s)) for dy in range(-r, r + 1) for dx in range(-r, r + 1)}
    total = sum(w.values())
    h, wd = values.shape
    out = np.empty((h, wd))
    for y in range(h):
        for x in range(wd):
            acc = 0.0
            for (dy, dx), wt in w.items():
                acc += wt * values[_mirror(y + dy, h), _mirror(x + dx, wd)]
            out[y, x] = acc / total
    return np.floor(out + 0.5)


class TestClaheParams:
    @pytest.mark.parametrize("kw", [{"clip_limit": 0.5}, {"tiles_x": 0}, {"bins": 1}, {"bins": 300}])
    def test_invalid(self, kw):
        with pytest.raises(DataError):
            ClaheParams(**kw)

    def test_defaults(self):
        p = ClaheParams()
        assert (p.tiles_x, p.tiles_y, p.clip_limit, p.bins) == (8, 8, 2.0, 256)


class TestClahe:
    @pytest.mark.parametrize("v", [0, 1, 37, 100, 128, 200, 254, 255])
    def test_constant_maps_to_single_level(self, v):
        out = clahe(GrayRaster(np.full((64, 48), v, dtype=np.uint8))).values
        assert np.unique(out).size == 1
        assert abs(int(out[0, 0]) - v) <= 1

    @pytest.mark.parametrize("v", [0, 90, 255])
    def test_unclipped_constant_goes_to_mid_gray(self, v):
        # without clipping the single occupied bin takes mid-rank 127.5
        out = clahe(GrayRaster(np.full((16, 16), v, dtype=np.uint8)), ClaheParams(2, 2, NO_CLIP)).values
        assert np.unique(out).tolist() == [128]

    def test_single_tile_without_clipping_is_global_he(self):
        v = np.random.default_rng(5).integers(0, 256, (40, 50), dtype=np.uint8)
        out = clahe(GrayRaster(v), ClaheParams(1, 1, NO_CLIP)).values
        assert np.array_equal(out, global_he_oracle(v))

    def test_single_tile_skewed_image_is_global_he(self):
        v = (np.random.default_rng(6).gamma(2.0, 12.0, (64, 64))).clip(0, 255).astype(np.uint8)
        out = clahe(GrayRaster(v), ClaheParams(1, 1, NO_CLIP)).values
        assert np.array_equal(out, global_he_oracle(v))

    def test_two_tone_contrast(self):
        v = np.array([[10, 20] * 8] * 16, dtype=np.uint8)
        out = clahe(GrayRaster(v), ClaheParams(1, 1, NO_CLIP)).values
        lo, hi = int(out[0, 0]), int(out[0, 1])
        # CDF mid-ranks 1/4 and 3/4 of 255.
        assert (lo, hi) == (64, 191)
        assert hi - lo > 20 - 10

    def test_preserves_scale_and_dims(self):
        img = GrayRaster(np.random.default_rng(1).integers(0, 256, (33, 47), dtype=np.uint8), 0.05)
        out = clahe(img, ClaheParams(3, 4))
        assert out.values.shape == (33, 47) and out.mm_per_px == 0.05

    def test_too_small_for_grid(self):
        with pytest.raises(DataError, match="smaller than"):
            clahe(GrayRaster(np.zeros((4, 4), dtype=np.uint8)), ClaheParams(8, 8))

    def test_deterministic(self):
        img = GrayRaster(np.random.default_rng(2).integers(0, 256, (80, 96), dtype=np.uint8))
        assert np.array_equal(clahe(img).values, clahe(img).values)

    def test_reduces_chi_square_on_skewed_image(self):
        v = np.random.default_rng(9).gamma(2.0, 15.0, (256, 256)).clip(0, 255).astype(np.uint8)
        out = clahe(GrayRaster(v)).values
        assert chi2_to_uniform(out) < chi2_to_uniform(v)

    def test_fewer_bins(self):
        v = np.random.default_rng(4).integers(0, 256, (64, 64), dtype=np.uint8)
        out = clahe(GrayRaster(v), ClaheParams(2, 2, 2.0, 16)).values
        # pixels in one bin at one position share an output value
        assert out.shape == v.shape and out.dtype == np.uint8

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.uint8, (64, 64), elements=st.integers(0, 255)))
    def test_rank_preserved_where_one_tile_mapping_applies(self, v):
        # With an 8x8 grid on 64x64, pixels 0..3 in each axis lie before the
        # first tile centre (4.0) and are mapped by tile (0, 0) alone.
        out = clahe(GrayRaster(v)).values
        a = v[:4, :4].ravel().astype(int)
        b = out[:4, :4].ravel().astype(int)
        order = np.argsort(a, kind="stable")
        assert (np.diff(b[order]) >= 0).all()

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.uint8, (20, 30), elements=st.integers(0, 255)))
    def test_rank_preserved_single_tile(self, v):
        out = clahe(GrayRaster(v), ClaheParams(1, 1, 2.0)).values.astype(int)
        order = np.argsort(v.ravel(), kind="stable")
        assert (np.diff(out.ravel()[order]) >= 0).all()


class TestGaussianKernel:
    def test_sigma1_radius2(self):
        k = gaussian_kernel(GaussianParams(1.0, 2))
        assert k.shape == (5, 5)
        oracle = 1.0 / sum(math.exp(-(x * x + y * y) / 2.0) for x in range(-2, 3) for y in range(-2, 3))
        assert k[2, 2] == pytest.approx(oracle, rel=1e-12)
        assert k[2, 2] == pytest.approx(0.1621, abs=5e-5)

    @given(st.floats(0.2, 6.0), st.integers(0, 4))
    def test_sums_to_one(self, sigma, extra):
        p = GaussianParams(sigma, max(1, math.ceil(2 * sigma)) + extra)
        assert abs(gaussian_kernel(p).sum() - 1.0) < 1e-12

    def test_radial_symmetry_and_peak(self):
        k = gaussian_kernel(GaussianParams(1.3, 4))
        c = 4
        assert k[c, c + 1] == k[c + 1, c] == k[c, c - 1] == k[c - 1, c]
        assert k[c, c] == k.max()
        assert k[c, c + 1] > k[c, c + 2] > k[c, c + 3]
        assert np.allclose(k, k.T) and np.allclose(k, k[::-1, ::-1])

    @pytest.mark.parametrize("kw", [{"sigma": 0.0}, {"sigma": 2.0, "radius": 3}, {"radius": 0}])
    def test_invalid(self, kw):
        with pytest.raises(DataError):
            GaussianParams(**kw)


class TestGaussianSmooth:
    def test_constant(self):
        out = gaussian_smooth(GrayRaster(np.full((20, 25), 77, dtype=np.uint8))).values
        assert (out == 77).all()

    def test_impulse_response_is_kernel(self):
        v = np.zeros((21, 21), dtype=np.uint8)
        v[10, 10] = 255
        p = GaussianParams(1.0, 3)
        out = gaussian_smooth(GrayRaster(v), p).values
        k = gaussian_kernel(p)
        assert out[10, 10] == math.floor(255 * k[3, 3] + 0.5)
        assert np.array_equal(out[7:14, 7:14], np.floor(255 * k + 0.5).astype(np.uint8))

    def test_checkerboard_interior_strictly_between(self):
        v = ((np.indices((24, 24)).sum(axis=0) % 2) * 255).astype(np.uint8)
        out = gaussian_smooth(GrayRaster(v)).values[3:-3, 3:-3]
        assert (out > 0).all() and (out < 255).all()

    def test_matches_direct_2d_convolution(self):
        rng = np.random.default_rng(11)
        v = rng.integers(0, 256, (18, 23), dtype=np.uint8)
        for p in (GaussianParams(1.0, 3), GaussianParams(1.7, 4), GaussianParams(0.6, 2)):
            sep = gaussian_smooth(GrayRaster(v), p).values.astype(int)
            assert np.abs(sep - direct_conv_oracle(v.astype(float), p)).max() <= 1

    def test_mirror_border_keeps_ramp_mean(self):
        # Reflection keeps a flat border flat, so no darkening at edges.
        v = np.full((10, 10), 200, dtype=np.uint8)
        v[:, 5:] = 100
        out = gaussian_smooth(GrayRaster(v)).values
        assert (out[:, 0] == 200).all() and (out[:, -1] == 100).all()

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.uint8, st.tuples(st.integers(3, 20), st.integers(3, 20))))
    def test_range_not_expanded(self, v):
        out = gaussian_smooth(GrayRaster(v)).values.astype(int)
        assert out.min() >= int(v.min()) - 1 and out.max() <= int(v.max()) + 1

    def test_commutes_with_transpose(self):
        v = np.random.default_rng(12).integers(0, 256, (40, 40), dtype=np.uint8)
        a = gaussian_smooth(GrayRaster(v)).values
        b = gaussian_smooth(GrayRaster(v.T.copy())).values.T
        assert np.array_equal(a, b)
