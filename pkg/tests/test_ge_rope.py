import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from grouprope.ge_rope import (
    SMOOTH_SIGMA,
    SMOOTH_SIZE,
    DisplacementField,
    build_ge_rope,
    gaussian_kernel,
    gaussian_smooth,
    prepare_field,
    resize_bilinear,
    round_half_up,
    warp_grid,
)
from grouprope.rope_core import RopeDims, build_axis_tables, build_grid_phases

DIMS = RopeDims(theta=10000.0, d_t=4, d_h=8, d_w=8)


def naive_bilinear(plane, out_h, out_w):
    """Scalar reference: half-pixel sampling with explicit corner blending."""
    in_h, in_w = plane.shape
    out = np.empty((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            sy = min(max((i + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1.0)
            sx = min(max((j + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, in_h - 1), min(x0 + 1, in_w - 1)
            fy, fx = sy - y0, sx - x0
            out[i, j] = (
                plane[y0, x0] * (1 - fy) * (1 - fx)
                + plane[y0, x1] * (1 - fy) * fx
                + plane[y1, x0] * fy * (1 - fx)
                + plane[y1, x1] * fy * fx
            )
    return out


def naive_smooth(plane, size=SMOOTH_SIZE, sigma=SMOOTH_SIGMA):
    """Full 2D convolution with the outer-product kernel, edge replication."""
    k1 = gaussian_kernel(size, sigma)
    k2 = np.outer(k1, k1)
    half = size // 2
    padded = np.pad(plane, half, mode="edge")
    out = np.empty_like(plane, dtype=np.float64)
    for i in range(plane.shape[0]):
        for j in range(plane.shape[1]):
            out[i, j] = np.sum(padded[i : i + size, j : j + size] * k2)
    return out


class TestResizeBilinear:
    def test_downsample_4x4_to_2x2_is_block_mean(self):
        # at exactly 2x downsampling every sample lands on a 2x2 block center
        plane = np.arange(16, dtype=float).reshape(4, 4)
        out = resize_bilinear(plane, 2, 2)
        expect = np.array(
            [
                [plane[:2, :2].mean(), plane[:2, 2:].mean()],
                [plane[2:, :2].mean(), plane[2:, 2:].mean()],
            ]
        )
        np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_identity_size_copies(self):
        plane = np.random.default_rng(0).standard_normal((3, 5))
        out = resize_bilinear(plane, 3, 5)
        np.testing.assert_array_equal(out, plane)
        assert out is not plane

    def test_upsample_ramp(self):
        plane = np.array([[0.0, 1.0]])
        out = resize_bilinear(plane, 1, 4)
        np.testing.assert_allclose(out[0], [0.0, 0.25, 0.75, 1.0], atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), oh=st.integers(1, 7), ow=st.integers(1, 7))
    def test_matches_scalar_reference(self, seed, oh, ow):
        plane = np.random.default_rng(seed).standard_normal((5, 6))
        np.testing.assert_allclose(
            resize_bilinear(plane, oh, ow), naive_bilinear(plane, oh, ow), atol=1e-12
        )

    @settings(max_examples=20, deadline=None)
    @given(
        c=st.floats(-10, 10, allow_nan=False),
        oh=st.integers(1, 9),
        ow=st.integers(1, 9),
    )
    def test_constant_plane_stays_constant(self, c, oh, ow):
        out = resize_bilinear(np.full((4, 3), c), oh, ow)
        np.testing.assert_allclose(out, c, atol=1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            resize_bilinear(np.zeros((2, 2, 2)), 2, 2)
        with pytest.raises(ValueError):
            resize_bilinear(np.zeros((2, 2)), 0, 2)


class TestGaussianKernel:
    def test_sums_to_one(self):
        k = gaussian_kernel()
        assert abs(k.sum() - 1.0) < 1e-12
        assert abs(np.outer(k, k).sum() - 1.0) < 1e-12

    def test_shape_and_symmetry(self):
        k = gaussian_kernel()
        assert k.shape == (21,)
        np.testing.assert_allclose(k, k[::-1], atol=1e-15)
        assert k.argmax() == 10

    def test_rejects_even_size_and_bad_sigma(self):
        with pytest.raises(ValueError):
            gaussian_kernel(size=20)
        with pytest.raises(ValueError):
            gaussian_kernel(sigma=0.0)


class TestGaussianSmooth:
    def test_preserves_constants(self):
        out = gaussian_smooth(np.full((9, 7), 3.25))
        np.testing.assert_allclose(out, 3.25, atol=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(
        seed=st.integers(0, 2**31 - 1),
        a=st.floats(-3, 3, allow_nan=False),
        b=st.floats(-3, 3, allow_nan=False),
    )
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((6, 8))
        y = rng.standard_normal((6, 8))
        lhs = gaussian_smooth(a * x + b * y)
        rhs = a * gaussian_smooth(x) + b * gaussian_smooth(y)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_matches_full_2d_convolution(self):
        plane = np.random.default_rng(3).standard_normal((8, 6))
        np.testing.assert_allclose(
            gaussian_smooth(plane), naive_smooth(plane), atol=1e-12
        )

    def test_small_kernel_hand_case(self):
        # size 3, huge sigma -> taps ~ [1/3, 1/3, 1/3]; interior = 3x3 mean
        plane = np.arange(25, dtype=float).reshape(5, 5)
        out = gaussian_smooth(plane, size=3, sigma=1e6)
        np.testing.assert_allclose(out[2, 2], plane[1:4, 1:4].mean(), atol=1e-6)

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            gaussian_smooth(np.zeros(5))


class TestRoundHalfUp:
    def test_ties_go_up(self):
        vals = np.array([0.5, 1.5, 2.5, -0.5, -1.5, -2.5])
        np.testing.assert_array_equal(round_half_up(vals), [1, 2, 3, 0, -1, -2])

    def test_plain_cases(self):
        vals = np.array([2.49, 2.51, -0.49, -0.51, 3.0])
        np.testing.assert_array_equal(round_half_up(vals), [2, 3, 0, -1, 3])


class TestWarpGrid:
    def test_zero_field_is_identity(self):
        g = warp_grid(DisplacementField.zeros(4, 5), 4, 5)
        hh, ww = np.meshgrid(np.arange(4), np.arange(5), indexing="ij")
        np.testing.assert_array_equal(g.h_idx, hh)
        np.testing.assert_array_equal(g.w_idx, ww)

    def test_integer_shift(self):
        field = DisplacementField(np.full((5, 5), 2.0), np.full((5, 5), -1.0))
        g = warp_grid(field, 5, 5)
        hh, ww = np.meshgrid(np.arange(5), np.arange(5), indexing="ij")
        np.testing.assert_array_equal(g.h_idx, np.clip(hh + 2, 0, 4))
        np.testing.assert_array_equal(g.w_idx, np.clip(ww - 1, 0, 4))

    def test_clamps_before_rounding(self):
        field = DisplacementField(np.full((3, 3), 100.0), np.full((3, 3), -100.0))
        g = warp_grid(field, 3, 3)
        assert g.h_idx.max() == 2 and g.h_idx.min() == 2
        assert g.w_idx.max() == 0 and g.w_idx.min() == 0

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            warp_grid(DisplacementField.zeros(3, 3), 4, 4)

    def test_field_plane_mismatch_raises(self):
        with pytest.raises(ValueError):
            DisplacementField(np.zeros((2, 3)), np.zeros((3, 2)))


class TestPrepareField:
    def test_constant_field_scales_by_patch(self):
        field = DisplacementField(np.full((16, 16), 8.0), np.full((16, 16), -4.0))
        prep = prepare_field(field, 4, 4, patch_h=4.0, patch_w=2.0)
        np.testing.assert_allclose(prep.dh, 2.0, atol=1e-10)
        np.testing.assert_allclose(prep.dw, -2.0, atol=1e-10)

    def test_composition_matches_naive_stages(self):
        rng = np.random.default_rng(11)
        field = DisplacementField(
            rng.standard_normal((12, 10)), rng.standard_normal((12, 10))
        )
        prep = prepare_field(field, 6, 5, patch_h=2.0, patch_w=2.0)
        np.testing.assert_allclose(
            prep.dh, naive_smooth(naive_bilinear(field.dh, 6, 5) / 2.0), atol=1e-12
        )
        np.testing.assert_allclose(
            prep.dw, naive_smooth(naive_bilinear(field.dw, 6, 5) / 2.0), atol=1e-12
        )

    def test_rejects_bad_patch(self):
        with pytest.raises(ValueError):
            prepare_field(DisplacementField.zeros(4, 4), 2, 2, 0.0, 1.0)


class TestBuildGeRope:
    def test_zero_fields_reproduce_plain_grid_bitwise(self):
        fields = [DisplacementField.zeros(5, 6) for _ in range(3)]
        enc = build_ge_rope(fields, DIMS, 5, 6)
        base = build_grid_phases(DIMS, 3, 5, 6)
        assert np.array_equal(enc, base)

    def test_none_fields_reproduce_plain_grid_bitwise(self):
        enc = build_ge_rope([None, None], DIMS, 4, 4)
        assert np.array_equal(enc, build_grid_phases(DIMS, 2, 4, 4))

    def test_integer_shift_indexes_shifted_rows(self):
        n_h = n_w = 6
        shift = DisplacementField(np.full((n_h, n_w), 2.0), np.full((n_h, n_w), 1.0))
        enc = build_ge_rope([shift], DIMS, n_h, n_w)
        _, phi_h, phi_w = build_axis_tables(DIMS, 1, n_h, n_w)
        for h in range(n_h):
            for w in range(n_w):
                hs = min(h + 2, n_h - 1)
                ws = min(w + 1, n_w - 1)
                got = enc[0, h, w]
                assert np.array_equal(got[2 : 2 + 4], phi_h[hs])
                assert np.array_equal(got[6:], phi_w[ws])

    def test_temporal_block_never_warped(self):
        rng = np.random.default_rng(5)
        field = DisplacementField(
            rng.standard_normal((4, 4)) * 3, rng.standard_normal((4, 4)) * 3
        )
        enc = build_ge_rope([None, field], DIMS, 4, 4)
        base = build_grid_phases(DIMS, 2, 4, 4)
        assert np.array_equal(enc[..., : DIMS.d_t // 2], base[..., : DIMS.d_t // 2])

    def test_mixed_none_and_field(self):
        field = DisplacementField(np.full((4, 4), 1.0), np.zeros((4, 4)))
        enc = build_ge_rope([None, field], DIMS, 4, 4)
        base = build_grid_phases(DIMS, 2, 4, 4)
        assert np.array_equal(enc[0], base[0])
        assert not np.array_equal(enc[1], base[1])

    def test_empty_slot_list_raises(self):
        with pytest.raises(ValueError):
            build_ge_rope([], DIMS, 4, 4)


class TestSmoothingDataWidth:
    @settings(max_examples=15, deadline=None)
    @given(
        plane=arrays(
            np.float64,
            (5, 5),
            elements=st.floats(-50, 50, allow_nan=False, allow_infinity=False),
        )
    )
    def test_output_within_input_range(self, plane):
        # convex weights with replication padding cannot extrapolate
        out = gaussian_smooth(plane)
        assert out.min() >= plane.min() - 1e-9
        assert out.max() <= plane.max() + 1e-9
