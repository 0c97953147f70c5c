import numpy as np
import pytest

from grouprope.formats import read_ppm
from grouprope.ge_rope import DisplacementField, build_ge_rope
from grouprope.identity_rope import build_identity_rope
from grouprope.rope_core import RopeDims, build_grid_phases
from grouprope.viz import (
    hsv_to_rgb,
    phase_to_rgb,
    render_phase_map,
    viz_phase_map,
    viz_velocity_norms,
    viz_warp,
)

DIMS = RopeDims(theta=10000.0, d_t=4, d_h=8, d_w=8)


def rect_mask(h_sz, w_sz, y1, x1, y2, x2):
    m = np.zeros((h_sz, w_sz))
    m[y1 : y2 + 1, x1 : x2 + 1] = 1.0
    return m


class TestColorMapping:
    def test_primary_hues(self):
        rgb = hsv_to_rgb(np.array([0.0, 1 / 3, 2 / 3]))
        np.testing.assert_allclose(rgb[0], [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(rgb[1], [0, 1, 0], atol=1e-12)
        np.testing.assert_allclose(rgb[2], [0, 0, 1], atol=1e-12)

    def test_hue_wraps(self):
        np.testing.assert_allclose(
            hsv_to_rgb(np.array([1.0])), hsv_to_rgb(np.array([0.0])), atol=1e-12
        )

    def test_phase_zero_is_single_color(self):
        ones = np.ones((3, 3), dtype=np.complex128)
        rgb = phase_to_rgb(ones)
        assert rgb.dtype == np.uint8
        assert len(np.unique(rgb.reshape(-1, 3), axis=0)) == 1

    def test_distinct_phases_distinct_colors(self):
        phases = np.exp(1j * np.array([0.0, np.pi / 2, np.pi]))
        rgb = phase_to_rgb(phases)
        assert len(np.unique(rgb, axis=0)) == 3


class TestRenderPhaseMap:
    def test_montage_shape(self):
        enc = build_grid_phases(DIMS, 3, 5, 7)
        img = render_phase_map(enc, DIMS, "w", 1)
        assert img.shape == (5, 3 * 7, 3)

    def test_position_zero_row_uniform(self):
        enc = build_grid_phases(DIMS, 1, 4, 6)
        img = render_phase_map(enc, DIMS, "h", 0)
        # h phase at row 0 is zero everywhere, one color across the full row
        assert len(np.unique(img[0].reshape(-1, 3), axis=0)) == 1

    def test_offset_rects_share_color_pattern(self):
        masks = np.stack(
            [rect_mask(8, 8, 0, 0, 2, 2), rect_mask(8, 8, 4, 5, 6, 7)]
        )
        enc = build_identity_rope(masks, DIMS)
        img = render_phase_map(enc, DIMS, "h", 1)
        inside0 = img[0:3, 0:3]  # frame 0 panel starts at column 0
        inside1 = img[4:7, 8 + 5 : 8 + 8]  # frame 1 panel starts at column 8
        np.testing.assert_array_equal(inside0, inside1)

    def test_zero_field_image_matches_baseline_bitwise(self):
        zero = [DisplacementField.zeros(6, 6) for _ in range(2)]
        enc_ge = build_ge_rope(zero, DIMS, 6, 6)
        enc_base = build_grid_phases(DIMS, 2, 6, 6)
        img_ge = render_phase_map(enc_ge, DIMS, "w", 0)
        img_base = render_phase_map(enc_base, DIMS, "w", 0)
        np.testing.assert_array_equal(img_ge, img_base)

    def test_bad_axis_and_freq(self):
        enc = build_grid_phases(DIMS, 1, 4, 4)
        with pytest.raises(ValueError):
            render_phase_map(enc, DIMS, "z", 0)
        with pytest.raises(ValueError):
            render_phase_map(enc, DIMS, "h", 99)


class TestFileOutputs:
    def test_phase_map_file_round_trip(self, tmp_path):
        enc = build_grid_phases(DIMS, 2, 4, 4)
        out = tmp_path / "phase.ppm"
        viz_phase_map(enc, DIMS, "h", 0, out)
        np.testing.assert_array_equal(read_ppm(out), render_phase_map(enc, DIMS, "h", 0))

    def test_velocity_figure_deterministic(self, tmp_path):
        norms = [3.0, 2.5, 2.0, 1.2]
        viz_velocity_norms(norms, tmp_path / "a.png")
        viz_velocity_norms(norms, tmp_path / "b.png")
        a, b = (tmp_path / "a.png").read_bytes(), (tmp_path / "b.png").read_bytes()
        assert a == b and a[:8] == b"\x89PNG\r\n\x1a\n"

    def test_warp_figure_written(self, tmp_path):
        rng = np.random.default_rng(0)
        field = DisplacementField(rng.standard_normal((5, 5)), rng.standard_normal((5, 5)))
        viz_warp(field, tmp_path / "w.png", title="t")
        assert (tmp_path / "w.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
