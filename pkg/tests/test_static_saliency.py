import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthgaze.static_saliency import center_prior, equilibrium, graph_saliency

from conftest import textured_frame

DIMS = (128, 96)


def planted(rgb_value, depth_value, box, bg_rgb=0.1, bg_depth=0.5):
    rgb = np.full((96, 128, 3), bg_rgb)
    depth = np.full((96, 128), bg_depth)
    x0, y0, x1, y1 = box
    rgb[y0:y1, x0:x1] = rgb_value
    depth[y0:y1, x0:x1] = depth_value
    return rgb, depth


def argmax_xy(m):
    r, c = np.unravel_index(np.argmax(m), m.shape)
    return c, r


class TestCenterPrior:
    def test_argmax_and_peak(self):
        m = center_prior(DIMS)
        assert argmax_xy(m) == (64, 48)
        assert m[48, 64] == 1.0

    def test_value_at_sigma(self):
        m = center_prior(DIMS)
        assert m[48, 64 + 8] == pytest.approx(np.exp(-0.5), abs=1e-12)
        assert m[48 - 8, 64] == pytest.approx(0.6065, abs=1e-4)


class TestGraphSaliency:
    def test_uniform_frame(self):
        m = graph_saliency((np.full((96, 128, 3), 0.5), np.full((96, 128), 0.3)))
        assert m.max() / m.min() < 1.5

    def test_bright_square(self):
        box = (80, 20, 92, 32)
        m = graph_saliency(planted(0.9, 0.5, box), use_depth=False)
        x, y = argmax_xy(m)
        assert box[0] <= x < box[2] and box[1] <= y < box[3]

    def test_depth_target(self):
        box = (24, 52, 38, 66)
        frame = planted(0.4, 0.1, box, bg_rgb=0.4, bg_depth=0.7)
        x, y = argmax_xy(graph_saliency(frame, use_depth=True))
        assert box[0] <= x < box[2] and box[1] <= y < box[3]

    def test_max_normalized_finite_non_negative(self):
        m = graph_saliency(textured_frame(3))
        assert np.isfinite(m).all() and m.min() >= 0
        assert m.max() == pytest.approx(1.0, abs=1e-12)

    def test_mirror_equivariant(self):
        rgb, depth = textured_frame(5)
        a = graph_saliency((rgb, depth))
        b = graph_saliency((rgb[:, ::-1], depth[:, ::-1]))
        np.testing.assert_allclose(b, a[:, ::-1], atol=1e-6)

    @given(st.floats(-0.3, 0.3))
    @settings(max_examples=5, deadline=None)
    def test_depth_offset_invariant(self, offset):
        rgb, depth = textured_frame(7)
        a = graph_saliency((rgb, depth), use_depth=True)
        b = graph_saliency((rgb, depth + offset), use_depth=True)
        np.testing.assert_allclose(a, b, atol=1e-6)


def test_equilibrium_of_symmetric_chain():
    # the stationary distribution of a symmetric weight matrix is proportional to the row sums
    w = np.random.default_rng(0).random((6, 6))
    w = w + w.T
    pi = equilibrium(w)
    np.testing.assert_allclose(pi, w.sum(1) / w.sum(), atol=1e-8)
