import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthgaze import fixations as fx
from depthgaze.errors import EmptyFixationSet, NoScorableFrames, TooFewViewers
from depthgaze.fixations import (
    FixationSet,
    HomogeneityConfig,
    densify,
    homogeneity_score,
    kernel_sigma,
    video_quality,
)

DIMS = (128, 96)


def brute_density(points, dims, sigma):
    """Per-pixel double loop over the grid, independent of the vectorized path."""
    w, h = dims
    grid = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            grid[r, c] = sum(math.exp(-((c - px) ** 2 + (r - py) ** 2) / (2 * sigma * sigma))
                             for px, py in points)
    return grid / grid.sum()


def brute_chi2(a, b):
    total = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        if x + y > 0:
            total += 0.5 * (x - y) ** 2 / (x + y)
    return total


def exhaustive_q(points_by_viewer, dims, sigma_fraction=0.05):
    """Average of 1 - chi^2 over every balanced split, built from scratch."""
    viewers = list(points_by_viewer)
    n = len(viewers)
    sigma = sigma_fraction * math.hypot(*dims)
    values = []
    for half in itertools.combinations(viewers, n // 2):
        rest = [v for v in viewers if v not in half]
        a = brute_density([p for v in half for p in points_by_viewer[v]], dims, sigma)
        b = brute_density([p for v in rest for p in points_by_viewer[v]], dims, sigma)
        values.append(brute_chi2(a, b))
    return 1.0 - sum(values) / len(values)


def two_clusters(separation, n_viewers=8, center=(64.0, 48.0)):
    cx, cy = center
    pts = {}
    for i in range(n_viewers):
        dx = -separation / 2 if i < n_viewers // 2 else separation / 2
        pts[f"v{i}"] = [(cx + dx, cy)]
    return FixationSet(pts, DIMS)


class TestDensify:
    def test_center(self):
        m = densify(np.array([[63.5, 47.5]]), DIMS)
        assert m.sum() == pytest.approx(1.0, abs=1e-12)
        r, c = np.unravel_index(np.argmax(m), m.shape)
        assert abs(c - 63.5) <= 0.5 and abs(r - 47.5) <= 0.5

    def test_sigma_is_five_percent_of_diagonal(self):
        assert kernel_sigma(DIMS) == pytest.approx(8.0)

    def test_empty(self):
        with pytest.raises(EmptyFixationSet):
            densify(FixationSet({}, DIMS))
        with pytest.raises(EmptyFixationSet):
            densify(np.zeros((0, 2)), DIMS)

    def test_opposite_corners_match_brute_force(self):
        dims = (32, 24)
        pts = [(0.0, 0.0), (31.0, 23.0)]
        m = densify(np.array(pts), dims)
        ref = brute_density(pts, dims, kernel_sigma(dims))
        np.testing.assert_allclose(m, ref, atol=1e-12)
        assert m[:, :16].sum() == pytest.approx(ref[:, :16].sum(), abs=1e-12)
        assert m[:, 16:].sum() == pytest.approx(ref[:, 16:].sum(), abs=1e-12)
        # bimodal: the two corners are local maxima
        assert m[0, 0] > m[0, 1] and m[23, 31] > m[23, 30]

    @given(st.lists(st.tuples(st.floats(0, 127), st.floats(0, 95)), min_size=1, max_size=8),
           st.randoms(use_true_random=False))
    @settings(max_examples=30, deadline=None)
    def test_permutation_invariant(self, pts, rnd):
        shuffled = list(pts)
        rnd.shuffle(shuffled)
        a = densify(np.array(pts), DIMS)
        b = densify(np.array(shuffled), DIMS)
        np.testing.assert_allclose(a, b, atol=1e-15)
        assert a.sum() == pytest.approx(1.0, abs=1e-6)
        assert a.min() >= 0

    @given(st.floats(30, 90), st.floats(30, 60), st.integers(-10, 10), st.integers(-10, 10))
    @settings(max_examples=30, deadline=None)
    def test_shift_moves_argmax(self, x, y, dx, dy):
        a = densify(np.array([[x, y], [x + 3, y - 2]]), DIMS)
        b = densify(np.array([[x + dx, y + dy], [x + 3 + dx, y - 2 + dy]]), DIMS)
        ra, ca = np.unravel_index(np.argmax(a), a.shape)
        rb, cb = np.unravel_index(np.argmax(b), b.shape)
        assert abs((cb - ca) - dx) <= 1 and abs((rb - ra) - dy) <= 1

    def test_points_outside_frame_rejected(self):
        with pytest.raises(ValueError):
            FixationSet({"a": [(128.5, 10.0)]}, DIMS)


class TestHomogeneity:
    def test_identical_viewers(self):
        fs = FixationSet({f"v{i}": [(40.0, 30.0)] for i in range(6)}, DIMS)
        assert homogeneity_score(fs, HomogeneityConfig(10, 3)) == pytest.approx(1.0, abs=1e-12)

    def test_too_few_viewers(self):
        with pytest.raises(TooFewViewers):
            homogeneity_score(FixationSet({"v": [(1.0, 1.0)]}, DIMS))

    def test_four_viewers_exhaustive_oracle(self):
        dims = (32, 24)
        pts = {"a": [(4.0, 4.0)], "b": [(4.0, 4.0)], "c": [(27.0, 19.0)], "d": [(27.0, 19.0)]}
        fs = FixationSet(pts, dims)
        q = homogeneity_score(fs, HomogeneityConfig(10, 42, exhaustive=True))
        assert q == pytest.approx(exhaustive_q(pts, dims), abs=1e-12)

    def test_seeded_random_splits_are_deterministic(self):
        fs = two_clusters(30.0)
        cfg = HomogeneityConfig(10, 42)
        assert homogeneity_score(fs, cfg, frame_index=3) == homogeneity_score(fs, cfg, frame_index=3)

    @given(st.permutations(range(6)))
    @settings(max_examples=20, deadline=None)
    def test_relabeling_invariant(self, perm):
        base = {f"v{i}": [(20.0 + 7 * i, 30.0 + 3 * i)] for i in range(6)}
        relabeled = {f"w{perm[i]}": p for i, (_, p) in enumerate(base.items())}
        cfg = HomogeneityConfig(10, 42)
        a = homogeneity_score(FixationSet(base, DIMS), cfg)
        b = homogeneity_score(FixationSet(relabeled, DIMS), cfg)
        assert a == pytest.approx(b, abs=1e-12)

    def test_monotone_in_separation(self):
        cfg = HomogeneityConfig(10, 0)
        qs = [homogeneity_score(two_clusters(s), cfg) for s in (0, 10, 20, 40)]
        assert qs[0] == pytest.approx(1.0, abs=1e-12)
        assert all(a > b for a, b in zip(qs, qs[1:]))

    def test_q_in_unit_interval(self, rng):
        pts = {f"v{i}": [tuple(rng.uniform((0, 0), (127, 95)))] for i in range(5)}
        q = homogeneity_score(FixationSet(pts, DIMS), HomogeneityConfig(20, 1))
        assert 0.0 <= q <= 1.0

    def test_num_splits_positive(self):
        with pytest.raises(ValueError):
            HomogeneityConfig(0)


class TestVideoQuality:
    def test_all_ones(self):
        fs = FixationSet({"a": [(10.0, 10.0)], "b": [(10.0, 10.0)]}, DIMS)
        assert video_quality({0: fs, 1: fs}) == pytest.approx(1.0, abs=1e-12)

    def test_mean_of_frames(self, monkeypatch):
        fs = FixationSet({"a": [(10.0, 10.0)], "b": [(10.0, 10.0)]}, DIMS)
        values = {0: 0.8, 1: 0.9}
        monkeypatch.setattr(fx, "homogeneity_score", lambda s, cfg, frame, sf: values[frame])
        assert video_quality({0: fs, 1: fs}) == pytest.approx(0.85, abs=1e-12)

    def test_single_viewer_frames_skipped(self):
        two = FixationSet({"a": [(10.0, 10.0)], "b": [(10.0, 10.0)]}, DIMS)
        one = FixationSet({"a": [(50.0, 10.0)]}, DIMS)
        assert fx.frame_qualities({0: two, 1: one})[1] == [1]
        assert video_quality({0: two, 1: one}) == pytest.approx(1.0, abs=1e-12)

    def test_no_scorable_frames(self):
        with pytest.raises(NoScorableFrames):
            video_quality({0: FixationSet({"a": [(1.0, 1.0)]}, DIMS)})
