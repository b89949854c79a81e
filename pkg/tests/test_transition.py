import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthgaze.candidates import Candidate
from depthgaze.errors import (
    CorruptFile,
    EmptyDestinationSet,
    EmptySourceSet,
    MissingGroundTruth,
    NonFiniteFeature,
    SingleClass,
)
from depthgaze.flow import FlowField, motion_features
from depthgaze.static_saliency import gaussian_blob
from depthgaze.transition import (
    FEATURE_DIM,
    BaselineConfig,
    LinearSvmModel,
    build_features,
    destination_probability,
    label_transitions,
    load_svm,
    render_saliency,
    run_baseline,
    save_svm,
    train_svm,
)

from conftest import make_video

DIMS = (128, 96)
CENTER = Candidate((64.0, 48.0), 8.0, 1.0, 0.0, frozenset({"center"}), "center")


def cand(x, y, depth=0.0, labels=(), source="static", sigma=4.0):
    return Candidate((float(x), float(y)), sigma, 1.0, depth, frozenset(labels), source)


def brute_destination_probability(sal, conf):
    total = 0.0
    for s, c in zip(sal, conf):
        if c > 0:
            total += s * c
    return total / len(sal)


def brute_render(points, probs, sigma, dims):
    w, h = dims
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            acc = 0.0
            for (x, y), p in zip(points, probs):
                acc += p * math.exp(-((c - x) ** 2 + (r - y) ** 2) / (2 * sigma * sigma))
            out[r, c] = acc / len(points)
    return out


def hinge_objective(w, b, X, y, c_reg, sw):
    total = 0.0
    for xi, yi, si in zip(X, y, sw):
        total += si * max(0.0, 1.0 - yi * (xi @ w + b))
    return 0.5 * float(w @ w) + c_reg * total


class TestFeatures:
    def test_center_to_center(self):
        z = np.zeros((96, 128))
        motion = motion_features(FlowField.zeros(DIMS), FlowField.zeros(DIMS))
        f = build_features(CENTER, CENTER, z, z, motion, DIMS)
        assert f.shape == (FEATURE_DIM,)
        assert f[11] == 0.0 and f[12] == 0.0 and f[13] == 0.0
        assert f[7] == 1.0 and f[10] == 1.0 and f[5] == f[6] == f[8] == f[9] == 0.0

    def test_depth_difference(self):
        f = build_features(cand(10, 10, 0.2), cand(50, 60, 0.7), None, None, None, DIMS)
        assert f[13] == pytest.approx(0.5)
        assert f[11] == pytest.approx(math.hypot(40, 50))
        assert build_features(cand(10, 10, 0.2), cand(50, 60, 0.7), None, None, None, DIMS,
                              use_depth=False)[13] == 0.0

    def test_neighbourhood_means(self):
        static = np.zeros((96, 128))
        static[18:23, 28:33] = 1.0
        src = cand(30, 20, sigma=2.0)
        f = build_features(src, cand(100, 80, labels=("face", "body"), source="annotation"),
                           static, static, None, DIMS)
        assert f[0] == pytest.approx(1.0) and f[1] == 0.0
        assert f[8] == 1.0 and f[9] == 1.0  # multi-hot destination labels


class TestLabels:
    def test_rules(self):
        gt = gaussian_blob(DIMS, (40.0, 30.0), 8.0)
        y = label_transitions([(cand(40, 30), cand(40, 30)), (cand(40, 30), cand(120, 90))], gt, gt)
        assert y.tolist() == [1, -1]

    def test_half_max_tie_is_positive(self):
        gt = np.zeros((96, 128))
        gt[0, 0] = 1.0
        gt[30, 60] = 0.5
        assert label_transitions([(cand(0, 0), cand(60, 30))], gt, gt).tolist() == [1]
        gt[30, 60] = 0.5 - 1e-12
        assert label_transitions([(cand(0, 0), cand(60, 30))], gt, gt).tolist() == [-1]

    def test_missing(self):
        with pytest.raises(MissingGroundTruth):
            label_transitions([(CENTER, CENTER)], None, np.ones((96, 128)))


class TestSvm:
    def test_separable(self, rng):
        X = np.concatenate([rng.normal(-3, 0.5, (40, FEATURE_DIM)), rng.normal(3, 0.5, (40, FEATURE_DIM))])
        y = np.array([-1] * 40 + [1] * 40)
        model = train_svm(X, y, seed=1)
        assert (model.predict(X) == y).all()
        assert np.array_equal(np.sign(model.confidence(X)), model.predict(X))

    def test_single_class(self):
        with pytest.raises(SingleClass):
            train_svm(np.ones((5, 3)), np.ones(5))

    def test_non_finite(self):
        X = np.ones((4, 3))
        X[0, 0] = np.nan
        with pytest.raises(NonFiniteFeature):
            train_svm(X, [1, -1, 1, -1])

    def test_zero_variance_dimension(self, rng):
        X = np.column_stack([rng.normal(size=20), np.full(20, 3.0)])
        y = np.where(X[:, 0] > 0, 1, -1)
        assert train_svm(X, y).std[1] == 1.0

    def test_objective_near_grid_optimum(self, rng):
        X = np.concatenate([rng.normal(-0.6, 1.0, (25, 2)), rng.normal(0.6, 1.0, (25, 2))])
        y = np.array([-1.0] * 25 + [1.0] * 25)
        model = train_svm(X, y, c_reg=1.0, epochs=300, seed=0)
        Xn = model.normalize(X)
        sw = np.ones(len(y))  # classes are balanced, so the weights are all 1
        ours = hinge_objective(model.weights, model.bias, Xn, y, 1.0, sw)
        grid = np.linspace(-1.5, 1.5, 61)
        best = min(hinge_objective(np.array([a, b]), c, Xn, y, 1.0, sw)
                   for a in grid for b in grid for c in np.linspace(-1, 1, 41))
        assert ours <= 1.05 * best

    def test_deterministic(self, rng):
        X = rng.normal(size=(30, 4))
        y = np.where(X[:, 0] + 0.3 * rng.normal(size=30) > 0, 1, -1)
        a, b = train_svm(X, y, seed=5), train_svm(X, y, seed=5)
        assert np.array_equal(a.weights, b.weights) and a.bias == b.bias

    @given(st.floats(0.01, 100))
    @settings(max_examples=10, deadline=None)
    def test_scale_invariant(self, scale):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(30, 4))
        y = np.where(X[:, 0] - X[:, 2] > 0, 1, -1)
        a = train_svm(X, y, seed=2)
        b = train_svm(X * scale, y, seed=2)
        np.testing.assert_allclose(a.decision(X), b.decision(X * scale), atol=1e-9)

    def test_file_round_trip(self, tmp_path, rng):
        model = LinearSvmModel(rng.normal(size=FEATURE_DIM), 0.25, rng.normal(size=FEATURE_DIM),
                               rng.random(FEATURE_DIM) + 0.5, use_depth=False)
        save_svm(model, tmp_path / "m.dgsv")
        back = load_svm(tmp_path / "m.dgsv")
        assert np.array_equal(back.weights, model.weights) and back.bias == model.bias
        assert np.array_equal(back.std, model.std) and back.use_depth is False
        raw = (tmp_path / "m.dgsv").read_bytes()
        assert raw[:4] == b"DGSV" and np.frombuffer(raw[4:12], "<u4").tolist() == [1, FEATURE_DIM]
        (tmp_path / "m.dgsv").write_bytes(raw[:-8])
        with pytest.raises(CorruptFile):
            load_svm(tmp_path / "m.dgsv")


class TestAggregation:
    def test_examples(self):
        assert destination_probability([(1.0, 0.8)]) == pytest.approx(0.8)
        assert destination_probability([(1.0, 0.6), (1.0, -0.4)]) == pytest.approx(0.3)
        with pytest.raises(EmptySourceSet):
            destination_probability([])

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_matches_loop(self, seed):
        rng = np.random.default_rng(seed)
        sal, conf = rng.random(5), rng.normal(size=5)
        assert destination_probability(zip(sal, conf)) == pytest.approx(brute_destination_probability(sal, conf), abs=1e-12)

    @given(st.integers(0, 10_000), st.integers(0, 4), st.floats(0, 3))
    @settings(max_examples=50, deadline=None)
    def test_monotone_and_non_negative(self, seed, k, bump):
        rng = np.random.default_rng(seed)
        sal, conf = rng.random(5), rng.normal(size=5)
        base = destination_probability(zip(sal, conf))
        conf2 = conf.copy()
        conf2[k] += bump
        assert destination_probability(zip(sal, conf2)) >= base >= 0
        assert destination_probability(zip(sal, -np.abs(conf))) == 0


class TestRender:
    def test_peak_and_sigma(self):
        m = render_saliency([((40.0, 30.0), 1.0)], 8.0, DIMS)
        assert m[30, 40] == pytest.approx(1.0)
        assert m[30, 48] == pytest.approx(math.exp(-0.5), abs=1e-15)
        with pytest.raises(EmptyDestinationSet):
            render_saliency([], 8.0, DIMS)

    def test_symmetric_pair(self):
        m = render_saliency([((40.0, 48.0), 0.7), ((86.0, 48.0), 0.7)], 8.0, DIMS)
        # bisector at x = 63, so column c mirrors to 126 - c
        np.testing.assert_allclose(m[:, :127], m[:, 126::-1], atol=1e-9)

    def test_matches_loop(self, rng):
        dims = (24, 18)
        pts = [tuple(rng.uniform((0, 0), (23, 17))) for _ in range(4)]
        probs = rng.random(4)
        got = render_saliency(list(zip(pts, probs)), 3.0, dims)
        np.testing.assert_allclose(got, brute_render(pts, probs, 3.0, dims), atol=1e-12)

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_bounded_by_mean_probability(self, seed):
        rng = np.random.default_rng(seed)
        dests = [(tuple(rng.uniform((0, 0), (127, 95))), float(rng.random())) for _ in range(4)]
        m = render_saliency(dests, 8.0, DIMS)
        assert m.min() >= 0 and m.max() <= np.mean([p for _, p in dests]) + 1e-12


def fixed_confidence_model(value):
    # zero weights: every pair gets confidence equal to the bias
    return LinearSvmModel(np.zeros(FEATURE_DIM), value, np.zeros(FEATURE_DIM), np.ones(FEATURE_DIM))


class TestRunBaseline:
    def test_center_only_closed_form(self):
        n = 25
        video = make_video([np.full((96, 128, 3), 0.5)] * n, [np.full((96, 128), 0.4)] * n)
        maps = run_baseline(video, fixed_confidence_model(0.7), BaselineConfig())
        prior = gaussian_blob(DIMS, (64.0, 48.0), 8.0)
        assert len(maps) == n
        np.testing.assert_allclose(maps[0], prior, atol=1e-12)
        for f in range(10, n):
            np.testing.assert_allclose(maps[f], 0.7 * prior, atol=1e-12)

    def test_depth_ignored_without_depth(self):
        rng = np.random.default_rng(3)
        rgbs = [np.clip(0.5 + 0.3 * gaussian_blob(DIMS, (30 + 2 * t, 40.0), 6.0)[..., None], 0, 1)
                * np.ones(3) for t in range(11)]
        a = make_video(rgbs, [rng.random((96, 128)) for _ in range(11)])
        b = make_video(rgbs, [np.full((96, 128), 0.5) for _ in range(11)])
        model = LinearSvmModel(rng.normal(size=FEATURE_DIM), 0.1, np.zeros(FEATURE_DIM), np.ones(FEATURE_DIM))
        for ma, mb in zip(run_baseline(a, model, use_depth=False), run_baseline(b, model, use_depth=False)):
            assert np.array_equal(ma, mb)
