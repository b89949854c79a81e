"""Candidate-transition baseline.

Every (source candidate, destination candidate) pair across consecutive
pipeline steps gets a feature vector; a linear SVM scores transitions, and
the scores are aggregated into per-destination probabilities and rendered
as a sum of constant-size Gaussians.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .candidates import CandidateConfig, disk_mean, extract_candidates
from .errors import (
    CorruptFile,
    EmptyDestinationSet,
    EmptySourceSet,
    MissingGroundTruth,
    NonFiniteFeature,
    SingleClass,
)
from .flow import FlowConfig, FlowField, motion_features, optical_flow
from .static_saliency import frame_center, graph_saliency

FEATURE_NAMES = (
    "src_saliency", "dst_saliency",
    "dst_dog_u", "dst_dog_v", "dst_dog_mag",
    "src_face", "src_body", "src_center",
    "dst_face", "dst_body", "dst_center",
    "distance", "dst_center_distance", "depth_difference",
)
FEATURE_DIM = len(FEATURE_NAMES)
DEFAULT_INTERVAL = 10


# ---------------------------------------------------------------------------
# features and labels


def build_features(src, dst, src_static, dst_static, motion, dims, use_depth=True):
    """Feature vector for one source -> destination candidate pair."""
    cx, cy = frame_center(dims)
    dx, dy = dst.center
    sx, sy = src.center
    vec = [
        disk_mean(src_static, src.center, src.sigma) if src_static is not None else 0.0,
        disk_mean(dst_static, dst.center, dst.sigma) if dst_static is not None else 0.0,
    ]
    if motion is not None:
        vec += [disk_mean(g, dst.center, dst.sigma) for g in (motion.dog_u, motion.dog_v, motion.dog_mag)]
    else:
        vec += [0.0, 0.0, 0.0]
    vec += [float(lab in src.labels) for lab in ("face", "body", "center")]
    vec += [float(lab in dst.labels) for lab in ("face", "body", "center")]
    vec += [float(np.hypot(dx - sx, dy - sy)), float(np.hypot(dx - cx, dy - cy))]
    vec.append(dst.mean_depth - src.mean_depth if use_depth else 0.0)
    return np.asarray(vec, dtype=np.float64)


def _value_at(grid, point):
    h, w = grid.shape
    x, y = point
    return grid[min(max(int(round(y)), 0), h - 1), min(max(int(round(x)), 0), w - 1)]


def label_transitions(pairs, gt_dst, gt_src, threshold_fraction=0.5):
    """+1 where both endpoints sit at >= threshold_fraction of their frame's gt max."""
    if gt_dst is None or gt_src is None:
        raise MissingGroundTruth("ground-truth map missing for a labeled step")
    gt_dst = np.asarray(gt_dst, dtype=np.float64)
    gt_src = np.asarray(gt_src, dtype=np.float64)
    tdst = threshold_fraction * gt_dst.max()
    tsrc = threshold_fraction * gt_src.max()
    labels = []
    for src, dst in pairs:
        ok = _value_at(gt_dst, dst.center) >= tdst and _value_at(gt_src, src.center) >= tsrc
        labels.append(1 if ok else -1)
    return np.asarray(labels, dtype=int)


# ---------------------------------------------------------------------------
# linear SVM


@dataclass
class LinearSvmModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray
    use_depth: bool = True

    def normalize(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def decision(self, X):
        return self.normalize(X) @ self.weights + self.bias

    def confidence(self, X):
        """Signed distance from the separating hyperplane (normalized feature space)."""
        norm = float(np.linalg.norm(self.weights))
        return self.decision(X) / (norm if norm > 0 else 1.0)

    def predict(self, X):
        return np.where(self.decision(X) >= 0, 1, -1)


def _as_pm1(labels):
    y = np.asarray(labels)
    if set(np.unique(y)) <= {0, 1}:
        y = 2 * y - 1
    return y.astype(np.float64)


def class_weights(y, balanced=True):
    if not balanced:
        return np.ones_like(y)
    n = len(y)
    n_pos = (y > 0).sum()
    n_neg = n - n_pos
    return np.where(y > 0, n / (2.0 * n_pos), n / (2.0 * n_neg))


def svm_objective(w, b, Xn, y, c_reg, sample_weight):
    """0.5 |w|^2 + C * sum(weight * hinge)."""
    margins = 1.0 - y * (Xn @ w + b)
    return 0.5 * float(w @ w) + c_reg * float(np.sum(sample_weight * np.maximum(margins, 0.0)))


def train_svm(features, labels, c_reg=1.0, epochs=200, seed=0, balanced=True):
    """Soft-margin linear SVM by stochastic subgradient descent on the hinge loss.

    Features are z-normalized with stored statistics. Step sizes follow
    1 / (lambda * t) with lambda = 1 / (C n); the iterate with the lowest full
    objective over all epochs is returned.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or not np.isfinite(X).all():
        raise NonFiniteFeature("features must be a finite 2-D array")
    y = _as_pm1(labels)
    if len(np.unique(y)) < 2:
        raise SingleClass("training labels contain a single class")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    Xn = (X - mean) / std
    sw = class_weights(y, balanced)

    n, d = Xn.shape
    lam = 1.0 / (c_reg * n)
    w, b = np.zeros(d), 0.0
    best = (svm_objective(w, b, Xn, y, c_reg, sw), w.copy(), b)
    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            viol = y[i] * (Xn[i] @ w + b) < 1.0
            # the bias shrinks with w (constant-feature trick) to damp early steps
            w *= 1.0 - eta * lam
            b *= 1.0 - eta * lam
            if viol:
                w += eta * sw[i] * y[i] * Xn[i]
                b += eta * sw[i] * y[i]
        obj = svm_objective(w, b, Xn, y, c_reg, sw)
        if obj < best[0]:
            best = (obj, w.copy(), b)
    _, w, b = best
    return LinearSvmModel(w, float(b), mean, std)


# model file: b"DGSV" + version + dim + flags (u32 LE), then float64 LE
# weights, bias, means, stds
_SVM_MAGIC = b"DGSV"
_SVM_VERSION = 1


def save_svm(model, path):
    d = len(model.weights)
    flags = 1 if model.use_depth else 0
    with open(path, "wb") as fh:
        fh.write(_SVM_MAGIC + struct.pack("<III", _SVM_VERSION, d, flags))
        fh.write(np.asarray(model.weights, "<f8").tobytes())
        fh.write(struct.pack("<d", model.bias))
        fh.write(np.asarray(model.mean, "<f8").tobytes())
        fh.write(np.asarray(model.std, "<f8").tobytes())


def load_svm(path):
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _SVM_MAGIC:
        raise CorruptFile(f"{path}: not a DGSV model")
    version, d, flags = struct.unpack("<III", data[4:16])
    if version != _SVM_VERSION or len(data) != 16 + 8 * (3 * d + 1):
        raise CorruptFile(f"{path}: unsupported version or truncated model")
    vals = np.frombuffer(data[16:], dtype="<f8").astype(np.float64)
    return LinearSvmModel(vals[:d].copy(), float(vals[d]), vals[d + 1 : 2 * d + 1].copy(),
                          vals[2 * d + 1 :].copy(), bool(flags & 1))


# ---------------------------------------------------------------------------
# aggregation and rendering


def destination_probability(sources):
    """P(d) = mean over sources of S(s) * max(C(s, d), 0).

    ``sources`` is a sequence of (S(s), C(s, d)) pairs.
    """
    sources = list(sources)
    if not sources:
        raise EmptySourceSet("no source candidates")
    return sum(s * max(c, 0.0) for s, c in sources) / len(sources)


def render_saliency(dests, sigma, dims):
    """S(p) = mean over destinations of P(d) * exp(-|p - d|^2 / (2 sigma^2)).

    ``dests`` is a sequence of ((x, y), P(d)).
    """
    dests = list(dests)
    if not dests:
        raise EmptyDestinationSet("no destination candidates")
    w, h = dims
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    out = np.zeros((h, w))
    for (x, y), p in dests:
        if p == 0:
            continue
        out += p * np.outer(np.exp(-((ys - y) ** 2) / (2 * sigma**2)),
                            np.exp(-((xs - x) ** 2) / (2 * sigma**2)))
    return out / len(dests)


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class BaselineConfig:
    interval: int = DEFAULT_INTERVAL
    threshold_fraction: float = 0.5
    render_sigma_fraction: float = 0.05
    dog_sigma: float = 2.0
    svm_c: float = 1.0
    svm_epochs: int = 200
    seed: int = 0
    flow: FlowConfig = field(default_factory=FlowConfig)
    candidates: CandidateConfig = field(default_factory=CandidateConfig)

    def render_sigma(self, dims):
        return self.render_sigma_fraction * float(np.hypot(*dims))


@dataclass
class StepData:
    frame_index: int
    static: np.ndarray
    motion: object
    candidates: object


def step_frames(num_frames, interval=DEFAULT_INTERVAL):
    return list(range(0, num_frames, interval))


def prepare_steps(video, use_depth, cfg=BaselineConfig(), annotations=()):
    """Static maps, motion features and candidates at every step frame."""
    dims = video.working_dims
    by_frame = {}
    for a in annotations or ():
        by_frame.setdefault(a.frame_index, []).append(a)
    steps = []
    prev_flow = curr_flow = FlowField.zeros(dims, 4 if use_depth else 3)
    prev_frame = None
    for f in step_frames(len(video), cfg.interval):
        frame = video[f]
        static = graph_saliency(frame, use_depth)
        if prev_frame is not None:
            prev_flow, curr_flow = curr_flow, optical_flow(prev_frame, frame, use_depth, cfg.flow)
        motion = motion_features(prev_flow, curr_flow, cfg.dog_sigma)
        cands = extract_candidates(static, motion, by_frame.get(f, ()), dims,
                                   frame.depth if use_depth else None, f, cfg.candidates)
        steps.append(StepData(f, static, motion, cands))
        prev_frame = frame
    return steps


def pair_features(src_step, dst_step, dims, use_depth):
    pairs, feats = [], []
    for d in dst_step.candidates:
        for s in src_step.candidates:
            pairs.append((s, d))
            feats.append(build_features(s, d, src_step.static, dst_step.static,
                                        dst_step.motion, dims, use_depth))
    return pairs, np.asarray(feats)


def collect_training_pairs(steps, gt_maps, dims, use_depth, threshold_fraction=0.5):
    """Features and labels for all consecutive steps that have ground truth.

    ``gt_maps`` maps frame index -> densified ground-truth map.
    """
    X, y = [], []
    for prev, curr in zip(steps, steps[1:]):
        if prev.frame_index not in gt_maps or curr.frame_index not in gt_maps:
            continue
        pairs, feats = pair_features(prev, curr, dims, use_depth)
        X.append(feats)
        y.append(label_transitions(pairs, gt_maps[curr.frame_index], gt_maps[prev.frame_index],
                                   threshold_fraction))
    if not X:
        return np.zeros((0, FEATURE_DIM)), np.zeros(0, dtype=int)
    return np.concatenate(X), np.concatenate(y)


def train_baseline(videos, cfg=BaselineConfig(), use_depth=True):
    """Train the transition SVM.

    ``videos`` is a sequence of (VideoSequence, gt_maps, annotations).
    """
    X, y = [], []
    for video, gt_maps, annotations in videos:
        steps = prepare_steps(video, use_depth, cfg, annotations)
        Xv, yv = collect_training_pairs(steps, gt_maps, video.working_dims, use_depth,
                                        cfg.threshold_fraction)
        X.append(Xv)
        y.append(yv)
    X = np.concatenate(X) if X else np.zeros((0, FEATURE_DIM))
    y = np.concatenate(y) if y else np.zeros(0, dtype=int)
    model = train_svm(X, y, cfg.svm_c, cfg.svm_epochs, cfg.seed)
    model.use_depth = use_depth
    return model


def _initial_saliency(cands):
    # center = 1; every other candidate starts at its own (normalized) map strength,
    # otherwise a recursion that only trusts center-sourced transitions never leaves it
    return [1.0 if c.source == "center" else float(min(max(c.saliency, 0.0), 1.0)) for c in cands]


def run_baseline(video, model, cfg=BaselineConfig(), use_depth=True, annotations=(), steps=None):
    """Per-frame saliency maps for one video.

    The first step starts from S = 1 at the center candidate and S = the
    candidate's own map strength elsewhere; each later
    step re-reads the previous step's max-normalized P(d) at the new source
    candidates. Frames between steps carry the latest map.
    """
    dims = video.working_dims
    sigma = cfg.render_sigma(dims)
    if steps is None:
        steps = prepare_steps(video, use_depth, cfg, annotations)
    first = steps[0].candidates
    src_sal = _initial_saliency(first)
    maps = [render_saliency([(c.center, s) for c, s in zip(first, src_sal)], sigma, dims)]
    for prev, curr in zip(steps, steps[1:]):
        pairs, feats = pair_features(prev, curr, dims, use_depth)
        conf = model.confidence(feats).reshape(len(curr.candidates), len(prev.candidates))
        probs = [destination_probability(zip(src_sal, conf[i])) for i in range(len(curr.candidates))]
        top = max(probs)
        if top > 0:
            maps.append(render_saliency([(c.center, p) for c, p in zip(curr.candidates, probs)],
                                        sigma, dims))
            src_sal = [p / top for p in probs]
        else:
            # nothing reachable: restart from the initial convention
            src_sal = _initial_saliency(curr.candidates)
            maps.append(render_saliency([(c.center, s) for c, s in zip(curr.candidates, src_sal)],
                                        sigma, dims))

    out = []
    for f in range(len(video)):
        out.append(maps[min(f // cfg.interval, len(maps) - 1)])
    return out
