"""Saliency scoring: chi^2 distance, ROC AUC, split evaluation and reports."""

import csv
import io
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .dataset_io import resize_bilinear
from .errors import MissingPredictions, NoFixations, ShapeMismatch
from .fixations import (
    DEFAULT_SIGMA_FRACTION,
    HomogeneityConfig,
    _canonical_viewers,
    balanced_splits,
    densify,
)

METRICS = ("auc", "chi2")
METRIC_LABELS = {"auc": "auc", "chi2": "one_minus_chi2"}
DEFAULT_NEG_PER_POS = 10


def as_distribution(m):
    """Non-negative map scaled to sum 1; an all-zero map becomes uniform."""
    m = np.clip(np.asarray(m, dtype=np.float64), 0.0, None)
    s = m.sum()
    if not np.isfinite(s) or s <= 0:
        return np.full(m.shape, 1.0 / m.size)
    return m / s


def chi2_distance(a, b):
    """Symmetric chi^2 distance 0.5 * sum (a-b)^2 / (a+b), bounded in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"map shapes differ: {a.shape} vs {b.shape}")
    if abs(a.sum() - 1.0) > 1e-6:
        a = as_distribution(a)
    if abs(b.sum() - 1.0) > 1e-6:
        b = as_distribution(b)
    s = a + b
    nz = s > 0
    d = a[nz] - b[nz]
    return float(0.5 * np.sum(d * d / s[nz]))


def fixation_pixels(points, shape):
    """Continuous pixel coordinates -> integer (row, col) indices."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    h, w = shape
    cols = np.clip(np.rint(pts[:, 0]).astype(int), 0, w - 1)
    rows = np.clip(np.rint(pts[:, 1]).astype(int), 0, h - 1)
    return rows, cols


def auc_from_scores(pos, neg):
    """Mann-Whitney AUC; ties count one half."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    ranks = rankdata(np.concatenate([pos, neg]))
    n_p, n_n = len(pos), len(neg)
    u = ranks[:n_p].sum() - n_p * (n_p + 1) / 2.0
    return float(u / (n_p * n_n))


def auc_score(sal, fixations, n_neg_per_pos=DEFAULT_NEG_PER_POS, seed=0):
    """ROC AUC of the map as a classifier of fixated vs. uniformly random pixels.

    ``fixations`` is an (N, 2) array of pixel coordinates (x, y).
    """
    sal = np.asarray(sal, dtype=np.float64)
    pts = np.asarray(fixations, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise NoFixations("AUC needs at least one fixation")
    rows, cols = fixation_pixels(pts, sal.shape)
    pos = sal[rows, cols]
    rng = np.random.default_rng(seed)
    n_neg = n_neg_per_pos * len(pos)
    neg = sal.ravel()[rng.integers(0, sal.size, size=n_neg)]
    return auc_from_scores(pos, neg)


# ---------------------------------------------------------------------------
# split evaluation


@dataclass
class EvalVideo:
    """Test-split video as seen by the evaluator."""

    video_id: str
    num_frames: int
    fixsets: dict  # frame index -> FixationSet
    dims: tuple = (128, 96)


def frame_seed(seed, video_id, frame):
    return [int(seed), zlib.crc32(video_id.encode("utf-8")), int(frame)]


def _stats(values):
    values = sorted(values)
    n = len(values)
    if n == 0:
        return float("nan"), float("nan")
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)  # (method, video, frame, metric, value)

    def add(self, method, video, frame, metric, value):
        self.rows.append((method, video, int(frame), metric, float(value)))

    @property
    def methods(self):
        seen = []
        for r in self.rows:
            if r[0] not in seen:
                seen.append(r[0])
        return seen

    def values(self, method, metric):
        return [r[4] for r in self.rows if r[0] == method and r[3] == metric]

    def summary(self):
        """{(method, metric): (mean, std)} across all scored frames."""
        out = {}
        for method in self.methods:
            for metric in sorted({r[3] for r in self.rows if r[0] == method}):
                out[(method, metric)] = _stats(self.values(method, metric))
        return out

    def mean(self, method, metric):
        return self.summary()[(method, METRIC_LABELS.get(metric, metric))][0]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "video", "frame", "metric", "value"])
        for r in sorted(self.rows, key=lambda r: (r[0], r[1], r[2], r[3])):
            w.writerow([r[0], r[1], r[2], r[3], repr(r[4])])
        w.writerow([])
        w.writerow(["method", "metric", "mean", "std"])
        for (method, metric), (mean, std) in sorted(self.summary().items()):
            w.writerow([method, metric, repr(mean), repr(std)])
        return buf.getvalue()

    def write(self, path):
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def score_frame(pred, fixset, metrics, seed, n_neg_per_pos=DEFAULT_NEG_PER_POS,
                sigma_fraction=DEFAULT_SIGMA_FRACTION):
    """Score one predicted map against one frame's fixations."""
    w, h = fixset.dims
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != (h, w):
        pred = resize_bilinear(pred, (w, h)).astype(np.float64)
    out = {}
    if "chi2" in metrics:
        gt = densify(fixset, sigma_fraction=sigma_fraction)
        out["one_minus_chi2"] = 1.0 - chi2_distance(as_distribution(pred), gt)
    if "auc" in metrics:
        out["auc"] = auc_score(pred, fixset.points(), n_neg_per_pos, seed)
    return out


def gt_bound_frame(fixset, metrics, cfg, frame, seed, n_neg_per_pos=DEFAULT_NEG_PER_POS,
                   sigma_fraction=DEFAULT_SIGMA_FRACTION):
    """Split-half upper bound: one half's map predicting the other half."""
    viewers = [v for v in _canonical_viewers(fixset) if len(fixset.points_by_viewer[v])]
    n = len(viewers)
    if n < 2:
        return None
    if cfg.exhaustive:
        subsets = balanced_splits(n)
    else:
        rng = np.random.default_rng([cfg.rng_seed, frame])
        subsets = [tuple(sorted(rng.permutation(n)[: n // 2])) for _ in range(cfg.num_splits)]
    chi, auc = [], []
    for k, subset in enumerate(subsets):
        inside = [viewers[i] for i in subset]
        outside = [viewers[i] for i in range(n) if i not in subset]
        a = densify(fixset.points(inside), fixset.dims, sigma_fraction)
        b = densify(fixset.points(outside), fixset.dims, sigma_fraction)
        chi.append(chi2_distance(a, b))
        if "auc" in metrics:
            auc.append(auc_score(a, fixset.points(outside), n_neg_per_pos, seed + [k]))
    out = {}
    if "chi2" in metrics:
        out["one_minus_chi2"] = 1.0 - float(np.mean(chi))
    if "auc" in metrics:
        out["auc"] = float(np.mean(auc))
    return out


def evaluate_split(methods, videos, metrics=METRICS, seed=0, gt_bound=False,
                   n_neg_per_pos=DEFAULT_NEG_PER_POS, homogeneity=HomogeneityConfig(),
                   sigma_fraction=DEFAULT_SIGMA_FRACTION):
    """Score every method on every fixated frame of the given test videos.

    ``methods`` maps a method name to a callable ``f(video_id)`` returning a
    sequence (or frame-indexed mapping) of saliency maps. ``videos`` is a
    list of EvalVideo restricted to the test split by the caller.
    """
    metrics = tuple(metrics)
    report = MetricReport()
    for name, producer in methods.items():
        for video in videos:
            preds = producer(video.video_id)
            if preds is None:
                raise MissingPredictions(f"{name}: no predictions for {video.video_id}")
            for frame, fixset in sorted(video.fixsets.items()):
                if len(fixset) == 0:
                    continue
                try:
                    pred = preds[frame]
                except (IndexError, KeyError):
                    raise MissingPredictions(
                        f"{name}: missing prediction for {video.video_id} frame {frame}") from None
                scores = score_frame(pred, fixset, metrics, frame_seed(seed, video.video_id, frame),
                                     n_neg_per_pos, sigma_fraction)
                for metric, value in scores.items():
                    report.add(name, video.video_id, frame, metric, value)
    if gt_bound:
        for video in videos:
            for frame, fixset in sorted(video.fixsets.items()):
                scores = gt_bound_frame(fixset, metrics, homogeneity, frame,
                                        frame_seed(seed, video.video_id, frame),
                                        n_neg_per_pos, sigma_fraction)
                if scores is None:
                    continue
                for metric, value in scores.items():
                    report.add("ground_truth_bound", video.video_id, frame, metric, value)
    return report
