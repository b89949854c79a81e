"""Fixation densification and split-half ground-truth homogeneity."""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import EmptyFixationSet, NoScorableFrames, TooFewViewers

DEFAULT_SIGMA_FRACTION = 0.05


def to_pixels(x, y, dims):
    """Normalized [0,1] coordinates -> continuous pixel coordinates."""
    w, h = dims
    return x * (w - 1), y * (h - 1)


def to_normalized(px, py, dims):
    w, h = dims
    return px / (w - 1), py / (h - 1)


def kernel_sigma(dims, sigma_fraction=DEFAULT_SIGMA_FRACTION):
    w, h = dims
    return sigma_fraction * float(np.hypot(w, h))


@dataclass
class FixationSet:
    """Per-viewer fixation points (pixel coordinates) for one frame."""

    points_by_viewer: dict
    dims: tuple

    def __post_init__(self):
        w, h = self.dims
        clean = {}
        for viewer, pts in self.points_by_viewer.items():
            pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
            if pts.size and (pts.min() < 0 or (pts[:, 0] > w - 1).any() or (pts[:, 1] > h - 1).any()):
                raise ValueError(f"viewer {viewer}: fixation outside frame bounds")
            clean[viewer] = pts
        self.points_by_viewer = clean

    @classmethod
    def from_records(cls, records, dims):
        by_viewer = {}
        for r in records:
            by_viewer.setdefault(r.viewer_id, []).append(to_pixels(r.x, r.y, dims))
        return cls(by_viewer, tuple(dims))

    @property
    def viewers(self):
        return list(self.points_by_viewer)

    def points(self, viewers=None):
        viewers = self.viewers if viewers is None else viewers
        chunks = [self.points_by_viewer[v] for v in viewers]
        if not chunks:
            return np.zeros((0, 2))
        return np.concatenate(chunks, axis=0)

    def __len__(self):
        return sum(len(p) for p in self.points_by_viewer.values())


def densify(fixations, dims=None, sigma_fraction=DEFAULT_SIGMA_FRACTION):
    """Sum of isotropic Gaussians at each fixation, normalized to sum 1.

    ``fixations`` is a FixationSet or an (N, 2) array of pixel coordinates.
    Each Gaussian is evaluated on the pixel grid only (truncated at the
    border) and the total is renormalized.
    """
    if isinstance(fixations, FixationSet):
        dims = fixations.dims if dims is None else dims
        pts = fixations.points()
    else:
        pts = np.asarray(fixations, dtype=np.float64).reshape(-1, 2)
    if dims is None:
        raise ValueError("dims required for raw point arrays")
    if len(pts) == 0:
        raise EmptyFixationSet("cannot densify an empty fixation set")
    if sigma_fraction <= 0:
        raise ValueError("sigma_fraction must be positive")
    w, h = dims
    sigma = kernel_sigma(dims, sigma_fraction)
    gx = np.exp(-((np.arange(w)[None, :] - pts[:, :1]) ** 2) / (2 * sigma**2))
    gy = np.exp(-((np.arange(h)[None, :] - pts[:, 1:]) ** 2) / (2 * sigma**2))
    grid = gy.T @ gx
    return grid / grid.sum()


@dataclass(frozen=True)
class HomogeneityConfig:
    num_splits: int = 10
    rng_seed: int = 0
    exhaustive: bool = False

    def __post_init__(self):
        if self.num_splits < 1:
            raise ValueError("num_splits must be >= 1")


def _canonical_viewers(fixset):
    # order by content so that relabeling viewers cannot change the draws
    def key(v):
        pts = fixset.points_by_viewer[v]
        return (tuple(np.round(pts, 9).ravel()), v)

    return sorted(fixset.viewers, key=key)


def balanced_splits(n_viewers):
    """All subsets of size floor(n/2), as index tuples."""
    return list(itertools.combinations(range(n_viewers), n_viewers // 2))


def homogeneity_score(fixset, cfg=HomogeneityConfig(), frame_index=0,
                      sigma_fraction=DEFAULT_SIGMA_FRACTION):
    """Split-half agreement Q = 1 - mean chi^2 between half-set density maps.

    Random halves are drawn from a stream seeded by (rng_seed, frame_index);
    ``cfg.exhaustive`` averages over every balanced split instead.
    """
    from .evaluation import chi2_distance

    viewers = [v for v in _canonical_viewers(fixset) if len(fixset.points_by_viewer[v])]
    n = len(viewers)
    if n < 2:
        raise TooFewViewers(f"need >= 2 viewers with fixations, got {n}")

    if cfg.exhaustive:
        subsets = balanced_splits(n)
    else:
        rng = np.random.default_rng([cfg.rng_seed, frame_index])
        subsets = [tuple(sorted(rng.permutation(n)[: n // 2])) for _ in range(cfg.num_splits)]

    cache = {}
    total = 0.0
    for subset in subsets:
        if subset not in cache:
            inside = [viewers[i] for i in subset]
            outside = [viewers[i] for i in range(n) if i not in subset]
            a = densify(fixset.points(inside), fixset.dims, sigma_fraction)
            b = densify(fixset.points(outside), fixset.dims, sigma_fraction)
            cache[subset] = chi2_distance(a, b)
        total += cache[subset]
    return 1.0 - total / len(subsets)


def frame_qualities(fixsets, cfg=HomogeneityConfig(), sigma_fraction=DEFAULT_SIGMA_FRACTION):
    """Per-frame Q for every frame with >= 2 viewers; returns (scores, skipped)."""
    scores, skipped = {}, []
    for frame_index in sorted(fixsets):
        fs = fixsets[frame_index]
        if sum(1 for p in fs.points_by_viewer.values() if len(p)) < 2:
            skipped.append(frame_index)
            continue
        scores[frame_index] = homogeneity_score(fs, cfg, frame_index, sigma_fraction)
    return scores, skipped


def video_quality(fixsets, cfg=HomogeneityConfig(), sigma_fraction=DEFAULT_SIGMA_FRACTION):
    """Mean per-frame homogeneity over scorable frames of one video.

    ``fixsets`` maps frame index -> FixationSet. Frames with fewer than two
    viewers are skipped rather than scored 0.
    """
    scores, _ = frame_qualities(fixsets, cfg, sigma_fraction)
    if not scores:
        raise NoScorableFrames("no frame has fixations from two or more viewers")
    return float(np.mean([scores[k] for k in sorted(scores)]))


def fixation_sets(records, dims):
    """Group FixationRecords into per-frame FixationSets."""
    frames = {}
    for r in records:
        frames.setdefault(r.frame_index, []).append(r)
    return {k: FixationSet.from_records(v, dims) for k, v in sorted(frames.items())}
