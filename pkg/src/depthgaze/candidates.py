"""Sparse attention candidates: mean-shift modes + Gaussian fits.

Candidates come from four places: modes of the static saliency map, modes
of the motion-difference map, annotated faces/bodies, and a frame-center
candidate that is always present.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMap
from .static_saliency import frame_center, max_normalize

DEFAULT_BANDWIDTH = 8.0
K_MAX = 10
MODE_FLOOR = 0.25
MOTION_FLOOR = 0.01
SIGMA_FLOOR = 1.0
CONVERGE_TOL = 0.1
MAX_SHIFT_ITER = 200

SOURCES = ("static", "motion", "annotation", "center")
LABELS = ("face", "body", "center")


@dataclass(frozen=True)
class Candidate:
    center: tuple  # (x, y) pixels
    sigma: float
    saliency: float
    mean_depth: float = 0.0
    labels: frozenset = frozenset()
    source: str = "static"

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("candidate sigma must be positive")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if ("center" in self.labels) != (self.source == "center"):
            raise ValueError("center label iff source is center")


@dataclass
class CandidateSet:
    frame_index: int
    candidates: list = field(default_factory=list)

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i):
        return self.candidates[i]


@dataclass(frozen=True)
class CandidateConfig:
    bandwidth: float = DEFAULT_BANDWIDTH
    k_max: int = K_MAX
    mode_floor: float = MODE_FLOOR
    motion_floor: float = MOTION_FLOOR
    center_sigma_fraction: float = 0.05

    @property
    def merge_radius(self):
        return self.bandwidth / 2.0


def _seed_grid(w, h, spacing):
    # symmetric about the frame center so mirrored inputs get mirrored seeds
    def axis(n):
        mid = (n - 1) / 2.0
        k = int(np.floor(mid / spacing))
        return mid + spacing * np.arange(-k, k + 1)

    xs, ys = np.meshgrid(axis(w), axis(h))
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def _window_offsets(radius):
    r = int(np.ceil(radius)) + 1
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    return dx.ravel(), dy.ravel()


def _window_stats(m, pts, radius, offsets):
    """Flat-kernel weighted centroid and mass around each point."""
    h, w = m.shape
    dx, dy = offsets
    px = np.rint(pts[:, :1]).astype(int) + dx[None, :]
    py = np.rint(pts[:, 1:]).astype(int) + dy[None, :]
    inside = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    inside &= (px - pts[:, :1]) ** 2 + (py - pts[:, 1:]) ** 2 <= radius * radius
    wts = np.where(inside, m[np.clip(py, 0, h - 1), np.clip(px, 0, w - 1)], 0.0)
    mass = wts.sum(axis=1)
    safe = np.where(mass > 0, mass, 1.0)
    cx = (wts * px).sum(axis=1) / safe
    cy = (wts * py).sum(axis=1) / safe
    return np.stack([cx, cy], axis=1), mass


def mean_shift_modes(saliency, bandwidth=DEFAULT_BANDWIDTH, mode_floor=MODE_FLOOR):
    """Modes of a non-negative map via flat-kernel mean shift.

    Seeds sit on a bandwidth/2 grid; modes closer than bandwidth/2 are merged
    (the denser one survives) and modes whose map value is below
    ``mode_floor * max`` are discarded. Returns a list of (x, y).
    """
    m = np.clip(np.asarray(saliency, dtype=np.float64), 0.0, None)
    if m.max() <= 0 or np.ptp(m) <= 1e-12 * m.max():
        raise DegenerateMap("map has no contrast")
    h, w = m.shape
    offsets = _window_offsets(bandwidth)
    pts = _seed_grid(w, h, bandwidth / 2.0)
    active = np.ones(len(pts), bool)
    for _ in range(MAX_SHIFT_ITER):
        if not active.any():
            break
        new, mass = _window_stats(m, pts[active], bandwidth, offsets)
        moved = np.hypot(*(new - pts[active]).T)
        idx = np.flatnonzero(active)
        keep = mass > 0
        pts[idx[keep]] = new[keep]
        done = (moved < CONVERGE_TOL) | ~keep
        active[idx[done]] = False

    _, mass = _window_stats(m, pts, bandwidth, offsets)
    order = np.lexsort((pts[:, 1], pts[:, 0], -mass))
    top = m.max()
    modes = []
    for i in order:
        if mass[i] <= 0:
            continue
        p = pts[i]
        if any(np.hypot(p[0] - q[0], p[1] - q[1]) < bandwidth / 2.0 for q in modes):
            continue
        modes.append((float(p[0]), float(p[1])))
    out = []
    for p in modes:
        x, y = int(round(p[0])), int(round(p[1]))
        if m[min(max(y, 0), h - 1), min(max(x, 0), w - 1)] >= mode_floor * top:
            out.append(p)
    return out


def _truncation_factor(t):
    # E[r^2 | r < R] / (2 sigma^2) for a 2-D isotropic Gaussian, t = R^2 / (2 sigma^2)
    if t > 50:
        return 1.0
    e = np.exp(-t)
    return 1.0 - t * e / (1.0 - e)


def fit_gaussian(saliency, mode, bandwidth=DEFAULT_BANDWIDTH):
    """Isotropic sigma from second moments within 2*bandwidth, and the peak value.

    The moment is corrected for truncation at the window radius; sigma is
    clamped to [1, 2*bandwidth].
    """
    m = np.clip(np.asarray(saliency, dtype=np.float64), 0.0, None)
    h, w = m.shape
    x0, y0 = mode
    radius = 2.0 * bandwidth
    ys, xs = np.mgrid[0:h, 0:w]
    r2 = (xs - x0) ** 2 + (ys - y0) ** 2
    win = r2 <= radius * radius
    wts = m[win]
    amplitude = float(m[min(max(int(round(y0)), 0), h - 1), min(max(int(round(x0)), 0), w - 1)])
    total = wts.sum()
    if total <= 0:
        return SIGMA_FLOOR, amplitude
    m2 = float((wts * r2[win]).sum() / total)
    var = m2 / 2.0
    for _ in range(50):
        if var <= 0:
            break
        t = radius * radius / (2.0 * var)
        nxt = m2 / (2.0 * _truncation_factor(t))
        if not np.isfinite(nxt) or nxt > radius * radius:
            var = radius * radius
            break
        if abs(nxt - var) < 1e-10:
            var = nxt
            break
        var = nxt
    sigma = float(np.clip(np.sqrt(max(var, 0.0)), SIGMA_FLOOR, radius))
    return sigma, amplitude


def disk_mean(grid, center, radius):
    """Mean of ``grid`` over the disk of ``radius`` around (x, y); at least one pixel."""
    g = np.asarray(grid, dtype=np.float64)
    h, w = g.shape
    x0, y0 = center
    r = max(radius, 0.5)
    xlo, xhi = max(int(np.floor(x0 - r)), 0), min(int(np.ceil(x0 + r)), w - 1)
    ylo, yhi = max(int(np.floor(y0 - r)), 0), min(int(np.ceil(y0 + r)), h - 1)
    ys, xs = np.mgrid[ylo : yhi + 1, xlo : xhi + 1]
    sel = (xs - x0) ** 2 + (ys - y0) ** 2 <= r * r
    if not sel.any():
        return float(g[min(max(int(round(y0)), 0), h - 1), min(max(int(round(x0)), 0), w - 1)])
    return float(g[ylo : yhi + 1, xlo : xhi + 1][sel].mean())


def _blob_candidates(m, source, depth, cfg):
    try:
        modes = mean_shift_modes(m, cfg.bandwidth, cfg.mode_floor)
    except DegenerateMap:
        return []
    out = []
    for p in modes:
        sigma, amp = fit_gaussian(m, p, cfg.bandwidth)
        d = disk_mean(depth, p, sigma) if depth is not None else 0.0
        out.append(Candidate(p, sigma, float(np.clip(amp, 0.0, 1.0)), d, frozenset(), source))
    return out


def extract_candidates(static_map, motion_feats, annotations, dims, depth=None,
                       frame_index=0, cfg=CandidateConfig()):
    """Candidate set for one frame.

    ``annotations`` are objects with ``label``, ``x``, ``y`` (normalized) and
    ``sigma`` (pixels). ``depth`` (H x W, normalized) feeds each candidate's
    mean depth within one sigma.
    """
    w, h = dims
    static = max_normalize(static_map) if static_map is not None else np.zeros((h, w))
    found = _blob_candidates(static, "static", depth, cfg)
    if motion_feats is not None:
        mag = np.abs(np.asarray(motion_feats.dog_mag, dtype=np.float64))
        if mag.max() >= cfg.motion_floor:
            found += _blob_candidates(mag / mag.max(), "motion", depth, cfg)

    cpt = frame_center(dims)
    csig = cfg.center_sigma_fraction * float(np.hypot(w, h))
    cval = float(static[min(int(round(cpt[1])), h - 1), min(int(round(cpt[0])), w - 1)])
    center = Candidate(cpt, csig, cval, disk_mean(depth, cpt, csig) if depth is not None else 0.0,
                       frozenset({"center"}), "center")

    annotated = []
    for a in annotations or ():
        p = (a.x * (w - 1), a.y * (h - 1))
        d = disk_mean(depth, p, a.sigma) if depth is not None else 0.0
        annotated.append(Candidate(p, float(a.sigma), 1.0, d, frozenset({a.label}), "annotation"))

    found.sort(key=lambda c: (-c.saliency, SOURCES.index(c.source), c.center))
    accepted = [center]
    for cand in annotated + found:
        dists = [np.hypot(cand.center[0] - c.center[0], cand.center[1] - c.center[1]) for c in accepted]
        j = int(np.argmin(dists))
        if dists[j] < cfg.merge_radius:
            extra = cand.labels - {"center"}
            if extra - accepted[j].labels:
                old = accepted[j]
                accepted[j] = Candidate(old.center, old.sigma, old.saliency, old.mean_depth,
                                        old.labels | extra, old.source)
            continue
        accepted.append(cand)

    others = sorted(accepted[1:], key=lambda c: -c.saliency)[: cfg.k_max - 1]
    return CandidateSet(frame_index, [accepted[0]] + others)
