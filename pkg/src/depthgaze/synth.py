"""Synthetic RGBD scenes with scripted fixations.

Each scene is a flat background with moving discs. Discs bounce inside
their bounding box, nearer discs occlude farther ones, and viewers fixate
according to a policy. Everything is determined by the scene seed.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset_io import (
    WORKING_DIMS,
    DatasetManifest,
    FixationRecord,
    RgbdFrame,
    VideoEntry,
    VideoSequence,
    write_fixations,
    write_frame,
    write_manifest,
    video_dir,
)
from .errors import ParseError
from .flow import write_flow_component

POLICIES = ("follow", "center", "two-cluster")
DEPTH_SCALE = 60000.0
DEPTH_OFFSET = 1000.0


@dataclass(frozen=True)
class BlobSpec:
    color: tuple
    depth: float
    radius: float
    start: tuple  # (x, y) pixels
    velocity: tuple  # pixels per frame
    bounds: tuple = None  # (xmin, ymin, xmax, ymax) for the center; default keeps the disc in frame


@dataclass(frozen=True)
class SceneSpec:
    video_id: str
    num_frames: int
    blobs: tuple
    background_color: tuple = (0.5, 0.5, 0.5)
    background_depth: float = 0.6
    policy: str = "follow"
    follow: int = 0
    num_viewers: int = 8
    jitter: float = 2.0
    cluster_separation: float = 0.0
    cluster_center: tuple = None
    noise: float = 0.0
    seed: int = 0
    dims: tuple = WORKING_DIMS

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown fixation policy {self.policy!r}")
        if self.policy == "follow" and not 0 <= self.follow < len(self.blobs):
            raise ValueError("follow index outside the blob list")
        if self.num_frames < 1 or self.num_viewers < 1:
            raise ValueError("need at least one frame and one viewer")


def _reflect(p, lo, hi):
    span = hi - lo
    if span <= 0:
        return np.full_like(p, lo)
    q = np.mod(p - lo, 2 * span)
    return lo + span - np.abs(q - span)


def _bounds(blob, dims):
    w, h = dims
    if blob.bounds is not None:
        return blob.bounds
    r = blob.radius
    return (r, r, w - 1 - r, h - 1 - r)


def blob_positions(blob, num_frames, dims=WORKING_DIMS):
    """(num_frames, 2) disc centers; the path bounces inside the bounds."""
    xmin, ymin, xmax, ymax = _bounds(blob, dims)
    t = np.arange(num_frames, dtype=np.float64)
    x = _reflect(blob.start[0] + blob.velocity[0] * t, xmin, xmax)
    y = _reflect(blob.start[1] + blob.velocity[1] * t, ymin, ymax)
    return np.stack([x, y], axis=1)


def _coverage(dims, center, radius):
    w, h = dims
    ys, xs = np.mgrid[0:h, 0:w]
    dist = np.hypot(xs - center[0], ys - center[1])
    return np.clip(radius - dist + 0.5, 0.0, 1.0)


def _draw_order(spec):
    # farthest first so nearer discs end up on top
    return sorted(range(len(spec.blobs)), key=lambda i: -spec.blobs[i].depth)


def render_frame(spec, t, positions, rng=None):
    """(rgb in [0,1], depth in [0,1]) for frame ``t``."""
    w, h = spec.dims
    rgb = np.empty((h, w, 3))
    rgb[:] = spec.background_color
    depth = np.full((h, w), float(spec.background_depth))
    for i in _draw_order(spec):
        b = spec.blobs[i]
        a = _coverage(spec.dims, positions[i][t], b.radius)
        rgb = rgb * (1 - a[..., None]) + a[..., None] * np.asarray(b.color, dtype=np.float64)
        depth = np.where(a >= 0.5, b.depth, depth)
    if spec.noise > 0 and rng is not None:
        rgb = rgb + rng.normal(0.0, spec.noise, rgb.shape)
    return np.clip(rgb, 0.0, 1.0), np.clip(depth, 0.0, 1.0)


def true_flow(spec, positions, t0, t1):
    """Exact displacement field from frame t0 to t1, and the moving-pixel mask.

    Pixels take the motion of the topmost disc covering them in frame t0.
    """
    w, h = spec.dims
    u, v = np.zeros((h, w)), np.zeros((h, w))
    mask = np.zeros((h, w), bool)
    for i in _draw_order(spec):
        a = _coverage(spec.dims, positions[i][t0], spec.blobs[i].radius) >= 0.5
        d = positions[i][t1] - positions[i][t0]
        u[a], v[a] = d[0], d[1]
        mask[a] = bool(np.any(d != 0))
    return u, v, mask


def _fixation_points(spec, positions, rng):
    w, h = spec.dims
    n = spec.num_viewers
    pts = np.empty((spec.num_frames, n, 2))
    for t in range(spec.num_frames):
        if spec.policy == "follow":
            base = np.tile(positions[spec.follow][t], (n, 1))
        elif spec.policy == "center":
            base = np.tile([w / 2.0, h / 2.0], (n, 1))
        else:
            cx, cy = spec.cluster_center or (w / 2.0, h / 2.0)
            side = np.where(np.arange(n) < (n + 1) // 2, -0.5, 0.5)
            base = np.stack([cx + side * spec.cluster_separation, np.full(n, cy)], axis=1)
        pts[t] = base + rng.normal(0.0, spec.jitter, (n, 2))
    pts[..., 0] = np.clip(pts[..., 0], 0, w - 1)
    pts[..., 1] = np.clip(pts[..., 1], 0, h - 1)
    return pts


@dataclass
class Scene:
    spec: SceneSpec
    video: VideoSequence
    fixations: list
    positions: list

    def flow(self, t0, t1):
        return true_flow(self.spec, self.positions, t0, t1)


def render_scene(spec):
    """In-memory scene: rendered video (depth as generated), fixations, paths."""
    rng = np.random.default_rng(spec.seed)
    positions = [blob_positions(b, spec.num_frames, spec.dims) for b in spec.blobs]
    frames = []
    for t in range(spec.num_frames):
        rgb, depth = render_frame(spec, t, positions, rng)
        frames.append(RgbdFrame(t, rgb, depth))
    pts = _fixation_points(spec, positions, rng)
    w, h = spec.dims
    records = [FixationRecord(t, f"v{j:02d}", float(pts[t, j, 0] / (w - 1)), float(pts[t, j, 1] / (h - 1)))
               for t in range(spec.num_frames) for j in range(spec.num_viewers)]
    video = VideoSequence(spec.video_id, frames, working_dims=tuple(spec.dims))
    return Scene(spec, video, records, positions)


def generate_scene(spec, out_root, flow_interval=10):
    """Write one scene in the dataset layout plus exact flow sidecars.

    Sidecars ``flow_gt/<t>_u.dgfl`` / ``_v.dgfl`` hold the displacement from
    frame t - flow_interval to frame t. Returns the manifest entry.
    """
    scene = render_scene(spec)
    for fr in scene.video.frames:
        raw = np.rint(DEPTH_OFFSET + DEPTH_SCALE * np.asarray(fr.depth, np.float64)).astype(np.uint16)
        write_frame(out_root, spec.video_id, fr.index, fr.rgb, raw)
    write_fixations(out_root, spec.video_id, scene.fixations)
    gt_dir = video_dir(out_root, spec.video_id) / "flow_gt"
    gt_dir.mkdir(parents=True, exist_ok=True)
    for t in range(flow_interval, spec.num_frames, flow_interval):
        u, v, _ = scene.flow(t - flow_interval, t)
        write_flow_component(gt_dir / f"{t:06d}_u.dgfl", u, 0)
        write_flow_component(gt_dir / f"{t:06d}_v.dgfl", v, 1)
    return VideoEntry(spec.video_id, spec.num_frames, "normalized")


def generate_dataset(specs, split, out_root, flow_interval=10):
    """Write every scene and a manifest; ``split`` maps video id -> train/test."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    entries = [generate_scene(s, out_root, flow_interval) for s in specs]
    manifest = DatasetManifest(entries, dict(split))
    write_manifest(out_root, manifest)
    return manifest


# ---------------------------------------------------------------------------
# corpus presets


def _rand_velocity(rng, lo, hi):
    speed = rng.uniform(lo, hi)
    angle = rng.uniform(0, 2 * np.pi)
    return (float(speed * np.cos(angle)), float(speed * np.sin(angle)))


def _rand_start(rng, dims, margin):
    w, h = dims
    return (float(rng.uniform(margin, w - 1 - margin)), float(rng.uniform(margin, h - 1 - margin)))


def depth_ambiguity_corpus(seed=0, n_train=4, n_test=2, num_frames=61, noise=0.01, dims=WORKING_DIMS):
    """Two discs with the background's color; viewers follow the near one.

    Only depth separates the target from the scene, so a color-only model
    cannot localize it.
    """
    rng = np.random.default_rng(seed)
    specs, split = [], {}
    for i in range(n_train + n_test):
        vid = f"amb{seed:03d}_{i:02d}"
        color = tuple(float(c) for c in rng.uniform(0.3, 0.7, 3))
        radius = float(rng.uniform(7, 10))
        target = BlobSpec(color, 0.2, radius, _rand_start(rng, dims, 12), _rand_velocity(rng, 0.3, 0.8))
        other = BlobSpec(color, 0.9, radius, _rand_start(rng, dims, 12), _rand_velocity(rng, 0.3, 0.8))
        specs.append(SceneSpec(vid, num_frames, (target, other), color, 0.6, "follow", 0,
                               noise=noise, seed=int(rng.integers(2**31))))
        split[vid] = "train" if i < n_train else "test"
    return specs, split


def single_focus_corpus(seed=0, n_train=3, n_test=2, num_frames=61, noise=0.01, dims=WORKING_DIMS):
    """One bright disc on a dark background; viewers follow it."""
    rng = np.random.default_rng(seed)
    specs, split = [], {}
    for i in range(n_train + n_test):
        vid = f"one{seed:03d}_{i:02d}"
        blob = BlobSpec((0.9, 0.8, 0.2), 0.3, float(rng.uniform(6, 9)), _rand_start(rng, dims, 12),
                        _rand_velocity(rng, 0.3, 0.8))
        specs.append(SceneSpec(vid, num_frames, (blob,), (0.15, 0.2, 0.35), 0.7, "follow", 0,
                               noise=noise, seed=int(rng.integers(2**31))))
        split[vid] = "train" if i < n_train else "test"
    return specs, split


def off_center_corpus(seed=0, n_train=4, n_test=2, num_frames=61, noise=0.01, dims=WORKING_DIMS):
    """A visible disc wandering 10-25 px from the frame center; viewers follow it."""
    rng = np.random.default_rng(seed)
    w, h = dims
    cx, cy = w / 2.0, h / 2.0
    specs, split = [], {}
    quadrants = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
    first = int(rng.integers(4))
    for i in range(n_train + n_test):
        vid = f"off{seed:03d}_{i:02d}"
        if i < n_train:
            # training videos cycle through the quadrants so none is unseen at test time
            sx, sy = quadrants[(first + i) % 4]
        else:
            sx, sy = rng.choice([-1.0, 1.0], 2)
        # the box keeps the center between 10 and 25 px from the frame center
        xs = sorted((cx + sx * 7.0, cx + sx * 17.0))
        ys = sorted((cy + sy * 7.0, cy + sy * 17.0))
        bounds = (xs[0], ys[0], xs[1], ys[1])
        start = (float(rng.uniform(xs[0], xs[1])), float(rng.uniform(ys[0], ys[1])))
        blob = BlobSpec((0.9, 0.3, 0.2), 0.3, 7.0, start, _rand_velocity(rng, 0.2, 0.5), bounds)
        specs.append(SceneSpec(vid, num_frames, (blob,), (0.2, 0.35, 0.3), 0.7, "follow", 0,
                               noise=noise, seed=int(rng.integers(2**31))))
        split[vid] = "train" if i < n_train else "test"
    return specs, split


PRESETS = {
    "depth-ambiguity": depth_ambiguity_corpus,
    "single-focus": single_focus_corpus,
    "off-center": off_center_corpus,
}


# ---------------------------------------------------------------------------
# spec documents


def _blob_from_doc(d):
    return BlobSpec(tuple(d["color"]), float(d["depth"]), float(d["radius"]), tuple(d["start"]),
                    tuple(d["velocity"]), tuple(d["bounds"]) if d.get("bounds") else None)


def scene_from_doc(d):
    d = dict(d)
    blobs = tuple(_blob_from_doc(b) for b in d.pop("blobs"))
    for key in ("background_color", "cluster_center", "dims"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return SceneSpec(blobs=blobs, **d)


def scene_to_doc(spec):
    return asdict(spec)


def read_synth_spec(path):
    """Parse a synth document into (scene specs, split).

    Either ``{"preset": name, "seed": s, ...preset kwargs}`` or
    ``{"scenes": [...], "split": {...}}``.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from exc
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    doc.pop("version", None)
    try:
        if "preset" in doc:
            name = doc.pop("preset")
            if name not in PRESETS:
                raise ParseError(f"{path}: unknown preset {name!r}")
            return PRESETS[name](**doc)
        specs = [scene_from_doc(s) for s in doc["scenes"]]
        split = doc.get("split") or {s.video_id: "train" for s in specs}
        return specs, split
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed synth spec ({exc})") from exc
