"""On-disk dataset layout and loaders.

Layout under a dataset root::

    manifest.json
    videos/<id>/rgb/000000.png        8-bit RGB
    videos/<id>/depth/000000.png      16-bit single channel, 0 = invalid
    videos/<id>/fixations.csv         frame,viewer,x,y  (x, y normalized)
    videos/<id>/annotations.csv       frame,label,x,y,sigma  (optional)

Frames are resampled to the working resolution on load: bilinear for color,
nearest neighbour for depth. Depth is min-max normalized per video over the
valid pixels.
"""

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import (
    CorruptFile,
    CountMismatch,
    DimensionMismatch,
    MissingFrame,
    OutOfRange,
    ParseError,
    SplitIncomplete,
)

WORKING_DIMS = (128, 96)  # (W, H)
DEFAULT_FPS = 30.0
DEPTH_UNITS = ("mm", "disparity", "normalized")
SPLITS = ("train", "test")
ANNOTATION_LABELS = ("face", "body")

_FRAME_RE = re.compile(r"^(\d{6})\.png$")


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RgbdFrame:
    """One synchronized color + depth frame at working resolution."""

    index: int
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W) in [0, 1]
    valid_mask: np.ndarray = None  # (H, W) bool

    def __post_init__(self):
        rgb = np.asarray(self.rgb)
        depth = np.asarray(self.depth)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise DimensionMismatch(f"rgb must be HxWx3, got {rgb.shape}")
        if depth.shape != rgb.shape[:2]:
            raise DimensionMismatch(f"depth {depth.shape} does not match rgb {rgb.shape[:2]}")
        mask = np.ones(depth.shape, bool) if self.valid_mask is None else self.valid_mask
        object.__setattr__(self, "rgb", _frozen(rgb, np.float32))
        object.__setattr__(self, "depth", _frozen(depth, np.float32))
        object.__setattr__(self, "valid_mask", _frozen(mask, bool))

    @property
    def dims(self):
        return (self.rgb.shape[1], self.rgb.shape[0])


@dataclass(frozen=True)
class VideoSequence:
    video_id: str
    frames: tuple
    fps: float = DEFAULT_FPS
    working_dims: tuple = WORKING_DIMS

    def __post_init__(self):
        frames = tuple(self.frames)
        for i, fr in enumerate(frames):
            if fr.index != i:
                raise MissingFrame(f"{self.video_id}: frame {i} has index {fr.index}")
            if fr.dims != tuple(self.working_dims):
                raise DimensionMismatch(
                    f"{self.video_id}: frame {i} is {fr.dims}, expected {self.working_dims}"
                )
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]


@dataclass(frozen=True)
class FixationRecord:
    frame_index: int
    viewer_id: str
    x: float
    y: float


@dataclass(frozen=True)
class Annotation:
    frame_index: int
    label: str
    x: float
    y: float
    sigma: float


@dataclass(frozen=True)
class VideoEntry:
    video_id: str
    frames: int
    depth_unit: str = "normalized"
    annotations: str = None


@dataclass
class DatasetManifest:
    videos: list
    split: dict = field(default_factory=dict)

    @property
    def ids(self):
        return [v.video_id for v in self.videos]

    def ids_for(self, split):
        return [v.video_id for v in self.videos if self.split.get(v.video_id) == split]

    def entry(self, video_id):
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)

    def to_json(self):
        return {
            "videos": [
                {"id": v.video_id, "frames": v.frames, "depth_unit": v.depth_unit,
                 "annotations": v.annotations}
                for v in self.videos
            ],
            "split": dict(self.split),
        }


# ---------------------------------------------------------------------------
# resampling


def resize_bilinear(img, dims):
    """Resize an (H, W) or (H, W, C) float image to dims=(W, H).

    Returns the input unchanged (as float32) when the size already matches.
    """
    img = np.asarray(img, dtype=np.float32)
    w, h = dims
    if img.shape[:2] == (h, w):
        return img.copy()
    if img.ndim == 2:
        return np.asarray(Image.fromarray(img).resize((w, h), Image.BILINEAR))
    chans = [np.asarray(Image.fromarray(np.ascontiguousarray(img[..., c]))
                        .resize((w, h), Image.BILINEAR)) for c in range(img.shape[2])]
    return np.stack(chans, axis=-1)


def resize_nearest(img, dims):
    img = np.asarray(img)
    w, h = dims
    src_h, src_w = img.shape[:2]
    if (src_h, src_w) == (h, w):
        return img.copy()
    rows = np.minimum(((np.arange(h) + 0.5) * src_h / h).astype(int), src_h - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * src_w / w).astype(int), src_w - 1)
    return img[rows[:, None], cols[None, :]]


def fill_invalid(depth, valid):
    """Fill invalid pixels from the nearest valid pixel."""
    if valid.all() or not valid.any():
        return depth
    _, (ri, ci) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return depth[ri, ci]


def normalize_depth(raw_frames, masks):
    """Per-video min-max normalization over valid pixels; zero range -> 0."""
    valid_vals = [d[m] for d, m in zip(raw_frames, masks) if m.any()]
    if not valid_vals:
        return [np.zeros_like(d, dtype=np.float32) for d in raw_frames]
    lo = min(float(v.min()) for v in valid_vals)
    hi = max(float(v.max()) for v in valid_vals)
    if hi <= lo:
        return [np.zeros_like(d, dtype=np.float32) for d in raw_frames]
    return [np.clip((d.astype(np.float64) - lo) / (hi - lo), 0.0, 1.0).astype(np.float32)
            for d in raw_frames]


# ---------------------------------------------------------------------------
# loaders


def _frame_indices(folder):
    if not folder.is_dir():
        return []
    idx = []
    for p in folder.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            idx.append(int(m.group(1)))
    return sorted(idx)


def _check_contiguous(indices, what):
    for expected, got in enumerate(indices):
        if got != expected:
            raise MissingFrame(f"{what}: frame {expected:06d} missing")


def _read_png(path, mode):
    try:
        with Image.open(path) as im:
            if mode == "rgb":
                return np.asarray(im.convert("RGB"), dtype=np.uint8)
            arr = np.asarray(im)
    except (OSError, ValueError, SyntaxError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr.astype(np.float64)


def video_dir(root, video_id):
    return Path(root) / "videos" / video_id


def load_video(root_path, video_id, dims=WORKING_DIMS, fps=DEFAULT_FPS):
    """Load one video from a dataset root into a VideoSequence."""
    vdir = video_dir(root_path, video_id)
    rgb_idx = _frame_indices(vdir / "rgb")
    depth_idx = _frame_indices(vdir / "depth")
    if not rgb_idx:
        raise MissingFrame(f"{video_id}: no rgb frames under {vdir / 'rgb'}")
    _check_contiguous(rgb_idx, f"{video_id}/rgb")
    _check_contiguous(depth_idx, f"{video_id}/depth")
    if len(depth_idx) != len(rgb_idx):
        missing = min(set(rgb_idx) ^ set(depth_idx))
        raise MissingFrame(f"{video_id}: frame {missing:06d} missing in one stream")

    rgbs, raws, masks = [], [], []
    for i in rgb_idx:
        rgb = _read_png(vdir / "rgb" / f"{i:06d}.png", "rgb")
        depth = _read_png(vdir / "depth" / f"{i:06d}.png", "depth")
        if rgb.shape[:2] != depth.shape:
            raise DimensionMismatch(
                f"{video_id} frame {i}: rgb {rgb.shape[:2]} vs depth {depth.shape}")
        rgbs.append(np.clip(resize_bilinear(rgb.astype(np.float32) / 255.0, dims), 0.0, 1.0))
        depth = resize_nearest(depth, dims)
        valid = depth > 0
        raws.append(fill_invalid(depth, valid))
        masks.append(valid)

    depths = normalize_depth(raws, masks)
    frames = [RgbdFrame(i, rgb, d, m) for i, (rgb, d, m) in enumerate(zip(rgbs, depths, masks))]
    return VideoSequence(video_id, frames, fps=fps, working_dims=tuple(dims))


def _open_csv(path, header):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows or [c.strip() for c in rows[0]] != header:
        raise ParseError(f"{path}: expected header {','.join(header)}", line=1)
    return rows[1:]


def load_fixations(root_path, video_id, frame_count=None):
    """Read fixations.csv, sorted by (frame_index, viewer_id)."""
    path = video_dir(root_path, video_id) / "fixations.csv"
    records = []
    for lineno, row in enumerate(_open_csv(path, ["frame", "viewer", "x", "y"]), start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(f"{path}: expected 4 fields, got {len(row)}", line=lineno)
        try:
            frame, viewer, x, y = int(row[0]), row[1].strip(), float(row[2]), float(row[3])
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", line=lineno) from exc
        if frame < 0 or not viewer:
            raise ParseError(f"{path}: bad frame or viewer", line=lineno)
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise OutOfRange(f"{path}: line {lineno}: ({x}, {y}) outside [0,1]^2")
        if frame_count is not None and frame >= frame_count:
            raise OutOfRange(f"{path}: line {lineno}: frame {frame} >= {frame_count}")
        records.append(FixationRecord(frame, viewer, x, y))
    records.sort(key=lambda r: (r.frame_index, r.viewer_id))
    return records


def load_annotations(root_path, video_id, filename="annotations.csv"):
    """Read the optional face/body annotations; missing file -> []."""
    path = video_dir(root_path, video_id) / filename
    if not path.exists():
        return []
    out = []
    for lineno, row in enumerate(_open_csv(path, ["frame", "label", "x", "y", "sigma"]), start=2):
        if not row:
            continue
        try:
            frame, label = int(row[0]), row[1].strip()
            x, y, sigma = float(row[2]), float(row[3]), float(row[4])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: {exc}", line=lineno) from exc
        if label not in ANNOTATION_LABELS:
            raise ParseError(f"{path}: unknown label {label!r}", line=lineno)
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0) or sigma <= 0:
            raise OutOfRange(f"{path}: line {lineno}: bad annotation geometry")
        out.append(Annotation(frame, label, x, y, sigma))
    return out


def group_by_frame(records):
    out = {}
    for r in records:
        out.setdefault(r.frame_index, []).append(r)
    return out


def read_manifest(root_path):
    path = Path(root_path) / "manifest.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise CountMismatch(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from exc
    try:
        videos = [
            VideoEntry(str(v["id"]), int(v["frames"]), v.get("depth_unit", "normalized"),
                       v.get("annotations"))
            for v in doc["videos"]
        ]
        split = {str(k): str(s) for k, s in doc.get("split", {}).items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed manifest ({exc})") from exc
    for v in videos:
        if v.depth_unit not in DEPTH_UNITS:
            raise ParseError(f"{path}: {v.video_id}: unknown depth_unit {v.depth_unit!r}")
    for vid, s in split.items():
        if s not in SPLITS:
            raise ParseError(f"{path}: {vid}: split must be train or test, got {s!r}")
    return DatasetManifest(videos, split)


def write_manifest(root_path, manifest):
    path = Path(root_path) / "manifest.json"
    path.write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def validate_manifest(root_path, deep=True):
    """Check the manifest against the files on disk.

    With ``deep=True`` every video is fully decoded; otherwise only the
    frame layout is checked.
    """
    manifest = read_manifest(root_path)
    ids = manifest.ids
    if len(set(ids)) != len(ids):
        raise CountMismatch("duplicate video ids in manifest")
    missing = [i for i in ids if i not in manifest.split]
    extra = [i for i in manifest.split if i not in ids]
    if missing or extra:
        raise SplitIncomplete(f"split does not partition videos (missing={missing}, unknown={extra})")
    for v in manifest.videos:
        vdir = video_dir(root_path, v.video_id)
        if not vdir.is_dir():
            raise CountMismatch(f"{v.video_id}: declared {v.frames} frames, directory absent")
        n = len(_frame_indices(vdir / "rgb"))
        if n != v.frames:
            raise CountMismatch(f"{v.video_id}: declared {v.frames} frames, found {n}")
        if deep:
            load_video(root_path, v.video_id)
            load_fixations(root_path, v.video_id, frame_count=v.frames)
            load_annotations(root_path, v.video_id, v.annotations or "annotations.csv")
        else:
            _check_contiguous(_frame_indices(vdir / "rgb"), f"{v.video_id}/rgb")
    return manifest


# ---------------------------------------------------------------------------
# writers (used by the synthetic generator and tests)


def write_frame(root_path, video_id, index, rgb, depth_u16):
    vdir = video_dir(root_path, video_id)
    (vdir / "rgb").mkdir(parents=True, exist_ok=True)
    (vdir / "depth").mkdir(parents=True, exist_ok=True)
    rgb8 = np.clip(np.rint(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(rgb8).save(vdir / "rgb" / f"{index:06d}.png")
    Image.fromarray(np.asarray(depth_u16, dtype=np.uint16)).save(vdir / "depth" / f"{index:06d}.png")


def write_fixations(root_path, video_id, records):
    path = video_dir(root_path, video_id) / "fixations.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["frame,viewer,x,y"]
    for r in sorted(records, key=lambda r: (r.frame_index, r.viewer_id)):
        lines.append(f"{r.frame_index},{r.viewer_id},{r.x:.6f},{r.y:.6f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_annotations(root_path, video_id, annotations):
    path = video_dir(root_path, video_id) / "annotations.csv"
    lines = ["frame,label,x,y,sigma"]
    for a in annotations:
        lines.append(f"{a.frame_index},{a.label},{a.x:.6f},{a.y:.6f},{a.sigma:.4f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
