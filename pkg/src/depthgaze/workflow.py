"""Dataset-level glue shared by the command line and the test-suite."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .autoencoder import NetworkConfig, build_network, predict_sequence, prepare_training_video, train
from .dataset_io import (
    WORKING_DIMS,
    load_annotations,
    load_fixations,
    load_video,
    validate_manifest,
)
from .errors import CorruptFile, MissingPredictions
from .evaluation import EvalVideo
from .fixations import DEFAULT_SIGMA_FRACTION, densify, fixation_sets
from .tensor_core import load_weights, save_weights
from .transition import run_baseline, train_baseline


@dataclass
class LoadedVideo:
    video: object
    fixsets: dict  # frame -> FixationSet
    annotations: list

    @property
    def video_id(self):
        return self.video.video_id

    def gt_maps(self, sigma_fraction=DEFAULT_SIGMA_FRACTION):
        """Densified ground truth for every frame that has fixations."""
        return {f: densify(s, sigma_fraction=sigma_fraction) for f, s in self.fixsets.items() if len(s)}

    def eval_video(self):
        return EvalVideo(self.video_id, len(self.video), self.fixsets, self.video.working_dims)


def load_dataset(root, split=None, ids=None, dims=WORKING_DIMS, deep=False):
    """Load the videos of one split (or the listed ids) with fixations and annotations."""
    manifest = validate_manifest(root, deep=deep)
    if ids is None:
        ids = manifest.ids if split is None else manifest.ids_for(split)
    out = []
    for vid in ids:
        entry = manifest.entry(vid)
        video = load_video(root, vid, dims)
        records = load_fixations(root, vid, frame_count=len(video))
        notes = load_annotations(root, vid, entry.annotations or "annotations.csv")
        out.append(LoadedVideo(video, fixation_sets(records, dims), notes))
    return out


# ---------------------------------------------------------------------------
# model training / prediction


def train_cnn(videos, cfg, use_depth=True, progress=None):
    dims = videos[0].video.working_dims if videos else WORKING_DIMS
    prepared = [prepare_training_video(v.video, v.gt_maps(), use_depth, cfg) for v in videos]
    return train(prepared, cfg, dims, progress=progress)


def network_config_from_weights(arrays, dims=WORKING_DIMS):
    """Recover the architecture from the parameter shapes of a weight file."""
    if len(arrays) != 16:
        raise CorruptFile(f"expected 16 parameter tensors, found {len(arrays)}")
    f1, f2, f3 = arrays[0].shape[0], arrays[2].shape[0], arrays[4].shape[0]
    kernels = (arrays[0].shape[2], arrays[2].shape[2], arrays[4].shape[2])
    latent, flat = arrays[6].shape
    w, h = dims
    cells = flat // f3
    factor = int(round(np.sqrt((w // 8) * (h // 8) / cells))) if cells else 0
    if factor < 1 or (w // (8 * factor)) * (h // (8 * factor)) * f3 != flat:
        raise CorruptFile("weight shapes do not match the working resolution")
    return NetworkConfig((f1, f2, f3), kernels, latent, factor)


def save_network(net, path):
    save_weights(net.get_params(), path)


def load_network(path, dims=WORKING_DIMS):
    arrays = load_weights(path)
    ncfg = network_config_from_weights(arrays, dims)
    net = build_network(ncfg, dims)
    net.set_params(arrays)
    return net, ncfg


def predict_cnn(net, video, cfg, use_depth=True):
    return predict_sequence(net, video, use_depth, cfg)


def train_svm_baseline(videos, cfg, use_depth=True):
    return train_baseline([(v.video, v.gt_maps(), v.annotations) for v in videos], cfg, use_depth)


def predict_baseline(model, loaded, cfg, use_depth=True):
    return run_baseline(loaded.video, model, cfg, use_depth, loaded.annotations)


# ---------------------------------------------------------------------------
# prediction directories: <dir>/<video_id>/%06d.png, 8-bit, 255 = max


def to_uint8(saliency):
    s = np.clip(np.asarray(saliency, dtype=np.float64), 0.0, None)
    top = s.max()
    if top <= 0 or not np.isfinite(top):
        return np.zeros(s.shape, np.uint8)
    return np.rint(255.0 * s / top).astype(np.uint8)


def write_predictions(out_dir, video_id, maps):
    folder = Path(out_dir) / video_id
    folder.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(maps):
        Image.fromarray(to_uint8(m)).save(folder / f"{i:06d}.png")
    return folder


def prediction_folder(pred_dir, video_id):
    folder = Path(pred_dir) / video_id
    if not folder.is_dir():
        raise MissingPredictions(f"no predictions for {video_id} under {pred_dir}")
    return folder


def read_predictions(pred_dir, video_id, num_frames):
    folder = prediction_folder(pred_dir, video_id)
    maps = []
    for i in range(num_frames):
        path = folder / f"{i:06d}.png"
        if not path.exists():
            raise MissingPredictions(f"{path} missing")
        with Image.open(path) as im:
            maps.append(np.asarray(im.convert("L"), dtype=np.float64) / 255.0)
    return maps


# ---------------------------------------------------------------------------
# overlays


def colormap(s):
    """Blue -> cyan -> yellow -> red ramp for values in [0, 1]; returns (..., 3)."""
    s = np.clip(np.asarray(s, dtype=np.float64), 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4 * s - 3), 0, 1)
    g = np.clip(1.5 - np.abs(4 * s - 2), 0, 1)
    b = np.clip(1.5 - np.abs(4 * s - 1), 0, 1)
    return np.stack([r, g, b], axis=-1)


def overlay_frame(rgb, saliency, blend=0.5):
    """Alpha-blend the color-mapped map over the frame with alpha = blend * saliency."""
    rgb = np.asarray(rgb, dtype=np.float64)
    s = np.clip(np.asarray(saliency, dtype=np.float64), 0.0, 1.0)
    if s.shape != rgb.shape[:2]:
        raise MissingPredictions(f"prediction {s.shape} does not match frame {rgb.shape[:2]}")
    alpha = blend * s[..., None]
    return (1 - alpha) * rgb + alpha * colormap(s)


def write_overlays(video, maps, out_dir, blend=0.5):
    if len(maps) != len(video):
        raise MissingPredictions(f"{video.video_id}: {len(maps)} predictions for {len(video)} frames")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for frame, m in zip(video.frames, maps):
        img = overlay_frame(frame.rgb, m, blend)
        Image.fromarray(np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)).save(out / f"{frame.index:06d}.png")
    return out
