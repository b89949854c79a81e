"""Recursive convolutional autoencoder for saliency prediction.

The input is a 7-channel frame stack (RGB, flow u/v, depth and the previous
saliency map); the network reconstructs only the current saliency map.
Predictions are fed back as the next step's saliency input, starting from a
center Gaussian.
"""

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .candidates import DEFAULT_BANDWIDTH, fit_gaussian, mean_shift_modes
from .dataset_io import resize_bilinear
from .errors import DegenerateMap, EmptyTrainingSet, GroundTruthMissing, NonFiniteLoss, ShapeMismatch
from .flow import FlowConfig, optical_flow
from .static_saliency import center_prior, gaussian_blob, max_normalize
from .tensor_core import Conv2d, Dense, MaxPool2x2, ReLU, Reshape, Sequential, Unpool2x2

NUM_CHANNELS = 7
CHANNEL_NAMES = ("r", "g", "b", "flow_u", "flow_v", "depth", "prev_saliency")
LATENT_SIZE = 256
DEFAULT_INTERVAL = 10


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture. ``downsample`` shrinks the working frame by block means before the net."""

    features: tuple = (32, 64, 64)
    kernels: tuple = (5, 3, 3)
    latent: int = LATENT_SIZE
    downsample: int = 1

    def input_dims(self, dims):
        w, h = dims
        f = self.downsample
        if w % (8 * f) or h % (8 * f):
            raise ShapeMismatch(f"frame {w}x{h} not divisible by 8*{f}")
        return w // f, h // f


@dataclass(frozen=True)
class TrainConfig:
    """SGD with momentum. Learning rate is ``lr`` until ``decay_start``, then
    halved every ``decay_every`` epochs (defaults: half and an eighth of the
    epoch count, i.e. 200/50 for 400 epochs). ``clip_norm`` optionally caps
    the global gradient norm of each batch."""

    epochs: int = 400
    lr: float = 1e-4
    momentum: float = 0.9
    decay_start: Optional[int] = None
    decay_every: Optional[int] = None
    interval: int = DEFAULT_INTERVAL
    seed: int = 0
    clip_norm: Optional[float] = None
    network: NetworkConfig = NetworkConfig()
    flow: FlowConfig = FlowConfig()

    def learning_rate(self, epoch):
        """Rate for 1-based ``epoch``."""
        start = self.decay_start if self.decay_start is not None else self.epochs // 2
        every = self.decay_every if self.decay_every is not None else max(self.epochs // 8, 1)
        if epoch <= start:
            return self.lr
        return self.lr * 0.5 ** int(np.ceil((epoch - start) / every))


DESK_NETWORK = NetworkConfig(features=(8, 16, 16), downsample=4)
DESK_LR = 1.0


def desk_profile(epochs, seed=0, **overrides):
    """Reduced network and rate for CPU-scale runs; same schedule shape as the default."""
    return TrainConfig(epochs=epochs, lr=DESK_LR, seed=seed, network=DESK_NETWORK, **overrides)


# ---------------------------------------------------------------------------
# network


def build_network(cfg=NetworkConfig(), dims=(128, 96), seed=0, in_channels=NUM_CHANNELS):
    """Encoder (3 conv+pool), latent dense layer, decoder dense + 3 unpool+conv."""
    rng = np.random.default_rng(seed)
    w, h = cfg.input_dims(dims)
    f1, f2, f3 = cfg.features
    k1, k2, k3 = cfg.kernels
    bottleneck = (f3, h // 8, w // 8)
    flat = int(np.prod(bottleneck))
    encoder = [
        Conv2d(in_channels, f1, k1, rng), ReLU(), MaxPool2x2(),
        Conv2d(f1, f2, k2, rng), ReLU(), MaxPool2x2(),
        Conv2d(f2, f3, k3, rng), ReLU(), MaxPool2x2(),
        Reshape((flat,)), Dense(flat, cfg.latent, rng), ReLU(),
    ]
    decoder = [
        Dense(cfg.latent, flat, rng), ReLU(), Reshape(bottleneck),
        Unpool2x2(), Conv2d(f3, f2, k3, rng), ReLU(),
        Unpool2x2(), Conv2d(f2, f1, k2, rng), ReLU(),
        Unpool2x2(), Conv2d(f1, 1, k1, rng),
    ]
    return Sequential(encoder + decoder)


LATENT_LAYER_END = 12  # number of encoder layers, through the latent ReLU


def encode(net, x):
    """Latent code(s) of a batch (N, 7, H, W) -> (N, latent)."""
    for layer in net.layers[:LATENT_LAYER_END]:
        x = layer.forward(x)
    net.clear()
    return x


def mse_loss(pred, target):
    """Mean squared deviation and its gradient wrt ``pred``."""
    e = pred - target
    with np.errstate(over="ignore", invalid="ignore"):  # the caller checks finiteness
        return float(np.mean(e * e)), 2.0 * e / e.size


# ---------------------------------------------------------------------------
# inputs


def block_mean(img, factor):
    if factor == 1:
        return np.asarray(img, dtype=np.float64)
    *lead, h, w = img.shape
    return img.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


def assemble_stack(frame, flow, prev_saliency, use_depth=True):
    """7 x H x W stack: RGB, flow u/W, flow v/W, depth, previous saliency."""
    rgb, depth = (frame.rgb, frame.depth) if hasattr(frame, "rgb") else frame
    rgb = np.asarray(rgb, dtype=np.float64)
    h, w = rgb.shape[:2]
    prev = np.asarray(prev_saliency, dtype=np.float64)
    if flow.u.shape != (h, w) or prev.shape != (h, w) or np.shape(depth) != (h, w):
        raise ShapeMismatch("frame, flow and saliency must share the working resolution")
    d = np.asarray(depth, dtype=np.float64) if use_depth else np.zeros((h, w))
    return np.stack([rgb[..., 0], rgb[..., 1], rgb[..., 2],
                     np.clip(flow.u / w, -1, 1), np.clip(flow.v / w, -1, 1),
                     d, max_normalize(prev)])


def step_indices(num_frames, interval=DEFAULT_INTERVAL):
    """Frames that get a fresh prediction: interval, 2*interval, ..."""
    return list(range(interval, num_frames, interval))


def frame_inputs(video, use_depth, interval=DEFAULT_INTERVAL, flow_cfg=FlowConfig()):
    """The six frame-derived channels at each step, working resolution.

    Flow at step frame t is computed from frame t - interval to frame t.
    """
    out = []
    for t in step_indices(len(video), interval):
        flow = optical_flow(video[t - interval], video[t], use_depth, flow_cfg)
        stack = assemble_stack(video[t], flow, np.zeros(flow.shape), use_depth)
        out.append(stack[:6])
    return out


# the net sees the [0, 1] channels shifted to [-0.5, 0.5]; flow is already signed
INPUT_OFFSET = np.array([0.5, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5])[:, None, None]


def net_input(inputs, prev):
    """Network input for one step: frame channels plus previous saliency, centered."""
    return np.concatenate([inputs, prev[None]]) - INPUT_OFFSET


def _next_input(pred):
    return max_normalize(np.clip(pred, 0.0, 1.0))


@dataclass
class TrainVideo:
    video_id: str
    inputs: list  # per step, 6 x h x w at network resolution
    targets: list  # per step, h x w at network resolution


def prepare_training_video(video, gt_maps, use_depth, cfg=TrainConfig()):
    """Frame channels and max-normalized targets at network resolution.

    ``gt_maps`` maps frame index -> densified ground truth (working dims).
    """
    steps = step_indices(len(video), cfg.interval)
    missing = [t for t in steps if t not in gt_maps]
    if missing:
        raise GroundTruthMissing(f"{video.video_id}: no ground truth for frames {missing[:5]}")
    f = cfg.network.downsample
    inputs = [block_mean(x, f) for x in frame_inputs(video, use_depth, cfg.interval, cfg.flow)]
    targets = [block_mean(max_normalize(gt_maps[t]), f) for t in steps]
    return TrainVideo(video.video_id, inputs, targets)


def initial_saliency(dims, downsample=1):
    return block_mean(center_prior(dims), downsample)


@dataclass
class TrainResult:
    net: Sequential
    log: list  # (epoch, lr, loss)


def train(videos, cfg=TrainConfig(), dims=(128, 96), net=None, progress=None):
    """Train on prepared videos with recursive batches.

    Batch k holds step k of every video that has one; the saliency input of
    step k is the prediction from step k-1 of the same epoch, treated as a
    constant. Step 1 starts from the center Gaussian.
    """
    videos = [v for v in videos if v.inputs]
    if not videos:
        raise EmptyTrainingSet("no training steps")
    if net is None:
        net = build_network(cfg.network, dims, cfg.seed)
    params = net.get_params()
    velocity = [np.zeros_like(p) for p in params]
    s0 = initial_saliency(dims, cfg.network.downsample)
    n_steps = max(len(v.inputs) for v in videos)
    log = []
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate(epoch)
        prev = {v.video_id: s0 for v in videos}
        losses = []
        for k in range(n_steps):
            batch = [v for v in videos if k < len(v.inputs)]
            x = np.stack([net_input(v.inputs[k], prev[v.video_id]) for v in batch])
            y = np.stack([v.targets[k] for v in batch])[:, None]
            out = net.forward(x)
            loss, grad = mse_loss(out, y)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}")
            losses.append(loss)
            net.backward(grad)
            grads = net.get_grads()
            if cfg.clip_norm is not None:
                norm = np.sqrt(math.fsum(float((g * g).sum()) for g in grads))
                if norm > cfg.clip_norm:
                    grads = [g * (cfg.clip_norm / norm) for g in grads]
            for p, g, vel in zip(net.get_params(), grads, velocity):
                vel *= cfg.momentum
                vel -= lr * g
                p += vel
            net.clear()
            for v, o in zip(batch, out):
                prev[v.video_id] = _next_input(o[0])
        log.append((epoch, lr, float(np.mean(losses))))
        if progress is not None:
            progress(log[-1])
    return TrainResult(net, log)


def write_log(log, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["epoch", "lr", "loss"])
        for epoch, lr, loss in log:
            wr.writerow([epoch, repr(lr), repr(loss)])


# ---------------------------------------------------------------------------
# inference


def predict_step(net, inputs, prev):
    """Raw (unclamped) network output for one step at network resolution."""
    return net.forward(net_input(inputs, prev)[None], record=False)[0, 0]


def predict_sequence(net, video, use_depth=True, cfg=TrainConfig(), inputs=None):
    """One saliency map per frame, recursively.

    Frames before the first step carry the center Gaussian; frames from step
    t up to the next step carry the prediction made at t.
    """
    dims = video.working_dims
    f = cfg.network.downsample
    if inputs is None:
        inputs = [block_mean(x, f) for x in frame_inputs(video, use_depth, cfg.interval, cfg.flow)]
    s = initial_saliency(dims, f)
    maps = [center_prior(dims)]
    for x in inputs:
        s = _next_input(predict_step(net, x, s))
        up = s if f == 1 else resize_bilinear(s, dims).astype(np.float64)
        maps.append(max_normalize(np.clip(up, 0.0, 1.0)))
    return [maps[min(t // cfg.interval, len(maps) - 1)] for t in range(len(video))]


def sharpen(saliency, bandwidth=DEFAULT_BANDWIDTH):
    """Re-render a map as a Gaussian mixture at its mean-shift modes.

    Falls back to the center Gaussian when the map has no contrast.
    """
    m = np.asarray(saliency, dtype=np.float64)
    h, w = m.shape
    try:
        modes = mean_shift_modes(m, bandwidth)
    except DegenerateMap:
        return center_prior((w, h))
    out = np.zeros((h, w))
    for p in modes:
        sigma, amp = fit_gaussian(m, p, bandwidth)
        out += amp * gaussian_blob((w, h), p, sigma)
    if out.max() <= 0:
        return center_prior((w, h))
    return max_normalize(out)

