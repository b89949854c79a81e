"""Dense variational optical flow over color (+ depth) channels.

Horn-Schunck energy with a data term summed over channels, minimized by
Jacobi fixed-point iterations inside a coarse-to-fine pyramid with one
warping step per level.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import CorruptFile, DimensionMismatch

# 15 on the 8-bit intensity scale, expressed on the [0,1] channel scale
DEFAULT_ALPHA = 15.0 / 255.0
DEFAULT_LEVELS = 3
DEFAULT_ITERATIONS = 100
DEFAULT_DOG_SIGMA = 2.0

_AVG_KERNEL = np.array([[1 / 12, 1 / 6, 1 / 12],
                        [1 / 6, 0.0, 1 / 6],
                        [1 / 12, 1 / 6, 1 / 12]])
_DERIV = np.array([-0.5, 0.0, 0.5])


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray
    v: np.ndarray
    channels_used: int = 3

    @classmethod
    def zeros(cls, dims, channels_used=3):
        w, h = dims
        return cls(np.zeros((h, w)), np.zeros((h, w)), channels_used)

    @property
    def magnitude(self):
        return np.hypot(self.u, self.v)

    @property
    def shape(self):
        return self.u.shape


@dataclass(frozen=True)
class MotionFeatures:
    dog_u: np.ndarray
    dog_v: np.ndarray
    dog_mag: np.ndarray


@dataclass(frozen=True)
class FlowConfig:
    alpha: float = DEFAULT_ALPHA
    levels: int = DEFAULT_LEVELS
    iterations: int = DEFAULT_ITERATIONS


def frame_channels(frame, use_depth):
    """(C, H, W) float64 stack: RGB, plus depth when ``use_depth``."""
    rgb, depth = (frame.rgb, frame.depth) if hasattr(frame, "rgb") else frame
    chans = [np.asarray(rgb, dtype=np.float64)[..., c] for c in range(3)]
    if use_depth:
        chans.append(np.asarray(depth, dtype=np.float64))
    return np.stack(chans)


def _downsample2(stack):
    c, h, w = stack.shape
    blurred = ndimage.gaussian_filter(stack, (0, 1.0, 1.0), mode="nearest")
    blurred = blurred[:, : h - h % 2, : w - w % 2]
    # 2x2 block means keep the pyramid mirror-symmetric
    return blurred.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def _warp(stack, u, v):
    c, h, w = stack.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.array([ys + v, xs + u])
    return np.stack([ndimage.map_coordinates(ch, coords, order=1, mode="nearest") for ch in stack])


def _derivatives(a, b_warped):
    mid = 0.5 * (a + b_warped)
    ix = ndimage.correlate1d(mid, _DERIV, axis=2, mode="nearest")
    iy = ndimage.correlate1d(mid, _DERIV, axis=1, mode="nearest")
    it = b_warped - a
    return ix, iy, it


def _refine(a, b, u0, v0, alpha, iterations):
    ix, iy, it = _derivatives(a, _warp(b, u0, v0))
    a2 = alpha * alpha
    sxx = (ix * ix).sum(0)
    sxy = (ix * iy).sum(0)
    syy = (iy * iy).sum(0)
    sxt = (ix * it).sum(0)
    syt = (iy * it).sum(0)
    a11 = sxx + a2
    a22 = syy + a2
    det = a11 * a22 - sxy * sxy
    # constant part of the right-hand side of the per-pixel 2x2 system
    c1 = sxx * u0 + sxy * v0 - sxt
    c2 = sxy * u0 + syy * v0 - syt
    u, v = u0.copy(), v0.copy()
    for _ in range(iterations):
        ubar = ndimage.correlate(u, _AVG_KERNEL, mode="nearest")
        vbar = ndimage.correlate(v, _AVG_KERNEL, mode="nearest")
        b1 = a2 * ubar + c1
        b2 = a2 * vbar + c2
        u = (a22 * b1 - sxy * b2) / det
        v = (a11 * b2 - sxy * b1) / det
    return u, v


def optical_flow(frame_a, frame_b, use_depth=True, cfg=FlowConfig()):
    """Flow from ``frame_a`` to ``frame_b`` (pixels per frame interval)."""
    a = frame_channels(frame_a, use_depth)
    b = frame_channels(frame_b, use_depth)
    if a.shape != b.shape:
        raise DimensionMismatch(f"frame shapes differ: {a.shape} vs {b.shape}")
    pyr = [(a, b)]
    for _ in range(cfg.levels - 1):
        pa, pb = pyr[-1]
        if min(pa.shape[1:]) < 8:
            break
        pyr.append((_downsample2(pa), _downsample2(pb)))

    u = v = None
    for la, lb in reversed(pyr):
        shape = la.shape[1:]
        if u is None:
            u, v = np.zeros(shape), np.zeros(shape)
        else:
            sy, sx = shape[0] / u.shape[0], shape[1] / u.shape[1]
            u = ndimage.zoom(u, (sy, sx), order=1, mode="nearest", grid_mode=True)[: shape[0], : shape[1]] * sx
            v = ndimage.zoom(v, (sy, sx), order=1, mode="nearest", grid_mode=True)[: shape[0], : shape[1]] * sy
        u, v = _refine(la, lb, u, v, cfg.alpha, cfg.iterations)

    w = a.shape[2]
    u = np.clip(np.nan_to_num(u), -w, w)
    v = np.clip(np.nan_to_num(v), -w, w)
    return FlowField(u, v, a.shape[0])


def endpoint_error(flow, u_true, v_true, mask=None):
    err = np.hypot(flow.u - u_true, flow.v - v_true)
    if mask is not None:
        err = err[mask]
    return float(err.mean())


def dog(f, sigma1=DEFAULT_DOG_SIGMA):
    """Difference of Gaussians with sigma2 = 2 * sigma1."""
    return (ndimage.gaussian_filter(f, sigma1, mode="nearest")
            - ndimage.gaussian_filter(f, 2 * sigma1, mode="nearest"))


def motion_features(flow_prev, flow_curr, sigma1=DEFAULT_DOG_SIGMA):
    if flow_prev.shape != flow_curr.shape:
        raise DimensionMismatch(f"flow shapes differ: {flow_prev.shape} vs {flow_curr.shape}")
    mag_diff = flow_curr.magnitude - flow_prev.magnitude
    return MotionFeatures(dog(flow_curr.u, sigma1), dog(flow_curr.v, sigma1), dog(mag_diff, sigma1))


# ---------------------------------------------------------------------------
# debug raster format: 16-byte header b"DGFL" + W + H + channel id (u32 LE),
# then W*H float32 LE values row-major; one file per component.

_FLOW_MAGIC = b"DGFL"


def write_flow_component(path, grid, channel):
    grid = np.asarray(grid, dtype="<f4")
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(_FLOW_MAGIC + struct.pack("<III", w, h, channel))
        fh.write(np.ascontiguousarray(grid).tobytes())


def read_flow_component(path):
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _FLOW_MAGIC:
        raise CorruptFile(f"{path}: not a DGFL raster")
    w, h, channel = struct.unpack("<III", data[4:16])
    if len(data) != 16 + 4 * w * h:
        raise CorruptFile(f"{path}: truncated DGFL raster")
    return np.frombuffer(data[16:], dtype="<f4").reshape(h, w).astype(np.float64), channel


def write_flow(prefix, flow):
    """Write ``<prefix>_u.dgfl`` and ``<prefix>_v.dgfl``."""
    prefix = str(prefix)
    write_flow_component(prefix + "_u.dgfl", flow.u, 0)
    write_flow_component(prefix + "_v.dgfl", flow.v, 1)


def read_flow(prefix, channels_used=3):
    prefix = str(prefix)
    u, cu = read_flow_component(prefix + "_u.dgfl")
    v, cv = read_flow_component(prefix + "_v.dgfl")
    if (cu, cv) != (0, 1) or u.shape != v.shape:
        raise CorruptFile(f"{prefix}: inconsistent DGFL pair")
    return FlowField(u, v, channels_used)
