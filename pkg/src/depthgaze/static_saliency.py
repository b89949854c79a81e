"""Per-frame static saliency providers.

``graph_saliency`` is a compact graph-based contrast model: center-surround
contrast maps for intensity, red-green, blue-yellow (and optionally depth)
are weighted by the equilibrium distribution of a Markov chain on a coarse
pixel lattice. Edges are stronger between nearby nodes and between nodes with
dissimilar contrast, so mass accumulates where a node differs from most of
its surroundings. A second chain with weights proportional to the activation
concentrates the mass on the strongest peaks.
"""

from functools import lru_cache

import numpy as np
from scipy import ndimage

from .dataset_io import resize_bilinear

GRAPH_DIMS = (32, 24)
CENTER_SIGMA = 1.0
SURROUND_SIGMA = 4.0
ACTIVATION_SPREAD = 0.15
NORMALIZATION_SPREAD = 0.06
POWER_TOL = 1e-8
POWER_MAX_ITER = 1000
FLAT_CONTRAST = 1e-9


def frame_center(dims):
    w, h = dims
    return w / 2.0, h / 2.0


def max_normalize(m):
    m = np.clip(np.asarray(m, dtype=np.float64), 0.0, None)
    top = m.max() if m.size else 0.0
    return m / top if top > 0 else m


def sum_normalize(m):
    m = np.clip(np.asarray(m, dtype=np.float64), 0.0, None)
    s = m.sum()
    return m / s if s > 0 else m


def gaussian_blob(dims, center, sigma):
    """Unnormalized isotropic Gaussian with peak 1 at ``center`` (x, y)."""
    w, h = dims
    cx, cy = center
    gx = np.exp(-((np.arange(w) - cx) ** 2) / (2 * sigma**2))
    gy = np.exp(-((np.arange(h) - cy) ** 2) / (2 * sigma**2))
    return np.outer(gy, gx)


def center_prior(dims, sigma_fraction=0.05):
    """Max-normalized Gaussian at the frame center, sigma = 5% of the diagonal."""
    w, h = dims
    return max_normalize(gaussian_blob(dims, frame_center(dims), sigma_fraction * np.hypot(w, h)))


def uniform_map(dims):
    w, h = dims
    return np.ones((h, w))


def feature_channels(rgb, depth=None):
    """Intensity, red-green and blue-yellow opponency, plus depth if given."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    chans = [(r + g + b) / 3.0, r - g, b - (r + g) / 2.0]
    if depth is not None:
        chans.append(np.asarray(depth, dtype=np.float64))
    return chans


def _downsample(img, dims):
    w, h = dims
    H, W = img.shape
    if H % h == 0 and W % w == 0:
        return img.reshape(h, H // h, w, W // w).mean(axis=(1, 3))
    return resize_bilinear(img, dims).astype(np.float64)


def center_surround(f, center_sigma=CENTER_SIGMA, surround_sigma=SURROUND_SIGMA):
    return np.abs(ndimage.gaussian_filter(f, center_sigma, mode="nearest")
                  - ndimage.gaussian_filter(f, surround_sigma, mode="nearest"))


@lru_cache(maxsize=8)
def _proximity(w, h, spread):
    ys, xs = np.mgrid[0:h, 0:w]
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    sigma = spread * w
    prox = np.exp(-d2 / (2 * sigma**2))
    prox.setflags(write=False)
    deg = prox.sum(axis=1)
    base = deg / deg.sum()
    base.setflags(write=False)
    return prox, base


def equilibrium(weights, start=None, tol=POWER_TOL, max_iter=POWER_MAX_ITER):
    """Stationary distribution of the chain with row-normalized ``weights``.

    Power iteration until the L1 change drops below ``tol``.
    """
    P = weights / weights.sum(axis=1, keepdims=True)
    pi = np.full(P.shape[0], 1.0 / P.shape[0]) if start is None else start.copy()
    for _ in range(max_iter):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    return pi


def _graph_channel(c, activation_graph, normalization_graph):
    prox_a, base_a = activation_graph
    prox_n, base_n = normalization_graph
    flat = c.ravel()
    eps = 1e-3 * (flat.max() - flat.min()) + 1e-12
    act_w = (np.abs(flat[:, None] - flat[None, :]) + eps) * prox_a
    # dividing by the contrast-free equilibrium removes the lattice border bias
    activation = equilibrium(act_w, start=base_a) / base_a
    norm_w = activation[None, :] * prox_n + 1e-12
    conc = equilibrium(norm_w, start=base_n) / base_n
    return conc / conc.sum()


def graph_saliency(frame, use_depth=True, graph_dims=GRAPH_DIMS):
    """Graph-based contrast saliency of one frame, max-normalized.

    ``frame`` is an RgbdFrame or an (rgb, depth) pair at working resolution.
    """
    rgb, depth = (frame.rgb, frame.depth) if hasattr(frame, "rgb") else frame
    h, w = np.asarray(rgb).shape[:2]
    gw, gh = graph_dims
    act = _proximity(gw, gh, ACTIVATION_SPREAD)
    norm = _proximity(gw, gh, NORMALIZATION_SPREAD)
    total = np.zeros(gw * gh)
    for chan in feature_channels(rgb, depth if use_depth else None):
        c = center_surround(_downsample(chan, graph_dims))
        if np.ptp(c) > FLAT_CONTRAST:
            total += _graph_channel(c, act, norm)
        else:
            total += 1.0 / total.size
    up = resize_bilinear(total.reshape(gh, gw), (w, h)).astype(np.float64)
    return max_normalize(up)
