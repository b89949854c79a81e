"""Small numpy layer library with hand-written reverse-mode gradients.

Tensors are numpy arrays in (N, C, H, W) layout for spatial layers and
(N, D) for dense layers. Each layer caches what its backward pass needs
during ``forward``; calling ``backward`` without a recorded forward raises
GraphNotRecorded.
"""

import struct
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CorruptFile, GraphNotRecorded, OddDimension, ShapeMismatch

# ---------------------------------------------------------------------------
# functional ops


def _batched(x, ndim):
    x = np.asarray(x)
    return (x[None], True) if x.ndim == ndim - 1 else (x, False)


def _im2col(x, k):
    n, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # n, c, h, w, k, k
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def _conv(x, kernels, bias):
    f, c, k, _ = kernels.shape
    n, _, h, w = x.shape
    cols = _im2col(x, k)
    out = cols @ kernels.reshape(f, -1).T + bias
    return out.reshape(n, h, w, f).transpose(0, 3, 1, 2), cols


def conv2d_forward(x, kernels, bias):
    """Same-padded cross-correlation. x: (C,H,W) or (N,C,H,W); kernels: (F,C,k,k)."""
    x, single = _batched(x, 4)
    kernels = np.asarray(kernels)
    f, c, k, k2 = kernels.shape
    if k != k2 or k % 2 == 0:
        raise ShapeMismatch(f"kernels must be square with odd size, got {kernels.shape}")
    if x.shape[1] != c or np.shape(bias) != (f,):
        raise ShapeMismatch(f"input {x.shape} / kernels {kernels.shape} / bias {np.shape(bias)}")
    out, _ = _conv(x, kernels, bias)
    return out[0] if single else out


def conv2d_backward(x, kernels, grad, cols=None):
    """Gradients (dx, dkernels, dbias) of conv2d_forward.

    ``cols`` is the im2col buffer of ``x`` if the caller kept it.
    """
    x, single = _batched(x, 4)
    grad = grad[None] if single else grad
    f, c, k, _ = kernels.shape
    n, _, h, w = x.shape
    if cols is None:
        cols = _im2col(x, k)
    g2 = grad.transpose(0, 2, 3, 1).reshape(n * h * w, f)
    dk = (g2.T @ cols).reshape(kernels.shape)
    db = grad.sum(axis=(0, 2, 3))
    # the input gradient is a same-padded correlation with the flipped, transposed kernels
    flipped = np.ascontiguousarray(kernels[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx, _ = _conv(grad, flipped, np.zeros(c, dtype=grad.dtype))
    return (dx[0] if single else dx), dk, db


def maxpool2x2(x):
    """2x2 max pooling; returns (output, argmax index 0..3 per output cell).

    Ties resolve to the first (upper-left, row-major) cell of the window.
    """
    x, single = _batched(x, 4)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise OddDimension(f"pooling needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return (out[0], idx[0]) if single else (out, idx)


def maxpool2x2_backward(grad, idx):
    grad, single = _batched(grad, 4)
    idx = idx[None] if single else idx
    n, c, h2, w2 = grad.shape
    win = np.zeros((n, c, h2, w2, 4), dtype=grad.dtype)
    np.put_along_axis(win, idx[..., None], grad[..., None], axis=-1)
    dx = win.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    return dx[0] if single else dx


def unpool2x2(x):
    """Fixed-location unpooling: each value goes to the upper-left of its 2x2 block."""
    x = np.asarray(x)
    out = np.zeros(x.shape[:-2] + (2 * x.shape[-2], 2 * x.shape[-1]), dtype=x.dtype)
    out[..., ::2, ::2] = x
    return out


def unpool2x2_backward(grad):
    return grad[..., ::2, ::2]


def dense_forward(x, weights, bias):
    """Affine map W x + b for x of shape (D,) or (N, D)."""
    x = np.asarray(x)
    weights = np.asarray(weights)
    if x.shape[-1] != weights.shape[1] or np.shape(bias) != (weights.shape[0],):
        raise ShapeMismatch(f"input {x.shape} / weights {weights.shape} / bias {np.shape(bias)}")
    return x @ weights.T + bias


def dense_backward(x, weights, grad):
    x2 = np.atleast_2d(x)
    g2 = np.atleast_2d(grad)
    dx = g2 @ weights
    return (dx[0] if np.ndim(x) == 1 else dx), g2.T @ x2, g2.sum(axis=0)


# ---------------------------------------------------------------------------
# layers


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    params = ()

    def __init__(self):
        self._cache = None
        self.grads = {}

    def _recorded(self):
        if self._cache is None:
            raise GraphNotRecorded(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def clear(self):
        self._cache = None

    def __repr__(self):
        return f"{type(self).__name__}()"


class Conv2d(Layer):
    params = ("weight", "bias")

    def __init__(self, in_ch, out_ch, kernel, rng, dtype=np.float64):
        super().__init__()
        fan_in, fan_out = in_ch * kernel * kernel, out_ch * kernel * kernel
        self.weight = glorot_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, fan_out, dtype)
        self.bias = np.zeros(out_ch, dtype=dtype)

    def forward(self, x):
        conv2d_forward(x[:0], self.weight, self.bias)  # shape checks only
        out, cols = _conv(x, self.weight, self.bias)
        self._cache = (x, cols)
        return out

    def backward(self, grad):
        x, cols = self._recorded()
        dx, dw, db = conv2d_backward(x, self.weight, grad, cols)
        self.grads = {"weight": dw, "bias": db}
        return dx

    def __repr__(self):
        f, c, k, _ = self.weight.shape
        return f"Conv2d({c}->{f}, {k}x{k})"


class Dense(Layer):
    params = ("weight", "bias")

    def __init__(self, n_in, n_out, rng, dtype=np.float64):
        super().__init__()
        self.weight = glorot_uniform(rng, (n_out, n_in), n_in, n_out, dtype)
        self.bias = np.zeros(n_out, dtype=dtype)

    def forward(self, x):
        self._cache = x
        return dense_forward(x, self.weight, self.bias)

    def backward(self, grad):
        x = self._recorded()
        dx, dw, db = dense_backward(x, self.weight, grad)
        self.grads = {"weight": dw, "bias": db}
        return dx

    def __repr__(self):
        return f"Dense({self.weight.shape[1]}->{self.weight.shape[0]})"


class ReLU(Layer):
    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return np.where(self._recorded(), grad, 0.0).astype(grad.dtype, copy=False)


class MaxPool2x2(Layer):
    def forward(self, x):
        out, idx = maxpool2x2(x)
        self._cache = idx
        return out

    def backward(self, grad):
        return maxpool2x2_backward(grad, self._recorded())


class Unpool2x2(Layer):
    def forward(self, x):
        self._cache = True
        return unpool2x2(x)

    def backward(self, grad):
        self._recorded()
        return unpool2x2_backward(grad)


class Reshape(Layer):
    """Reshape the per-sample part of a batch; ``shape`` excludes the batch axis."""

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x):
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return grad.reshape(self._recorded())

    def __repr__(self):
        return f"Reshape({self.shape})"


class Sequential:
    """Ordered composition; records the forward graph for ``backward``."""

    def __init__(self, layers):
        self.layers = list(layers)
        self._recorded = False

    def forward(self, x, record=True):
        for layer in self.layers:
            x = layer.forward(x)
        self._recorded = record
        if not record:
            self.clear()
        return x

    __call__ = forward

    def backward(self, grad):
        """Propagate ``grad`` (dLoss/dOutput) to every parameter; returns dLoss/dInput."""
        if not self._recorded:
            raise GraphNotRecorded("backward called without a recorded forward pass")
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def clear(self):
        self._recorded = False
        for layer in self.layers:
            layer.clear()

    def parameters(self):
        """(layer, name) pairs in declaration order."""
        return [(layer, name) for layer in self.layers for name in layer.params]

    def get_params(self):
        return [getattr(layer, name) for layer, name in self.parameters()]

    def set_params(self, arrays):
        pairs = self.parameters()
        if len(arrays) != len(pairs):
            raise ShapeMismatch(f"expected {len(pairs)} parameter arrays, got {len(arrays)}")
        for (layer, name), arr in zip(pairs, arrays):
            cur = getattr(layer, name)
            if cur.shape != np.shape(arr):
                raise ShapeMismatch(f"{layer!r}.{name}: {cur.shape} vs {np.shape(arr)}")
            setattr(layer, name, np.asarray(arr, dtype=cur.dtype).copy())

    def get_grads(self):
        return [layer.grads[name] for layer, name in self.parameters()]

    def astype(self, dtype):
        for layer, name in self.parameters():
            setattr(layer, name, getattr(layer, name).astype(dtype))
        return self

    def __repr__(self):
        return "Sequential(" + ", ".join(map(repr, self.layers)) + ")"


# ---------------------------------------------------------------------------
# weight file: b"DGNN" + version + tensor count (u32 LE); per tensor: ndim then
# dims (u32 LE); then all parameters as float32 LE in declaration order.

_NN_MAGIC = b"DGNN"
_NN_VERSION = 1


def save_weights(arrays, path):
    with open(path, "wb") as fh:
        fh.write(_NN_MAGIC + struct.pack("<II", _NN_VERSION, len(arrays)))
        for a in arrays:
            fh.write(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_weights(path):
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != _NN_MAGIC:
        raise CorruptFile(f"{path}: not a DGNN weight file")
    version, count = struct.unpack("<II", data[4:12])
    if version != _NN_VERSION:
        raise CorruptFile(f"{path}: unsupported version {version}")
    pos, shapes = 12, []
    try:
        for _ in range(count):
            (ndim,) = struct.unpack("<I", data[pos : pos + 4])
            shapes.append(struct.unpack(f"<{ndim}I", data[pos + 4 : pos + 4 + 4 * ndim]))
            pos += 4 + 4 * ndim
    except struct.error as exc:
        raise CorruptFile(f"{path}: truncated header") from exc
    arrays = []
    for shape in shapes:
        size = int(np.prod(shape))
        chunk = data[pos : pos + 4 * size]
        if len(chunk) != 4 * size:
            raise CorruptFile(f"{path}: truncated parameters")
        arrays.append(np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float64))
        pos += 4 * size
    if pos != len(data):
        raise CorruptFile(f"{path}: trailing bytes")
    return arrays
