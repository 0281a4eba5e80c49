"""Layer math. All arithmetic runs in float64 whatever the storage dtype.

Functional ``*_forward`` / ``*_backward`` pairs carry the numerics; the small
layer classes wrap them, read their parameters from a shared name -> array
mapping and remember what backward needs.
"""

from __future__ import annotations

import numpy as np


def _f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def _check(cond, msg):
    if not cond:
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# dense / shared MLP

def dense_forward(x, W, b) -> np.ndarray:
    x, W, b = _f64(x), _f64(W), _f64(b)
    _check(x.ndim == 2 and W.ndim == 2 and x.shape[1] == W.shape[0] and b.shape == (W.shape[1],),
           f"dense shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    return x @ W + b


def dense_backward(x, W, dout):
    """Gradients (dx, dW, db) of ``x @ W + b`` given the upstream gradient."""
    x, W, dout = _f64(x), _f64(W), _f64(dout)
    return dout @ W.T, x.T @ dout, dout.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def pointwise_mlp_forward(points, layers, final_activation=False) -> np.ndarray:
    """Apply the same dense chain to every row; ReLU between layers.

    ``layers`` is a sequence of (W, b) pairs.
    """
    h = _f64(points)
    for k, (W, b) in enumerate(layers):
        h = dense_forward(h, W, b)
        if k < len(layers) - 1 or final_activation:
            h = relu(h)
    return h


def max_pool_points(features):
    """Column-wise maximum over rows; returns (pooled, argmax rows).

    Ties resolve to the lowest row index (``np.argmax`` semantics).
    """
    f = _f64(features)
    _check(f.ndim == 2 and f.shape[0] >= 1, "max pooling needs at least one row")
    arg = np.argmax(f, axis=0)
    return f[arg, np.arange(f.shape[1])], arg


def max_pool_points_backward(arg, n_rows, dout) -> np.ndarray:
    dx = np.zeros((n_rows, len(arg)))
    dx[arg, np.arange(len(arg))] = dout
    return dx


# ---------------------------------------------------------------------------
# 2D convolution (cross-correlation, zero padding)
#
# Computed as a sum over the k*k kernel taps of channel-mixing products on
# shifted views; memory stays O(C * H * W) at any image size.

def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _batched(x):
    x = _f64(x)
    if x.ndim == 3:
        return x[None], True
    _check(x.ndim == 4, f"conv input must be [C,H,W] or [N,C,H,W], got {x.shape}")
    return x, False


def _tap(xp, di, dj, stride, ho, wo):
    return xp[:, :, di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride]


def conv2d_forward(x, W, b, stride: int = 1, padding: int = 0) -> np.ndarray:
    xb, single = _batched(x)
    W, b = _f64(W), _f64(b)
    _check(W.ndim == 4 and W.shape[2] == W.shape[3] and W.shape[2] % 2 == 1,
           f"conv kernel must be [C_out,C_in,k,k] with odd k, got {W.shape}")
    _check(xb.shape[1] == W.shape[1] and b.shape == (W.shape[0],),
           f"conv shape mismatch: x {xb.shape}, W {W.shape}, b {b.shape}")
    k = W.shape[2]
    n, _, h, w = xb.shape
    ho, wo = conv_output_size(h, k, stride, padding), conv_output_size(w, k, stride, padding)
    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((W.shape[0], n, ho, wo))
    for di in range(k):
        for dj in range(k):
            out += np.tensordot(W[:, :, di, dj], _tap(xp, di, dj, stride, ho, wo), axes=([1], [1]))
    out = out.transpose(1, 0, 2, 3) + b[None, :, None, None]
    return out[0] if single else out


def conv2d_backward(x, W, dout, stride: int = 1, padding: int = 0):
    """Gradients (dx, dW, db) of conv2d_forward."""
    xb, single = _batched(x)
    W = _f64(W)
    g, _ = _batched(dout)
    k = W.shape[2]
    n, _, h, w = xb.shape
    ho, wo = g.shape[2], g.shape[3]
    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    dxp = np.zeros_like(xp)
    dW = np.zeros_like(W)
    for di in range(k):
        for dj in range(k):
            dW[:, :, di, dj] = np.tensordot(g, _tap(xp, di, dj, stride, ho, wo), axes=([0, 2, 3], [0, 2, 3]))
            _tap(dxp, di, dj, stride, ho, wo)[...] += np.tensordot(W[:, :, di, dj], g, axes=([0], [1])).transpose(1, 0, 2, 3)
    dx = dxp[:, :, padding:padding + h, padding:padding + w]
    db = g.sum(axis=(0, 2, 3))
    return (dx[0] if single else dx), dW, db


def upsample_nearest(x, factor: int = 2) -> np.ndarray:
    return np.repeat(np.repeat(x, factor, axis=-2), factor, axis=-1)


def upsample_nearest_backward(dout, factor: int = 2) -> np.ndarray:
    *lead, h, w = dout.shape
    return dout.reshape(*lead, h // factor, factor, w // factor, factor).sum(axis=(-3, -1))


# ---------------------------------------------------------------------------
# stateful wrappers

class _Layer:
    _cache = None

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a recorded forward pass")
        cache, self._cache = self._cache, None
        return cache


class ReLU(_Layer):
    def forward(self, x):
        x = _f64(x)
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, dout):
        return np.where(self._need_cache(), dout, 0.0)


class Dense(_Layer):
    """Row-wise affine map; parameters ``{name}.W`` [d_in, d_out] and ``{name}.b``."""

    def __init__(self, name: str, d_in: int, d_out: int):
        self.name, self.d_in, self.d_out = name, d_in, d_out

    def init_params(self, params: dict, rng: np.random.Generator):
        scale = np.sqrt(2.0 / self.d_in)
        params[f"{self.name}.W"] = (rng.standard_normal((self.d_in, self.d_out)) * scale).astype(np.float32)
        params[f"{self.name}.b"] = np.zeros(self.d_out, np.float32)

    def forward(self, params, x):
        W, b = params[f"{self.name}.W"], params[f"{self.name}.b"]
        self._cache = (_f64(x), W)
        return dense_forward(x, W, b)

    def backward(self, dout, grads: dict):
        x, W = self._need_cache()
        dx, dW, db = dense_backward(x, W, dout)
        _accumulate(grads, f"{self.name}.W", dW)
        _accumulate(grads, f"{self.name}.b", db)
        return dx


class PointMLP(_Layer):
    """Shared MLP over point rows with ReLU after every layer but (optionally) the last."""

    def __init__(self, name: str, sizes, final_activation: bool = False):
        self.sizes = tuple(sizes)
        self.layers = [Dense(f"{name}.{k}", a, b) for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.acts = [ReLU() for _ in self.layers]
        self.final_activation = final_activation

    def init_params(self, params, rng):
        for layer in self.layers:
            layer.init_params(params, rng)

    def _active(self, k):
        return k < len(self.layers) - 1 or self.final_activation

    def forward(self, params, x):
        h = x
        for k, (layer, act) in enumerate(zip(self.layers, self.acts)):
            h = layer.forward(params, h)
            if self._active(k):
                h = act.forward(h)
        self._cache = True
        return h

    def backward(self, dout, grads):
        self._need_cache()
        g = dout
        for k in reversed(range(len(self.layers))):
            if self._active(k):
                g = self.acts[k].backward(g)
            g = self.layers[k].backward(g, grads)
        return g


class MaxPoolPoints(_Layer):
    def forward(self, x):
        out, arg = max_pool_points(x)
        self._cache = (arg, np.shape(x)[0])
        return out

    def backward(self, dout):
        arg, n = self._need_cache()
        return max_pool_points_backward(arg, n, dout)


class Conv2d(_Layer):
    def __init__(self, name: str, c_in: int, c_out: int, k: int = 3, stride: int = 1, padding=None):
        if k % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.name, self.c_in, self.c_out, self.k, self.stride = name, c_in, c_out, k, stride
        self.padding = k // 2 if padding is None else padding

    def init_params(self, params, rng):
        fan_in = self.c_in * self.k * self.k
        w = rng.standard_normal((self.c_out, self.c_in, self.k, self.k)) * np.sqrt(2.0 / fan_in)
        params[f"{self.name}.W"] = w.astype(np.float32)
        params[f"{self.name}.b"] = np.zeros(self.c_out, np.float32)

    def forward(self, params, x):
        W, b = params[f"{self.name}.W"], params[f"{self.name}.b"]
        self._cache = (_f64(x), W)
        return conv2d_forward(x, W, b, self.stride, self.padding)

    def backward(self, dout, grads):
        x, W = self._need_cache()
        dx, dW, db = conv2d_backward(x, W, dout, self.stride, self.padding)
        _accumulate(grads, f"{self.name}.W", dW)
        _accumulate(grads, f"{self.name}.b", db)
        return dx


def _accumulate(grads: dict, name: str, g: np.ndarray):
    if name in grads:
        grads[name] = grads[name] + g
    else:
        grads[name] = g
