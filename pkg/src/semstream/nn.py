"""Minimal dense/conv/pool network core with reverse-mode gradients.

Arrays are numpy, float32 by default, laid out row-major with channels last:
images are (H, W, C), batches (B, H, W, C), flat features (B, n). Every layer
implements forward with an optional activation cache and a backward pass that
returns input gradients while accumulating parameter gradients on the layer.
Just enough machinery for the region-objectness student network; no general
autodiff graph.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError, StateError, TrainingError

DEFAULT_DTYPE = np.float32

# Clamp for sigmoid-derivative and cross-entropy stability.  Matching clamps
# on both sides make the combined output-layer gradient reduce to (p - target)
# even when float32 saturates the activation to exactly 0 or 1.
EPS = 1e-7


def sigmoid(x):
    """Numerically stable logistic function, elementwise; scalars stay scalar."""
    arr = np.asarray(x)
    out = np.empty_like(arr, dtype=arr.dtype if arr.dtype.kind == "f" else np.float64)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


def relu(x):
    return np.maximum(x, 0)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=DEFAULT_DTYPE):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _check_finite(arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise TrainingError("non-finite gradient encountered")


def sgd_step(params, grads, learning_rate: float):
    """Plain gradient step: returns new arrays params - lr * grads.

    Raises TrainingError if any gradient is non-finite.
    """
    if learning_rate < 0:
        raise ValueError("learning rate must be nonnegative")
    if len(params) != len(grads):
        raise ShapeError("params/grads length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"shape mismatch {p.shape} vs {g.shape}")
    _check_finite(grads)
    return [p - np.asarray(learning_rate, dtype=p.dtype) * g.astype(p.dtype) for p, g in zip(params, grads)]


class Layer:
    """Base layer: parameters, gradients, cached forward state."""

    def __init__(self):
        self.cache = None
        self.grads = {}

    def params(self) -> dict:
        return {}

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def output_shape(self, shape):
        raise NotImplementedError

    def forward(self, x, keep_cache=True):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _need_cache(self):
        if self.cache is None:
            raise StateError(f"{type(self).__name__}.backward before forward")
        return self.cache


class Conv2D(Layer):
    """Same-padded stride-1 2D cross-correlation with per-channel bias.

    Kernels are (kh, kw, cin, cout) with odd spatial dims; input (B, H, W, cin)
    maps to (B, H, W, cout). Optional relu activation fused into the layer.
    """

    def __init__(self, kh, kw, cin, cout, activation="linear", rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError("kernel spatial dims must be odd for same padding")
        if activation not in ("linear", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.kh, self.kw, self.cin, self.cout = kh, kw, cin, cout
        self.activation = activation
        fan_in = kh * kw * cin
        fan_out = kh * kw * cout
        if rng is None:
            self.W = np.zeros((kh, kw, cin, cout), dtype=dtype)
        else:
            self.W = glorot_uniform(rng, (kh, kw, cin, cout), fan_in, fan_out, dtype)
        self.b = np.zeros(cout, dtype=dtype)

    def params(self):
        return {"W": self.W, "b": self.b}

    def output_shape(self, shape):
        h, w, c = shape
        if c != self.cin:
            raise ShapeError(f"expected {self.cin} input channels, got {c}")
        return (h, w, self.cout)

    def _im2col(self, x):
        b, h, w, c = x.shape
        ph, pw = self.kh // 2, self.kw // 2
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (self.kh, self.kw), axis=(1, 2))
        # (B, H, W, C, kh, kw) -> (B*H*W, kh*kw*C), matching W.reshape order
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
        return cols.reshape(b * h * w, self.kh * self.kw * c)

    def forward(self, x, keep_cache=True):
        if x.ndim != 4 or x.shape[3] != self.cin:
            raise ShapeError(f"conv2d expects (B,H,W,{self.cin}), got {x.shape}")
        b, h, w, _ = x.shape
        cols = self._im2col(x)
        wm = self.W.reshape(-1, self.cout)
        out = cols @ wm + self.b
        if self.activation == "relu":
            out = np.maximum(out, 0)
        self.cache = (cols, x.shape, out if self.activation == "relu" else None) if keep_cache else None
        return out.reshape(b, h, w, self.cout)

    def backward(self, dout):
        cols, xshape, act = self._need_cache()
        b, h, w, c = xshape
        dmat = dout.reshape(b * h * w, self.cout)
        if act is not None:
            dmat = dmat * (act > 0)
        wm = self.W.reshape(-1, self.cout)
        self.grads = {
            "W": (cols.T @ dmat).reshape(self.W.shape),
            "b": dmat.sum(axis=0),
        }
        dcols = (dmat @ wm.T).reshape(b, h, w, self.kh, self.kw, c)
        ph, pw = self.kh // 2, self.kw // 2
        dxp = np.zeros((b, h + 2 * ph, w + 2 * pw, c), dtype=dout.dtype)
        for i in range(self.kh):
            for j in range(self.kw):
                dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
        return dxp[:, ph:ph + h, pw:pw + w, :]


class MaxPool2D(Layer):
    """2x2 max pooling, stride 2; input spatial dims must be even."""

    window = 2

    def output_shape(self, shape):
        h, w, c = shape
        if h % 2 or w % 2:
            raise ShapeError(f"pooling needs even spatial dims, got {h}x{w}")
        return (h // 2, w // 2, c)

    def forward(self, x, keep_cache=True):
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"pooling needs even spatial dims, got {h}x{w}")
        wins = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
        wins = wins.reshape(b, h // 2, w // 2, 4, c)
        idx = wins.argmax(axis=3)
        out = np.take_along_axis(wins, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        self.cache = (idx, x.shape) if keep_cache else None
        return out

    def backward(self, dout):
        idx, xshape = self._need_cache()
        b, h, w, c = xshape
        dwins = np.zeros((b, h // 2, w // 2, 4, c), dtype=dout.dtype)
        np.put_along_axis(dwins, idx[:, :, :, None, :], dout[:, :, :, None, :], axis=3)
        dwins = dwins.reshape(b, h // 2, w // 2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
        return dwins.reshape(b, h, w, c)


class Flatten(Layer):
    """(B, H, W, C) -> (B, H*W*C), row-major with channels last."""

    def output_shape(self, shape):
        h, w, c = shape
        return (h * w * c,)

    def forward(self, x, keep_cache=True):
        self.cache = x.shape if keep_cache else None
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._need_cache())


class Dense(Layer):
    """Affine map plus activation: relu, sigmoid, or linear."""

    ACTIVATIONS = ("relu", "sigmoid", "linear")

    def __init__(self, n_in, n_out, activation="linear", rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        if activation not in self.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in, self.n_out = n_in, n_out
        self.activation = activation
        if rng is None:
            self.W = np.zeros((n_in, n_out), dtype=dtype)
        else:
            self.W = glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype)
        self.b = np.zeros(n_out, dtype=dtype)

    def params(self):
        return {"W": self.W, "b": self.b}

    def output_shape(self, shape):
        (n,) = shape
        if n != self.n_in:
            raise ShapeError(f"expected {self.n_in} inputs, got {n}")
        return (self.n_out,)

    def forward(self, x, keep_cache=True):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"dense expects (B,{self.n_in}), got {x.shape}")
        z = x @ self.W + self.b
        if self.activation == "relu":
            a = np.maximum(z, 0)
        elif self.activation == "sigmoid":
            a = sigmoid(z)
        else:
            a = z
        self.cache = (x, a) if keep_cache else None
        return a

    def backward(self, dout):
        x, a = self._need_cache()
        if self.activation == "relu":
            dz = dout * (a > 0)
        elif self.activation == "sigmoid":
            p = np.clip(a, EPS, 1.0 - EPS)
            dz = dout * p * (1.0 - p)
        else:
            dz = dout
        self.grads = {"W": x.T @ dz, "b": dz.sum(axis=0)}
        return dz @ self.W.T


class Network:
    """An ordered layer stack with joint forward/backward and SGD updates."""

    def __init__(self, layers):
        self.layers = list(layers)

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x, keep_cache=True):
        for layer in self.layers:
            x = layer.forward(x, keep_cache=keep_cache)
        return x

    def backward(self, dout):
        """Propagate an output gradient; fills each layer's grads, returns dx."""
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def param_items(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params().items():
                yield f"layer{i}.{name}", layer, name, p

    def param_arrays(self):
        return [p for _, _, _, p in self.param_items()]

    def grad_arrays(self):
        out = []
        for _, layer, name, _ in self.param_items():
            if name not in layer.grads:
                raise StateError("gradients not computed; run backward first")
            out.append(layer.grads[name])
        return out

    def param_count(self):
        return sum(layer.param_count() for layer in self.layers)

    def apply_gradients(self, learning_rate, skip=()):
        """In-place SGD step over all parameters; layers in `skip` are frozen."""
        for _, layer, name, p in self.param_items():
            if layer in skip:
                continue
            if name not in layer.grads:
                raise StateError("gradients not computed; run backward first")
            g = layer.grads[name]
            _check_finite([g])
            p -= np.asarray(learning_rate, dtype=p.dtype) * g.astype(p.dtype)

    def zero_grads(self):
        for layer in self.layers:
            layer.grads = {}

    def astype(self, dtype):
        """Deep copy of the network with parameters cast to dtype."""
        import copy

        net = copy.deepcopy(self)
        for _, layer, name, p in net.param_items():
            setattr(layer, name, p.astype(dtype))
        for layer in net.layers:
            layer.cache = None
            layer.grads = {}
        return net


def conv2d_forward(x, kernels, bias):
    """Single-image same-padded convolution: (H,W,C) x (kh,kw,C,K) -> (H,W,K)."""
    x = np.asarray(x)
    kernels = np.asarray(kernels)
    if x.ndim != 3 or kernels.ndim != 4:
        raise ShapeError("conv2d_forward expects (H,W,C) input and (kh,kw,C,K) kernels")
    if x.shape[2] != kernels.shape[2]:
        raise ShapeError(f"channel mismatch: input {x.shape[2]}, kernels {kernels.shape[2]}")
    kh, kw, cin, cout = kernels.shape
    layer = Conv2D(kh, kw, cin, cout, dtype=x.dtype)
    layer.W = kernels
    layer.b = np.asarray(bias, dtype=x.dtype).reshape(cout)
    return layer.forward(x[None], keep_cache=False)[0]


def maxpool2d(x):
    """Single-image 2x2 max pooling: (H,W,C) -> (H/2,W/2,C)."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError("maxpool2d expects (H,W,C)")
    return MaxPool2D().forward(x[None], keep_cache=False)[0]


def dense_forward(x, weights, bias, activation="linear"):
    """Single-vector dense layer: (n,) x (n,m) -> (m,) with activation."""
    x = np.asarray(x)
    weights = np.asarray(weights)
    if x.ndim != 1 or weights.ndim != 2 or x.shape[0] != weights.shape[0]:
        raise ShapeError("dense_forward expects (n,) input and (n,m) weights")
    layer = Dense(weights.shape[0], weights.shape[1], activation, dtype=x.dtype)
    layer.W = weights
    layer.b = np.asarray(bias, dtype=x.dtype).reshape(weights.shape[1])
    return layer.forward(x[None], keep_cache=False)[0]
