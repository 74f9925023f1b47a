"""Minimal from-scratch neural-network core on numpy.

Layers are stateless in the functional sense: ``forward`` returns the output
plus an explicit cache, ``backward`` consumes that cache and returns the input
gradient plus per-parameter gradients.  This keeps Siamese (two-tower) use
trivial -- run the same layer object twice with separate caches and sum the
parameter gradients -- and makes finite-difference verification direct.

Array layout is NCHW throughout.  Every layer is created with an explicit
dtype; float32 for training, float64 for gradient verification.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DimensionError


def uniform_init(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    """Zero-mean uniform weights, U(+-sqrt(6/(fan_in+fan_out))).

    Balanced fan scaling keeps forward activations and backward signals at
    comparable magnitude through the tanh stack; fan-in-only scaling starves
    the early layers of gradient.
    """
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _strided_windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """View of all (kh, kw) windows at the given stride: (n, c, oh, ow, kh, kw)."""
    v = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride, :, :]


class Conv2D:
    """Valid-padding 2D convolution (cross-correlation), arbitrary stride.

    Weights: (out_ch, in_ch, k, k).  Forward uses an im2col matrix multiply;
    backward scatters column gradients back with one add per kernel offset.
    """

    def __init__(self, in_ch, out_ch, ksize, stride=1, *, rng, dtype=np.float32, bias=True):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.ksize = ksize
        self.stride = stride
        fan_in = in_ch * ksize * ksize
        fan_out = out_ch * ksize * ksize
        self.W = uniform_init(rng, (out_ch, in_ch, ksize, ksize), fan_in, fan_out, dtype)
        # a bias ahead of batch norm would be cancelled by the mean subtraction
        self.b = np.zeros(out_ch, dtype=dtype) if bias else None

    def out_hw(self, h, w):
        k, s = self.ksize, self.stride
        if h < k or w < k:
            raise DimensionError(f"input {h}x{w} smaller than kernel {k}")
        return (h - k) // s + 1, (w - k) // s + 1

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        if c != self.in_ch:
            raise DimensionError(f"expected {self.in_ch} channels, got {c}")
        k, s = self.ksize, self.stride
        oh, ow = self.out_hw(h, w)
        cols = (
            _strided_windows(x, k, k, s)
            .transpose(0, 2, 3, 1, 4, 5)
            .reshape(n, oh * ow, c * k * k)
        )
        wmat = self.W.reshape(self.out_ch, -1)
        out = cols @ wmat.T
        if self.b is not None:
            out = out + self.b
        out = out.transpose(0, 2, 1).reshape(n, self.out_ch, oh, ow)
        return out, (cols, x.shape)

    def backward(self, dout, cache):
        cols, x_shape = cache
        n, c, h, w = x_shape
        k, s = self.ksize, self.stride
        oh, ow = self.out_hw(h, w)
        dmat = dout.reshape(n, self.out_ch, oh * ow).transpose(0, 2, 1)
        dW = (
            dmat.reshape(-1, self.out_ch).T @ cols.reshape(-1, c * k * k)
        ).reshape(self.W.shape)
        grads = {"W": dW}
        if self.b is not None:
            grads["b"] = dout.sum(axis=(0, 2, 3))
        dcols = (dmat @ self.W.reshape(self.out_ch, -1)).reshape(n, oh, ow, c, k, k)
        dcols = dcols.transpose(0, 3, 1, 2, 4, 5)
        dx = np.zeros(x_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + oh * s : s, j : j + ow * s : s] += dcols[:, :, :, :, i, j]
        return dx, grads

    def params(self):
        if self.b is None:
            return {"W": self.W}
        return {"W": self.W, "b": self.b}


class MaxPool2D:
    """Max pooling with overlapping windows; gradient routes to the first argmax."""

    def __init__(self, size=3, stride=2):
        self.size = size
        self.stride = stride

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        k, s = self.size, self.stride
        if h < k or w < k:
            raise DimensionError(f"input {h}x{w} smaller than pool window {k}")
        win = _strided_windows(x, k, k, s)
        flat = win.reshape(*win.shape[:4], k * k)
        am = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, am[..., None], axis=-1)[..., 0]
        return out, (am, x.shape)

    def backward(self, dout, cache):
        am, x_shape = cache
        n, c, h, w = x_shape
        k, s = self.size, self.stride
        oh, ow = am.shape[2], am.shape[3]
        n_i, c_i, oh_i, ow_i = np.indices((n, c, oh, ow))
        rows = oh_i * s + am // k
        coli = ow_i * s + am % k
        dx = np.zeros(x_shape, dtype=dout.dtype)
        np.add.at(dx, (n_i, c_i, rows, coli), dout)
        return dx, {}

    def params(self):
        return {}


class AvgPool2D:
    """Mean pooling over (size, size) windows at the given stride."""

    def __init__(self, size=3, stride=2):
        self.size = size
        self.stride = stride

    def forward(self, x, train=False):
        k = self.size
        if x.shape[2] < k or x.shape[3] < k:
            raise DimensionError(f"input {x.shape[2]}x{x.shape[3]} smaller than pool window {k}")
        win = _strided_windows(x, k, k, self.stride)
        return win.mean(axis=(-2, -1)), x.shape

    def backward(self, dout, cache):
        x_shape = cache
        k, s = self.size, self.stride
        oh, ow = dout.shape[2], dout.shape[3]
        dx = np.zeros(x_shape, dtype=dout.dtype)
        share = dout / (k * k)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + oh * s : s, j : j + ow * s : s] += share
        return dx, {}

    def params(self):
        return {}


class GlobalAvgPool:
    """Mean over the full spatial extent, collapsing (n, c, h, w) to (n, c)."""

    def forward(self, x, train=False):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, dout, cache):
        x_shape = cache
        n, c, h, w = x_shape
        dx = np.broadcast_to(dout[:, :, None, None] / (h * w), x_shape).astype(dout.dtype)
        return dx.copy(), {}

    def params(self):
        return {}


class BatchNorm2D:
    """Per-channel batch normalization with running statistics for evaluation."""

    def __init__(self, channels, *, dtype=np.float32, eps=1e-5, momentum=0.1):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x, train=False):
        g = self.gamma[:, None, None]
        b = self.beta[:, None, None]
        if train:
            mu = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu[:, None, None]) * inv_std[:, None, None]
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mu).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * var).astype(self.running_var.dtype)
            return g * xhat + b, (xhat, inv_std)
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        xhat = (x - self.running_mean[:, None, None]) * inv_std[:, None, None]
        return g * xhat + b, (xhat, inv_std)

    def backward(self, dout, cache):
        # Train-mode backward: gradient flows through the batch statistics.
        xhat, inv_std = cache
        m = float(dout.shape[0] * dout.shape[2] * dout.shape[3])
        dgamma = (dout * xhat).sum(axis=(0, 2, 3))
        dbeta = dout.sum(axis=(0, 2, 3))
        dxhat = dout * self.gamma[:, None, None]
        sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = (inv_std[:, None, None] / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return dx, {"gamma": dgamma, "beta": dbeta}

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class Activation:
    """Elementwise nonlinearity: "tanh", "relu", or "linear"."""

    NAMES = ("tanh", "relu", "linear")

    def __init__(self, name):
        if name not in self.NAMES:
            raise ConfigurationError(f"unknown activation {name!r}")
        self.name = name

    def forward(self, x, train=False):
        if self.name == "tanh":
            out = np.tanh(x)
            return out, out
        if self.name == "relu":
            out = np.maximum(x, 0)
            return out, x
        return x, None

    def backward(self, dout, cache):
        if self.name == "tanh":
            return dout * (1.0 - cache * cache), {}
        if self.name == "relu":
            return dout * (cache > 0), {}
        return dout, {}

    def params(self):
        return {}


class Dense:
    """Affine map (n, d_in) -> (n, d_out)."""

    def __init__(self, d_in, d_out, *, rng, dtype=np.float32):
        self.d_in = d_in
        self.d_out = d_out
        self.W = uniform_init(rng, (d_in, d_out), d_in, d_out, dtype)
        self.b = np.zeros(d_out, dtype=dtype)

    def forward(self, x, train=False):
        if x.shape[1] != self.d_in:
            raise DimensionError(f"expected input width {self.d_in}, got {x.shape[1]}")
        return x @ self.W + self.b, x

    def backward(self, dout, cache):
        x = cache
        return dout @ self.W.T, {"W": x.T @ dout, "b": dout.sum(axis=0)}

    def params(self):
        return {"W": self.W, "b": self.b}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits.

    The gradient is the classic (softmax - onehot) / batch_size.
    """
    n = logits.shape[0]
    probs = softmax(logits)
    loss = float(-np.mean(np.log(probs[np.arange(n), labels] + 1e-300)))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def lr_at_epoch(epoch: int, lr0: float, halve_every: int) -> float:
    """Step-decay schedule: the rate is halved every `halve_every` epochs.

    Epochs are 1-indexed, so epochs 1..halve_every run at lr0, the next
    halve_every epochs at lr0/2, and so on.
    """
    if epoch < 1:
        raise ConfigurationError("epochs are 1-indexed")
    return lr0 * 0.5 ** ((epoch - 1) // halve_every)


class SGD:
    """Plain stochastic gradient descent with optional momentum and weight decay."""

    def __init__(self, params: dict[str, np.ndarray], momentum=0.0, weight_decay=0.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()} if momentum else None

    def step(self, grads: dict[str, np.ndarray], lr: float):
        for name, p in self.params.items():
            if name not in grads:
                continue
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            if self.velocity is not None:
                v = self.velocity[name]
                v *= self.momentum
                v += g
                g = v
            p -= (lr * g).astype(p.dtype, copy=False)


def accumulate(total: dict[str, np.ndarray], part: dict[str, np.ndarray], prefix: str = ""):
    """Sum per-parameter gradients into `total`, namespacing keys by `prefix`."""
    for k, v in part.items():
        name = prefix + k
        if name in total:
            total[name] = total[name] + v
        else:
            total[name] = v
    return total
