"""Minimal tensor type and the layer set used by the segmentation networks.

Every layer works on batched arrays laid out as ``(N, C, H, L)``: batch,
channels, height (sensor axis) and length (time).  Forward functions return
``(output, cache)``; backward functions take the upstream gradient plus that
cache and return input/parameter gradients.  The :class:`Layer` subclasses
wrap those pairs with parameter storage so a network can be assembled as a
plain list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor dimensions do not fit an operation."""


@dataclass
class Tensor:
    """Dense ``(C, H, L)`` feature map with an optional gradient slot."""

    data: np.ndarray
    grad: Optional[np.ndarray] = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ShapeError(f"Tensor needs rank 3 (C, H, L), got shape {self.data.shape}")
        if self.grad is not None and np.shape(self.grad) != self.data.shape:
            raise ShapeError(f"grad shape {np.shape(self.grad)} != data shape {self.data.shape}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


@dataclass
class ConvParams:
    """Weights ``(out_ch, in_ch, kh, kw)`` and bias ``(out_ch,)``."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 4 or min(self.weight.shape) < 1:
            raise ShapeError(f"conv weight must be rank 4 with positive dims, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match out_ch {self.weight.shape[0]}")

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1]


def _is_single(x) -> bool:
    return np.ndim(x.data if isinstance(x, Tensor) else x) == 3


def _batched(x: np.ndarray | Tensor) -> np.ndarray:
    if isinstance(x, Tensor):
        x = x.data
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None]
    if x.ndim != 4:
        raise ShapeError(f"expected (N, C, H, L) or (C, H, L), got shape {x.shape}")
    return x


# ---------------------------------------------------------------------------
# convolution, "same" zero padding, stride 1
# ---------------------------------------------------------------------------

def conv2d_forward(x, weight, bias):
    x = _batched(x)
    n, c, h, length = x.shape
    o, ci, kh, kw = weight.shape
    if c != ci:
        raise ShapeError(f"conv2d: input has {c} channels, weights expect {ci} (weight shape {weight.shape})")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: same padding needs odd kernel dims, got {kh}x{kw}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((n, c, kh, kw, h, length), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + h, j:j + length]
    cols = cols.reshape(n, c * kh * kw, h * length)
    w2 = weight.reshape(o, -1).astype(x.dtype, copy=False)
    y = np.matmul(w2, cols)
    y += bias.astype(x.dtype, copy=False)[:, None]
    return y.reshape(n, o, h, length), (cols, weight, x.shape)


def conv2d_backward(dy, cache):
    cols, weight, xshape = cache
    n, c, h, length = xshape
    o, _, kh, kw = weight.shape
    dy2 = dy.reshape(n, o, h * length)
    dw = np.tensordot(dy2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
    db = dy2.sum(axis=(0, 2))
    dcols = np.matmul(weight.reshape(o, -1).T.astype(dy.dtype, copy=False), dy2)
    dcols = dcols.reshape(n, c, kh, kw, h, length)
    ph, pw = kh // 2, kw // 2
    dxp = np.zeros((n, c, h + 2 * ph, length + 2 * pw), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + h, j:j + length] += dcols[:, :, i, j]
    return dxp[:, :, ph:ph + h, pw:pw + length], dw, db


def conv2d(x, params: ConvParams) -> np.ndarray:
    """Same-padded stride-1 convolution.  ``x`` is ``(N, C, H, L)`` or ``(C, H, L)``."""
    y, _ = conv2d_forward(x, params.weight, params.bias)
    return y[0] if _is_single(x) else y


# ---------------------------------------------------------------------------
# 1 x k max pooling along time
# ---------------------------------------------------------------------------

def maxpool_forward(x, k: int):
    x = _batched(x)
    n, c, h, length = x.shape
    if length % k:
        raise ShapeError(f"maxpool: length L={length} is not divisible by pool size k={k}")
    xr = x.reshape(n, c, h, length // k, k)
    idx = xr.argmax(axis=-1)  # first maximum wins on ties
    y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape, k)


def maxpool_backward(dy, cache):
    idx, xshape, k = cache
    n, c, h, length = xshape
    dxr = np.zeros((n, c, h, length // k, k), dtype=dy.dtype)
    np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=-1)
    return dxr.reshape(xshape)


def maxpool(x, k: int):
    """Returns pooled output and the argmax index of each pooled cell."""
    y, (idx, _, _) = maxpool_forward(x, k)
    if _is_single(x):
        return y[0], idx[0]
    return y, idx


# ---------------------------------------------------------------------------
# transposed convolution, kernel 1 x k, stride 1 x k (non-overlapping)
# ---------------------------------------------------------------------------

def transposed_conv_forward(x, weight, bias):
    x = _batched(x)
    n, c, h, length = x.shape
    o, ci, kh, k = weight.shape
    if kh != 1:
        raise ShapeError(f"transposed_conv: kernel must be 1 x k, got {kh} x {k}")
    if c != ci:
        raise ShapeError(f"transposed_conv: input has {c} channels, weights expect {ci}")
    w0 = weight[:, :, 0, :].astype(x.dtype, copy=False)
    y = np.tensordot(x, w0, axes=([1], [1]))  # (N, H, L, O, k)
    y = y.transpose(0, 3, 1, 2, 4).reshape(n, o, h, length * k)
    y += bias.astype(x.dtype, copy=False)[:, None, None]
    return y, (x, weight)


def transposed_conv_backward(dy, cache):
    x, weight = cache
    n, c, h, length = x.shape
    o, _, _, k = weight.shape
    dyr = dy.reshape(n, o, h, length, k)
    w0 = weight[:, :, 0, :].astype(dy.dtype, copy=False)
    dx = np.tensordot(dyr, w0, axes=([1, 4], [0, 2])).transpose(0, 3, 1, 2)
    dw = np.tensordot(x, dyr, axes=([0, 2, 3], [0, 2, 3]))  # (C, O, k)
    dw = dw.transpose(1, 0, 2)[:, :, None, :]
    db = dy.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dx), dw, db


def transposed_conv(x, params: ConvParams) -> np.ndarray:
    y, _ = transposed_conv_forward(x, params.weight, params.bias)
    return y[0] if _is_single(x) else y


# ---------------------------------------------------------------------------
# batch norm, relu, concat
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5
    training: bool = True

    @classmethod
    def create(cls, channels: int, dtype=np.float64) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


def batchnorm_forward(x, state: BatchNormState):
    x = _batched(x)
    dt = x.dtype
    g = state.gamma.astype(dt, copy=False)[:, None, None]
    b = state.beta.astype(dt, copy=False)[:, None, None]
    if state.training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        count = x.size // x.shape[1]
        m = state.momentum
        state.running_mean[:] = (1 - m) * state.running_mean + m * mean
        unbiased = var * count / max(count - 1, 1)
        state.running_var[:] = (1 - m) * state.running_var + m * unbiased
    else:
        mean = state.running_mean.astype(dt, copy=False)
        var = state.running_var.astype(dt, copy=False)
    inv_std = (1.0 / np.sqrt(var + state.epsilon)).astype(dt, copy=False)
    xhat = (x - mean[:, None, None]) * inv_std[:, None, None]
    return xhat * g + b, (xhat, inv_std, state.gamma, state.training)


def batchnorm_backward(dy, cache):
    xhat, inv_std, gamma, training = cache
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    scale = (gamma.astype(dy.dtype, copy=False) * inv_std)[:, None, None]
    if not training:
        return dy * scale, dgamma, dbeta
    count = dy.size // dy.shape[1]
    dx = scale * (dy - (dbeta / count)[:, None, None] - xhat * (dgamma / count)[:, None, None])
    return dx, dgamma, dbeta


def batchnorm(x, state: BatchNormState) -> np.ndarray:
    return batchnorm_forward(x, state)[0]


def relu_forward(x):
    x = np.asarray(x)
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype, copy=False), mask


def relu_backward(dy, mask):
    # gradient at exactly zero is zero
    return np.where(mask, dy, 0).astype(dy.dtype, copy=False)


def relu(x):
    return relu_forward(x)[0]


def concat_channels(a, b):
    """Stack ``b``'s channels after ``a``'s.  Works on 3-D or 4-D arrays."""
    a = a.data if isinstance(a, Tensor) else np.asarray(a)
    b = b.data if isinstance(b, Tensor) else np.asarray(b)
    if a.ndim != b.ndim or a.shape[-2:] != b.shape[-2:] or a.shape[:-3] != b.shape[:-3]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=-3)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax(logits, axis: int = 1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean per-sample cross entropy over batch and time.

    ``logits`` is ``(N, K, 1, L)`` (or ``(K, 1, L)``), ``labels`` is ``(N, L)``
    (or ``(L,)``) with integer classes.  Returns ``(loss, dlogits)``.
    """
    single = np.ndim(logits) == 3
    logits = _batched(logits)
    labels = np.asarray(labels)
    if single:
        labels = labels[None]
    n, k, h, length = logits.shape
    if h != 1:
        raise ShapeError(f"softmax_cross_entropy: logits must have height 1, got {logits.shape}")
    if labels.shape != (n, length):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if not np.issubdtype(labels.dtype, np.integer) or (labels.size and (labels.min() < 0 or labels.max() >= k)):
        raise ValueError(f"labels must be integers in [0, {k - 1}]")
    z = logits[:, :, 0, :]
    z = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)[:, None]
    cols = np.arange(length)[None, :]
    total = n * length
    loss = float((logsumexp - z[rows, labels, cols]).sum() / total)
    p = np.exp(z - logsumexp[:, None])
    p[rows, labels, cols] -= 1
    grad = (p / total)[:, :, None, :]
    return loss, (grad[0] if single else grad)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step_count: int = 0


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """In-place bias-corrected Adam update; returns ``params`` for convenience."""
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError(f"adam_step: optimizer state tracks {len(state.m)} params, got {len(params)}")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"adam_step: param {p.shape}, grad {g.shape}, state {m.shape} disagree")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params


# ---------------------------------------------------------------------------
# stateful layer wrappers
# ---------------------------------------------------------------------------

class Layer:
    """Base for layers holding named parameters and their gradients."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, training: bool = False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, in_ch: int, out_ch: int, kernel=(3, 3)):
        super().__init__()
        self.params["weight"] = np.zeros((out_ch, in_ch, *kernel))
        self.params["bias"] = np.zeros(out_ch)

    def forward(self, x, training=False):
        y, self._cache = conv2d_forward(x, self.params["weight"], self.params["bias"])
        return y

    def backward(self, dy):
        dx, self.grads["weight"], self.grads["bias"] = conv2d_backward(dy, self._cache)
        return dx


class UpConv(Layer):
    def __init__(self, in_ch: int, out_ch: int, k: int):
        super().__init__()
        self.params["weight"] = np.zeros((out_ch, in_ch, 1, k))
        self.params["bias"] = np.zeros(out_ch)

    def forward(self, x, training=False):
        y, self._cache = transposed_conv_forward(x, self.params["weight"], self.params["bias"])
        return y

    def backward(self, dy):
        dx, self.grads["weight"], self.grads["bias"] = transposed_conv_backward(dy, self._cache)
        return dx


class BatchNorm(Layer):
    def __init__(self, channels: int, momentum: float = 0.1, epsilon: float = 1e-5):
        super().__init__()
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.momentum = momentum
        self.epsilon = epsilon

    def state(self, training: bool) -> BatchNormState:
        return BatchNormState(
            self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            self.momentum, self.epsilon, training,
        )

    def forward(self, x, training=False):
        y, self._cache = batchnorm_forward(x, self.state(training))
        return y

    def backward(self, dy):
        dx, self.grads["gamma"], self.grads["beta"] = batchnorm_backward(dy, self._cache)
        return dx


class ReLU(Layer):
    def forward(self, x, training=False):
        y, self._cache = relu_forward(x)
        return y

    def backward(self, dy):
        return relu_backward(dy, self._cache)


class MaxPool(Layer):
    def __init__(self, k: int):
        super().__init__()
        self.k = k

    def forward(self, x, training=False):
        y, self._cache = maxpool_forward(x, self.k)
        return y

    def backward(self, dy):
        return maxpool_backward(dy, self._cache)
