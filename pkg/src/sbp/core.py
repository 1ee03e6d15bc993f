"""Small deterministic numeric kernel: params, layers, losses, optimizers.

Tensors are plain float64 numpy arrays. Every layer caches what its backward
pass needs during ``forward`` and accumulates parameter gradients during
``backward``.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ContractViolation(ValueError):
    """Inputs broke an operation's preconditions (shapes, ranges)."""


class TrainingDivergence(RuntimeError):
    """A loss, gradient or update became non-finite."""


class FreezeViolation(RuntimeError):
    """An optimizer tried to update a frozen parameter."""


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator keyed by ``seed`` plus optional sub-stream ids.

    ``make_rng(7, 2)`` and ``make_rng(7, 3)`` are independent streams; the
    same key always yields the same draw sequence.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


class Param:
    def __init__(self, value, name: str = ""):
        self.value = np.array(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.state: dict[str, np.ndarray] = {}
        self.name = name
        self.frozen = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------- functional ops


def dense_forward(x: np.ndarray, w: Param, b: Param) -> np.ndarray:
    if x.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ContractViolation(f"dense shapes do not conform: x{x.shape} w{w.shape} b{b.shape}")
    return x @ w.value + b.value


def dense_backward(dy: np.ndarray, x: np.ndarray, w: Param, b: Param) -> np.ndarray:
    w.grad += x.T @ dy
    b.grad += dy.sum(axis=0)
    return dy @ w.value.T


def _cols(x: np.ndarray, ksize: int) -> np.ndarray:
    """im2col: (batch, ch_in, len) -> (batch * len, ch_in * ksize), zero padded."""
    n, ch, length = x.shape
    pad = (ksize - 1) // 2
    xp = np.zeros((n, length + 2 * pad, ch), dtype=DTYPE)
    xp[:, pad : pad + length] = x.transpose(0, 2, 1)
    cols = np.empty((n, length, ch, ksize), dtype=DTYPE)
    for j in range(ksize):
        cols[..., j] = xp[:, j : j + length]
    return cols.reshape(n * length, ch * ksize)


def conv1d_forward(x: np.ndarray, k: Param, b: Param) -> np.ndarray:
    """Stride-1, zero-padded, length-preserving cross-correlation plus bias."""
    if k.value.ndim != 3:
        raise ContractViolation(f"kernel must be (ch_out, ch_in, ksize), got {k.shape}")
    ch_out, ch_in, ksize = k.shape
    if ksize % 2 == 0:
        raise ContractViolation(f"kernel size must be odd, got {ksize}")
    if x.ndim != 3 or x.shape[1] != ch_in or b.shape != (ch_out,):
        raise ContractViolation(f"conv1d shapes do not conform: x{x.shape} k{k.shape} b{b.shape}")
    n, _, length = x.shape
    y = _cols(x, ksize) @ k.value.reshape(ch_out, -1).T + b.value
    return y.reshape(n, length, ch_out).transpose(0, 2, 1)


def conv1d_backward(dy: np.ndarray, x: np.ndarray, k: Param, b: Param) -> np.ndarray:
    ch_out, ch_in, ksize = k.shape
    n, _, length = x.shape
    pad = (ksize - 1) // 2
    dy2 = dy.transpose(0, 2, 1).reshape(n * length, ch_out)
    k.grad += (dy2.T @ _cols(x, ksize)).reshape(k.shape)
    b.grad += dy2.sum(axis=0)
    dcols = (dy2 @ k.value.reshape(ch_out, -1)).reshape(n, length, ch_in, ksize)
    dxp = np.zeros((n, length + 2 * pad, ch_in), dtype=DTYPE)
    for j in range(ksize):
        dxp[:, j : j + length] += dcols[..., j]
    return dxp[:, pad : pad + length].transpose(0, 2, 1)


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    if not 0.0 <= slope < 1.0:
        raise ContractViolation(f"slope must be in [0, 1), got {slope}")
    return np.maximum(x, slope * x)


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis with max subtraction."""
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Uses log1p over the non-maximal terms so a dominant logit keeps a
    tiny positive loss instead of rounding to zero."""
    s = z - z.max(axis=-1, keepdims=True)
    e = np.exp(s)
    np.put_along_axis(e, s.argmax(axis=-1)[..., None], 0.0, axis=-1)
    return s - np.log1p(e.sum(axis=-1, keepdims=True))


def cross_entropy(z: np.ndarray, t) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of logits ``z`` against class ids ``t``.

    Accepts a single logit vector with an int label, or a (batch, M) matrix
    with a label vector. Returns the loss and d(loss)/dz with z's shape.
    """
    single = z.ndim == 1
    z2 = np.atleast_2d(np.asarray(z, dtype=DTYPE))
    t2 = np.atleast_1d(np.asarray(t))
    m = z2.shape[1]
    if t2.shape[0] != z2.shape[0] or np.any(t2 < 0) or np.any(t2 >= m):
        raise ContractViolation(f"labels {t2.tolist()} out of range for {m} classes")
    n = z2.shape[0]
    logp = log_softmax(z2)
    loss = -float(logp[np.arange(n), t2].mean())
    grad = softmax(z2)
    grad[np.arange(n), t2] -= 1.0
    grad /= n
    return loss, grad[0] if single else grad


# ---------------------------------------------------------------- layers


class Layer:
    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Dense(Layer):
    """He-initialized affine map; ``rng=None`` gives an all-zero layer."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None, name: str = "dense", gain: float = 1.0, bias: bool = True):
        scale = gain * np.sqrt(2.0 / n_in)
        w = rng.standard_normal((n_in, n_out)) * scale if rng is not None else np.zeros((n_in, n_out))
        self.w = Param(w, f"{name}.w")
        # without bias, b stays a constant zero outside params()
        self.b = Param(np.zeros(n_out), f"{name}.b")
        self.has_bias = bias
        self._x = None

    def params(self) -> list[Param]:
        return [self.w, self.b] if self.has_bias else [self.w]

    def forward(self, x):
        self._x = x
        return dense_forward(x, self.w, self.b)

    def backward(self, dy):
        return dense_backward(dy, self._x, self.w, self.b)


class Conv1d(Layer):
    def __init__(self, ch_in: int, ch_out: int, ksize: int = 3, rng: np.random.Generator | None = None, name: str = "conv", gain: float = 1.0, bias: bool = True):
        if ksize % 2 == 0:
            raise ContractViolation(f"kernel size must be odd, got {ksize}")
        scale = gain * np.sqrt(2.0 / (ch_in * ksize))
        shape = (ch_out, ch_in, ksize)
        k = rng.standard_normal(shape) * scale if rng is not None else np.zeros(shape)
        self.k = Param(k, f"{name}.k")
        self.b = Param(np.zeros(ch_out), f"{name}.b")
        self.has_bias = bias
        self._x = None

    def params(self) -> list[Param]:
        return [self.k, self.b] if self.has_bias else [self.k]

    def forward(self, x):
        self._x = x
        return conv1d_forward(x, self.k, self.b)

    def backward(self, dy):
        return conv1d_backward(dy, self._x, self.k, self.b)


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.2):
        if not 0.0 <= slope < 1.0:
            raise ContractViolation(f"slope must be in [0, 1), got {slope}")
        self.slope = slope
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        self.min_abs_input = float(np.abs(x).min()) if x.size else np.inf
        return np.where(self._mask, x, self.slope * x)

    def backward(self, dy):
        return np.where(self._mask, dy, self.slope * dy)


class MeanPool(Layer):
    """(batch, ch, len) -> (batch,) mean over channels and length."""

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dy):
        n = self._shape[1] * self._shape[2]
        return np.broadcast_to(dy[:, None, None] / n, self._shape).copy()


class Reshape(Layer):
    def __init__(self, *shape: int):
        self.shape = shape

    def forward(self, x):
        self._in = x.shape
        return x.reshape((x.shape[0], *self.shape))

    def backward(self, dy):
        return dy.reshape(self._in)


class Sequential(Layer):
    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


# ---------------------------------------------------------------- optimizers


def _check_trainable(params: Sequence[Param]) -> None:
    for p in params:
        if p.frozen:
            raise FreezeViolation(f"optimizer step on frozen parameter {p.name!r}")
        if not np.all(np.isfinite(p.grad)):
            raise TrainingDivergence(f"non-finite gradient in {p.name!r}")


def sgd_step(params: Sequence[Param], lr: float) -> None:
    _check_trainable(params)
    for p in params:
        p.value -= lr * p.grad
        p.zero_grad()


def rmsprop_step(params: Sequence[Param], lr: float, decay: float = 0.9, eps: float = 1e-8) -> None:
    """value -= lr * grad / (sqrt(v) + eps), v the running mean of grad**2."""
    if not 0.0 < decay < 1.0:
        raise ContractViolation(f"decay must be in (0, 1), got {decay}")
    _check_trainable(params)
    steps = []
    for p in params:
        v = p.state.get("sq")
        if v is None:
            v = p.state["sq"] = np.zeros_like(p.value)
        v_new = decay * v + (1.0 - decay) * p.grad**2
        denom = np.sqrt(v_new) + eps
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(p.grad == 0.0, 0.0, lr * p.grad / denom)
        if not np.all(np.isfinite(step)):
            raise TrainingDivergence(f"non-finite RMSProp update for {p.name!r}")
        steps.append((p, v_new, step))
    for p, v_new, step in steps:
        p.state["sq"][...] = v_new
        p.value -= step
        p.zero_grad()


def clip_params(params: Iterable[Param], c: float) -> None:
    if c <= 0:
        raise ContractViolation(f"clip value must be positive, got {c}")
    for p in params:
        np.clip(p.value, -c, c, out=p.value)


# ---------------------------------------------------------------- gradient check


def rel_err(a, n) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    n = np.asarray(n, dtype=DTYPE)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def finite_diff_check(f: Callable[[], float], params: Sequence[Param], step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` runs a forward and backward pass, accumulates into each ``Param.grad``
    and returns the scalar loss. Grads are left zeroed on return.
    """
    if not 1e-6 <= step <= 1e-4:
        raise ContractViolation(f"step must be in [1e-6, 1e-4], got {step}")
    zero_grads(params)
    f()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f()
            flat[i] = orig - step
            down = f()
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * step)
        if flat.size:
            worst = max(worst, float(rel_err(a.reshape(-1), numeric).max()))
    zero_grads(params)
    return worst
