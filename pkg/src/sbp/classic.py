"""The biased base classifier and the context encoder used to seed correction biases."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ContractViolation,
    Dense,
    FreezeViolation,
    LeakyReLU,
    Param,
    Sequential,
    TrainingDivergence,
    cross_entropy,
    make_rng,
    sgd_step,
    softmax,
)

PHI_VARIANTS = ("fc", "trans1", "trans2")


def param_checksum(params) -> str:
    """64-bit hex digest over names, shapes and raw float64 bytes."""
    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode())
        h.update(np.asarray(p.shape, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


class ClassicModel:
    """Dense encoder (ctx -> hidden) followed by a linear head to M logits."""

    def __init__(self, in_dim: int, m_classes: int, hidden=(64, 64), rng: np.random.Generator | None = None, zero_head: bool = False):
        self.in_dim = in_dim
        self.m_classes = m_classes
        self.hidden = tuple(hidden)
        layers = []
        prev = in_dim
        for i, h in enumerate(self.hidden):
            layers += [Dense(prev, h, rng, name=f"classic.enc{i}"), LeakyReLU(0.2)]
            prev = h
        self.encoder = Sequential(layers)
        self.head = Dense(prev, m_classes, None if zero_head else rng, name="classic.head")
        self.net = Sequential([self.encoder, self.head])
        self.frozen = False
        self.checksum: str | None = None

    def params(self) -> list[Param]:
        return self.net.params()

    def forward(self, ctx: np.ndarray) -> np.ndarray:
        """Logits for one ctx vector or a (batch, in_dim) matrix."""
        x = np.atleast_2d(np.asarray(ctx, dtype=np.float64))
        if x.shape[1] != self.in_dim:
            raise ContractViolation(f"ctx has dimension {x.shape[1]}, model expects {self.in_dim}")
        z = self.net.forward(x)
        return z[0] if np.ndim(ctx) == 1 else z

    def backward(self, dz: np.ndarray) -> None:
        self.net.backward(dz)

    def verify_frozen(self) -> None:
        """Raise if the parameters drifted since ``freeze``."""
        if not self.frozen:
            raise ContractViolation("classic model is not frozen")
        now = param_checksum(self.params())
        if now != self.checksum:
            raise FreezeViolation(f"classic checksum changed: {self.checksum} -> {now}")


def classic_forward(model: ClassicModel, ctx) -> np.ndarray:
    return model.forward(ctx)


def freeze(model: ClassicModel) -> ClassicModel:
    if model.frozen:
        return model
    for p in model.params():
        p.frozen = True
    model.frozen = True
    model.checksum = param_checksum(model.params())
    return model


@dataclass
class ClassicHyper:
    lr: float = 0.001
    batch: int = 16
    iters: int = 3000
    hidden: tuple = (64, 64)


def classic_step(model: ClassicModel, ctx: np.ndarray, labels: np.ndarray, lr: float) -> float:
    z = model.forward(ctx)
    loss, dz = cross_entropy(z, labels)
    if not np.isfinite(loss):
        raise TrainingDivergence(f"classic loss became {loss}")
    model.backward(dz)
    sgd_step(model.params(), lr)
    return loss


def init_classic(in_dim: int, m_classes: int, hyper: ClassicHyper, seed: int) -> ClassicModel:
    return ClassicModel(in_dim, m_classes, hyper.hidden, rng=make_rng(seed, 10))


def batch_schedule(n: int, batch: int, iters: int, rng: np.random.Generator):
    """Yield ``iters`` index arrays drawn from reshuffled passes over ``n`` items."""
    order = rng.permutation(n)
    pos = 0
    for _ in range(iters):
        if pos + batch > n:
            order = rng.permutation(n)
            pos = 0
        yield order[pos : pos + batch]
        pos += batch


def train_classic(ds, hyper: ClassicHyper | None = None, seed: int = 0) -> tuple[ClassicModel, list[float]]:
    """Plain cross-entropy SGD training. Returns the (unfrozen) model and loss trace."""
    hyper = hyper or ClassicHyper()
    if len(ds.train) == 0:
        raise ContractViolation("empty training set")
    model = init_classic(ds.spec.feature_dim, ds.spec.m_classes, hyper, seed)
    trace = []
    rng = make_rng(seed, 11)
    for idx in batch_schedule(len(ds.train), min(hyper.batch, len(ds.train)), hyper.iters, rng):
        trace.append(classic_step(model, ds.train.ctx[idx], ds.train.label[idx], hyper.lr))
    return model, trace


def predict_proba(model: ClassicModel, ctx) -> np.ndarray:
    return softmax(model.forward(ctx))


# ---------------------------------------------------------------- phi encoder


def _attention(x: np.ndarray, wq, wk, wv, wo) -> np.ndarray:
    """Single-head self-attention with a residual, over tokens on axis -2."""
    q, k, v = x @ wq, x @ wk, x @ wv
    att = softmax(q @ np.swapaxes(k, -1, -2) / np.sqrt(x.shape[-1]))
    return x + (att @ v) @ wo


class PhiEncoder:
    """Maps a context feature to a length-M vector. Never trained.

    ``fc`` is one linear map. ``trans1``/``trans2`` split the (zero-padded)
    ctx into ``tokens`` chunks, embed each chunk, run one or two
    self-attention blocks, mean-pool the tokens and project to M.
    """

    def __init__(self, in_dim: int, m_classes: int, variant: str = "trans1", seed: int = 0, tokens: int = 8, width: int = 16, out_scale: float = 0.1, zero_output: bool = False):
        if variant not in PHI_VARIANTS:
            raise ContractViolation(f"phi variant must be one of {PHI_VARIANTS}, got {variant!r}")
        rng = make_rng(seed, 20)
        self.variant = variant
        self.in_dim = in_dim
        self.m_classes = m_classes
        self.tokens = tokens
        self.chunk = -(-in_dim // tokens)
        self.blocks: list[tuple[np.ndarray, ...]] = []
        if variant == "fc":
            self.embed = None
            feat = in_dim
        else:
            self.embed = rng.standard_normal((self.chunk, width)) / np.sqrt(self.chunk)
            for _ in range(1 if variant == "trans1" else 2):
                self.blocks.append(tuple(rng.standard_normal((width, width)) / np.sqrt(width) for _ in range(4)))
            feat = width
        self.proj = rng.standard_normal((feat, m_classes)) * (out_scale / np.sqrt(feat))
        if zero_output:
            self.proj[...] = 0.0

    def forward(self, ctx) -> np.ndarray:
        x = np.atleast_2d(np.asarray(ctx, dtype=np.float64))
        if x.shape[1] != self.in_dim:
            raise ContractViolation(f"ctx has dimension {x.shape[1]}, phi expects {self.in_dim}")
        if self.embed is None:
            h = x
        else:
            pad = self.chunk * self.tokens - self.in_dim
            t = np.pad(x, ((0, 0), (0, pad))).reshape(x.shape[0], self.tokens, self.chunk)
            h = t @ self.embed
            for block in self.blocks:
                h = _attention(h, *block)
            h = h.mean(axis=1)
        out = h @ self.proj
        return out[0] if np.ndim(ctx) == 1 else out


def phi_forward(phi: PhiEncoder, ctx) -> np.ndarray:
    return phi.forward(ctx)
