"""Bias-oriented GAN: a generator that predicts per-sample logit biases and a
critic that scores bias vectors, trained against constructed correction biases.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .bias import GlobalBias, build_batch_set
from .core import (
    ContractViolation,
    Conv1d,
    Dense,
    LeakyReLU,
    MeanPool,
    Param,
    Reshape,
    Sequential,
    TrainingDivergence,
    clip_params,
    cross_entropy,
    make_rng,
    rmsprop_step,
    zero_grads,
)

VARIANTS = ("bgan", "bgan_fc", "fc5", "1d5")
SCHEDULES = ("constant", "linear_decay")


@dataclass
class BganHyper:
    lr_g: float = 0.0001
    lr_d: float = 0.0005
    critic_ratio: int = 5
    alpha: float = 0.075
    clip_c: float | None = 0.01
    iters: int = 1000
    lr_schedule: str = "linear_decay"
    batch: int = 16
    eps_c: float = 0.0001
    variant: str = "bgan"
    g_layers: int = 5
    d_layers: int = 3
    width: int = 16
    ksize: int = 3
    fc_width: int = 64
    rms_decay: float = 0.99
    rms_eps: float = 1e-8

    def validate(self) -> None:
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ContractViolation("learning rates must be positive")
        if self.critic_ratio < 1:
            raise ContractViolation(f"critic_ratio must be >= 1, got {self.critic_ratio}")
        if self.clip_c is not None and self.clip_c <= 0:
            raise ContractViolation(f"clip_c must be positive or null, got {self.clip_c}")
        if self.iters < 0 or self.batch < 1:
            raise ContractViolation("iters must be >= 0 and batch >= 1")
        if self.lr_schedule not in SCHEDULES:
            raise ContractViolation(f"lr_schedule must be one of {SCHEDULES}, got {self.lr_schedule!r}")
        if self.variant not in VARIANTS:
            raise ContractViolation(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.g_layers < 1 or self.d_layers < 1:
            raise ContractViolation("g_layers and d_layers must be >= 1")
        if self.ksize % 2 == 0:
            raise ContractViolation(f"ksize must be odd, got {self.ksize}")
        if self.alpha < 0:
            raise ContractViolation(f"alpha must be >= 0, got {self.alpha}")
        if not 0 <= self.rms_decay < 1:
            raise ContractViolation(f"rms_decay must lie in [0, 1), got {self.rms_decay}")
        if self.eps_c <= 0:
            raise ContractViolation(f"eps_c must be positive, got {self.eps_c}")

    @property
    def adversarial(self) -> bool:
        return self.variant in ("bgan", "bgan_fc")

    @property
    def arch(self) -> str:
        return "fc" if self.variant in ("bgan_fc", "fc5") else "conv"


def _stack(widths, make, slope=0.2):
    layers = []
    for i in range(len(widths) - 1):
        layers.append(make(i, widths[i], widths[i + 1], i < len(widths) - 2))
        if i < len(widths) - 2:
            layers.append(LeakyReLU(slope))
    return layers


class Generator:
    """(ctx, b_glo, z) -> b_pre.

    conv: ctx is projected to a length-M channel and stacked with b_glo and
    z into a 3-channel signal that runs through ``layers`` convolutions.
    fc: the three inputs are concatenated and fed to a dense stack.
    """

    def __init__(self, in_dim: int, m: int, hyper: BganHyper, rng: np.random.Generator | None = None):
        self.in_dim, self.m, self.arch = in_dim, m, hyper.arch
        if self.arch == "conv":
            self.proj = Dense(in_dim, m, rng, name="g.proj")
            widths = [3] + [hyper.width] * (hyper.g_layers - 1) + [1]
            self.net = Sequential(
                _stack(widths, lambda i, a, b, _: Conv1d(a, b, hyper.ksize, rng, name=f"g.conv{i}")) + [Reshape(m)]
            )
        else:
            self.proj = None
            widths = [in_dim + 2 * m] + [hyper.fc_width] * (hyper.g_layers - 1) + [m]
            self.net = Sequential(_stack(widths, lambda i, a, b, _: Dense(a, b, rng, name=f"g.fc{i}")))

    def params(self) -> list[Param]:
        return ([] if self.proj is None else self.proj.params()) + self.net.params()

    def forward(self, ctx, b_glo, z) -> np.ndarray:
        ctx = np.atleast_2d(ctx)
        z = np.atleast_2d(z)
        n = ctx.shape[0]
        if ctx.shape[1] != self.in_dim or z.shape != (n, self.m) or np.shape(b_glo) != (self.m,):
            raise ContractViolation(f"generator inputs do not conform: ctx{ctx.shape} b_glo{np.shape(b_glo)} z{z.shape}")
        glo = np.broadcast_to(b_glo, (n, self.m))
        if self.arch == "conv":
            x = np.stack([self.proj.forward(ctx), glo, z], axis=1)
        else:
            x = np.concatenate([ctx, glo, z], axis=1)
        return self.net.forward(x)

    def backward(self, db: np.ndarray) -> None:
        dx = self.net.backward(db)
        if self.proj is not None:
            self.proj.backward(dx[:, 0, :])


class Critic:
    """Bias vector -> scalar score (conv stack with mean pooling, or dense stack).

    The output layer has no bias: a constant offset cancels in the critic loss
    and never reaches the generator.
    """

    def __init__(self, m: int, hyper: BganHyper, rng: np.random.Generator | None = None):
        self.m, self.arch = m, hyper.arch
        if self.arch == "conv":
            widths = [1] + [hyper.width] * (hyper.d_layers - 1) + [1]
            self.net = Sequential(
                [Reshape(1, m)]
                + _stack(widths, lambda i, a, b, hidden: Conv1d(a, b, hyper.ksize, rng, name=f"d.conv{i}", bias=hidden))
                + [MeanPool()]
            )
        else:
            widths = [m] + [hyper.fc_width] * (hyper.d_layers - 1) + [1]
            self.net = Sequential(
                _stack(widths, lambda i, a, b, hidden: Dense(a, b, rng, name=f"d.fc{i}", bias=hidden)) + [Reshape()]
            )
        self.widths = widths

    def params(self) -> list[Param]:
        return self.net.params()

    def forward(self, b) -> np.ndarray:
        b = np.atleast_2d(b)
        if b.shape[1] != self.m:
            raise ContractViolation(f"critic expects length-{self.m} biases, got {b.shape}")
        return self.net.forward(b)

    def backward(self, dscore: np.ndarray) -> np.ndarray:
        return self.net.backward(dscore)

    def score_bound(self, input_bound: float) -> float:
        """Upper bound on |score| given |inputs| <= input_bound, from current weights."""
        bound = input_bound
        for layer in self.net.layers:
            if not layer.params():
                continue
            w = layer.params()[0].value
            fan = np.abs(w).reshape(w.shape[0], -1).sum(axis=1) if w.ndim == 3 else np.abs(w).sum(axis=0)
            bound = float((fan * bound + np.abs(layer.b.value)).max())
        return bound


def g_forward(G: Generator, ctx, b_glo, z) -> np.ndarray:
    out = G.forward(ctx, b_glo, z)
    return out[0] if np.ndim(ctx) == 1 else out


def d_forward(D: Critic, b) -> float | np.ndarray:
    out = D.forward(b)
    return float(out[0]) if np.ndim(b) == 1 else out


def loss_g(scores_g, z_hat, labels, alpha: float):
    """-mean(scores_g) + alpha * mean CE(z_hat, labels).

    Returns (loss, d/dscores_g, d/dz_hat).
    """
    scores_g = np.asarray(scores_g, dtype=np.float64)
    if scores_g.size == 0:
        raise ContractViolation("empty batch")
    ce, dz = cross_entropy(np.atleast_2d(z_hat), np.atleast_1d(labels))
    dscores = np.full(scores_g.shape, -1.0 / scores_g.size)
    return float(-scores_g.mean() + alpha * ce), dscores, alpha * dz


def loss_d(scores_s, scores_g):
    """Wasserstein critic loss -mean(scores_s) + mean(scores_g)."""
    scores_s = np.asarray(scores_s, dtype=np.float64)
    scores_g = np.asarray(scores_g, dtype=np.float64)
    if scores_s.size == 0 or scores_g.size == 0:
        raise ContractViolation("empty score list")
    loss = float(-scores_s.mean() + scores_g.mean())
    return loss, np.full(scores_s.shape, -1.0 / scores_s.size), np.full(scores_g.shape, 1.0 / scores_g.size)


def loss_regress(b_pre, b_tru, z_hat, labels, alpha: float):
    """Non-adversarial baseline: mean squared error to b_tru plus alpha * CE."""
    diff = b_pre - b_tru
    ce, dz = cross_entropy(z_hat, labels)
    return float((diff**2).mean() + alpha * ce), 2.0 * diff / diff.size + alpha * dz


# ---------------------------------------------------------------- training


@dataclass
class BganState:
    G: Generator
    D: Critic | None
    hyper: BganHyper
    lr_g: float
    lr_d: float
    iteration: int = 0
    critic_updates: int = 0
    gen_updates: int = 0
    constructions: int = 0
    min_margin: float = float("inf")
    bad_constructions: int = 0
    trace: list[dict] = field(default_factory=list)


def init_bgan(in_dim: int, m: int, hyper: BganHyper, seed: int) -> BganState:
    hyper.validate()
    G = Generator(in_dim, m, hyper, make_rng(seed, 30))
    D = Critic(m, hyper, make_rng(seed, 31)) if hyper.adversarial else None
    if D is not None and hyper.clip_c is not None:
        clip_params(D.params(), hyper.clip_c)
    return BganState(G, D, hyper, hyper.lr_g, hyper.lr_d)


def _finite(name: str, value: float) -> float:
    if not np.isfinite(value):
        raise TrainingDivergence(f"{name} became {value}")
    return value


def _targets(state: BganState, ctx, labels, z, phi, gb) -> np.ndarray:
    biases = build_batch_set(ctx, labels, z, phi, gb, state.hyper.eps_c)
    for zi, cb in zip(z, biases):
        state.constructions += 1
        state.min_margin = min(state.min_margin, cb.margin)
        if int(np.argmax(zi + cb.b_tru)) != cb.r_tru or cb.margin < 0.9 * state.hyper.eps_c:
            state.bad_constructions += 1
    return np.stack([cb.b_tru for cb in biases])


def train_iteration(state: BganState, ctx: np.ndarray, labels: np.ndarray, z: np.ndarray, phi, gb: GlobalBias) -> dict:
    """One training iteration on a batch whose frozen-model logits are ``z``."""
    h = state.hyper
    G, D = state.G, state.D
    b_glo = gb.b_glo
    rec = {"iteration": state.iteration}
    if h.adversarial:
        for k in range(h.critic_ratio):
            zero_grads(D.params())
            b_pre = G.forward(ctx, b_glo, z)
            b_tru = _targets(state, ctx, labels, z, phi, gb)
            n = len(b_tru)
            scores = D.forward(np.concatenate([b_tru, b_pre]))
            l_d, ds, dg = loss_d(scores[:n], scores[n:])
            _finite("critic loss", l_d)
            # b_pre enters as data: the input gradient is discarded
            D.backward(np.concatenate([ds, dg]))
            rmsprop_step(D.params(), state.lr_d, h.rms_decay, h.rms_eps)
            if h.clip_c is not None:
                clip_params(D.params(), h.clip_c)
            state.critic_updates += 1
            if k == h.critic_ratio - 1:
                zero_grads(G.params())
                b_pre = G.forward(ctx, b_glo, z)
                t_g = D.forward(b_pre)
                l_g, dscore, dz_hat = loss_g(t_g, z + b_pre, labels, h.alpha)
                _finite("generator loss", l_g)
                db = D.backward(dscore) + dz_hat
                zero_grads(D.params())
                G.backward(db)
                rmsprop_step(G.params(), state.lr_g, h.rms_decay, h.rms_eps)
                state.gen_updates += 1
                rec.update(
                    loss_g=l_g,
                    loss_d=l_d,
                    critic_gap=float(np.abs(D.forward(b_tru) - D.forward(b_pre)).mean()),
                )
    else:
        zero_grads(G.params())
        b_pre = G.forward(ctx, b_glo, z)
        b_tru = _targets(state, ctx, labels, z, phi, gb)
        l_g, db = loss_regress(b_pre, b_tru, z + b_pre, labels, h.alpha)
        _finite("generator loss", l_g)
        G.backward(db)
        rmsprop_step(G.params(), state.lr_g, h.rms_decay, h.rms_eps)
        state.gen_updates += 1
        rec.update(loss_g=l_g, loss_d=0.0, critic_gap=0.0)
    rec["target_dist"] = float(np.abs(b_pre - b_tru).max(axis=1).mean())
    rec["lr_g"], rec["lr_d"] = state.lr_g, state.lr_d
    state.iteration += 1
    if h.lr_schedule == "linear_decay" and h.iters > 0:
        frac = max(0.0, 1.0 - state.iteration / h.iters)
        state.lr_g, state.lr_d = h.lr_g * frac, h.lr_d * frac
    state.trace.append(rec)
    return rec
