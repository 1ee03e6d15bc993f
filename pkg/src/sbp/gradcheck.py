"""Finite-difference verification of every layer and of the full loss graphs.

Each case builds a random instance and returns a closure running forward plus
backward. Instances with a leaky-ReLU pre-activation closer than
``KINK_MARGIN`` to zero are redrawn: central differences straddling the kink
measure a one-sided slope, not the derivative.

The critic loss is a difference of batch means, so a hidden unit whose
activation pattern is identical for every sample has a bias gradient of
exactly zero; the relative error of an exact zero is pure roundoff. Critic
instances are therefore also redrawn until every hidden unit sees a mixed
pattern across the batch.

Finally, at the fixed step the difference quotient carries roundoff near
1e-11, so a coordinate whose true gradient is below ``GRAD_FLOOR`` cannot be
scored to the tolerance at all; instances with such coordinates are redrawn
as well. A wrong backward pass cannot hide behind this: it either produces
large errors on the remaining coordinates or exhausts the redraw budget,
which is reported as a failure.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bgan import BganHyper, Critic, Generator, loss_d, loss_g, loss_regress
from .classic import ClassicModel
from .core import (
    Conv1d,
    Dense,
    LeakyReLU,
    MeanPool,
    Param,
    Sequential,
    cross_entropy,
    finite_diff_check,
    make_rng,
    zero_grads,
)

TOL = 1e-5
STEP = 1e-5
KINK_MARGIN = 1e-3
GRAD_FLOOR = 1e-6
M, CTX, BATCH = 6, 5, 4


@dataclass
class CaseResult:
    name: str
    max_rel_err: float
    tol: float
    redraws: int = 0
    worst_param: str = ""

    @property
    def ok(self) -> bool:
        return self.max_rel_err <= self.tol


def _relus(*objs) -> list[LeakyReLU]:
    found = []
    stack = list(objs)
    while stack:
        o = stack.pop()
        if isinstance(o, LeakyReLU):
            found.append(o)
        elif isinstance(o, Sequential):
            stack.extend(o.layers)
        elif hasattr(o, "net"):
            stack.append(o.net)
    return found


def _layer_case(layer, x_shape, rng):
    """Loss = <layer(x), R>; checks the layer's parameters and its input gradient."""
    x = Param(rng.standard_normal(x_shape), "input")
    r = None

    def f():
        nonlocal r
        y = layer.forward(x.value)
        if r is None:
            r = rng.standard_normal(y.shape)
        x.grad += layer.backward(r)
        return float((y * r).sum())

    return f, layer.params() + [x], _relus(layer), False


def case_dense(rng):
    return _layer_case(Dense(5, 4, rng), (3, 5), rng)


def case_conv1d_k3(rng):
    return _layer_case(Conv1d(3, 4, 3, rng), (2, 3, 7), rng)


def case_conv1d_k5(rng):
    return _layer_case(Conv1d(2, 3, 5, rng), (2, 2, 6), rng)


def case_leaky_relu(rng):
    return _layer_case(LeakyReLU(0.2), (4, 6), rng)


def case_mean_pool(rng):
    return _layer_case(MeanPool(), (3, 2, 5), rng)


def case_softmax_cross_entropy(rng):
    layer = Dense(6, 4, rng)
    x = rng.standard_normal((5, 6))
    y = rng.integers(0, 4, size=5)

    def f():
        loss, dz = cross_entropy(layer.forward(x), y)
        layer.backward(dz)
        return loss

    return f, layer.params(), [], False


def case_classic_model(rng):
    model = ClassicModel(6, 5, (8, 7), rng)
    x = rng.standard_normal((4, 6))
    y = rng.integers(0, 5, size=4)

    def f():
        loss, dz = cross_entropy(model.forward(x), y)
        model.backward(dz)
        return loss

    return f, model.params(), _relus(model.encoder), False


def _hyper(variant):
    return BganHyper(variant=variant, width=6, fc_width=8)


def _gen_inputs(rng):
    return (
        rng.standard_normal((BATCH, CTX)),
        rng.standard_normal(M),
        rng.standard_normal((BATCH, M)),
        rng.integers(0, M, size=BATCH),
    )


def _generator_loss_case(variant, rng):
    hyper = _hyper(variant)
    G = Generator(CTX, M, hyper, rng)
    D = Critic(M, hyper, rng)
    ctx, glo, z, y = _gen_inputs(rng)

    def f():
        b = G.forward(ctx, glo, z)
        loss, dscore, dzh = loss_g(D.forward(b), z + b, y, 0.075)
        G.backward(D.backward(dscore) + dzh)
        return loss

    # the critic's own parameters are covered by the critic cases; here it
    # only carries the gradient back to the generator
    return f, G.params(), _relus(G, D), False


def _critic_loss_case(variant, rng):
    D = Critic(M, _hyper(variant), rng)
    # real and fake batches at different scales so hidden units do not share
    # one activation pattern across every sample (their bias gradient would
    # then cancel to an exact zero)
    real = 2.0 * rng.standard_normal((BATCH, M)) + 1.0
    fake = rng.standard_normal((BATCH + 1, M)) - 1.0

    def f():
        scores = D.forward(np.concatenate([real, fake]))
        loss, ds, dg = loss_d(scores[:BATCH], scores[BATCH:])
        D.backward(np.concatenate([ds, dg]))
        return loss

    return f, D.params(), _relus(D), True


def _regress_case(variant, rng):
    G = Generator(CTX, M, _hyper(variant), rng)
    ctx, glo, z, y = _gen_inputs(rng)
    target = rng.standard_normal((BATCH, M))

    def f():
        b = G.forward(ctx, glo, z)
        loss, db = loss_regress(b, target, z + b, y, 0.075)
        G.backward(db)
        return loss

    return f, G.params(), _relus(G), False


CASES: dict[str, Callable] = {
    "dense": case_dense,
    "conv1d_k3": case_conv1d_k3,
    "conv1d_k5": case_conv1d_k5,
    "leaky_relu": case_leaky_relu,
    "mean_pool": case_mean_pool,
    "softmax_cross_entropy": case_softmax_cross_entropy,
    "classic_model": case_classic_model,
    "generator_conv_loss_g": lambda rng: _generator_loss_case("bgan", rng),
    "critic_conv_loss_d": lambda rng: _critic_loss_case("bgan", rng),
    "generator_fc_loss_g": lambda rng: _generator_loss_case("bgan_fc", rng),
    "critic_fc_loss_d": lambda rng: _critic_loss_case("bgan_fc", rng),
    "generator_conv_regress": lambda rng: _regress_case("1d5", rng),
    "generator_fc_regress": lambda rng: _regress_case("fc5", rng),
}


def _mixed(mask: np.ndarray) -> bool:
    """Every unit (axis 1) has a pattern that differs between some samples."""
    flat = mask.reshape(mask.shape[0], mask.shape[1], -1)
    return bool((flat != flat[:1]).any(axis=(0, 2)).all())


def draw_instance(build: Callable, seed: int, *key: int, max_redraws: int = 200):
    """First draw that is valid for finite differences, or None."""
    for attempt in range(max_redraws):
        f, params, relus, need_mixed = build(make_rng(seed, *key, attempt))
        zero_grads(params)
        f()
        smallest = min((float(np.abs(p.grad).min()) for p in params if p.value.size), default=np.inf)
        zero_grads(params)
        if (
            smallest >= GRAD_FLOOR
            and all(r.min_abs_input > KINK_MARGIN for r in relus)
            and (not need_mixed or all(_mixed(r._mask) for r in relus))
        ):
            return f, params, attempt
    return None


def run_suite(instances: int = 20, seed: int = 0, cases: dict[str, Callable] | None = None, tol: float = TOL) -> list[CaseResult]:
    """Worst relative error per case over ``instances`` random draws."""
    results = []
    for i, (name, build) in enumerate((cases or CASES).items()):
        worst, redraws, where = 0.0, 0, ""
        for k in range(instances):
            drawn = draw_instance(build, seed, i, k)
            if drawn is None:
                worst, where = np.inf, "no valid instance"
                break
            f, params, tries = drawn
            redraws += tries
            for p in params:
                err = finite_diff_check(f, [p], STEP)
                if err > worst:
                    worst, where = err, p.name
        results.append(CaseResult(name, worst, tol, redraws, where))
    return results
