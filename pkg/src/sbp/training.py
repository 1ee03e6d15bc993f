"""Phase drivers: bias-GAN training against a frozen classic model, and the
integrated variant where both are trained side by side."""
from __future__ import annotations

import numpy as np

from .bgan import BganHyper, BganState, init_bgan, train_iteration
from .classic import ClassicHyper, ClassicModel, batch_schedule, classic_step, freeze, init_classic
from .core import ContractViolation, make_rng


def train_bgan(model: ClassicModel, phi, gb, ds, hyper: BganHyper | None = None, seed: int = 0, state: BganState | None = None) -> BganState:
    """Run ``hyper.iters`` iterations on shuffled mini-batches of the training split.

    The classic model must be frozen; its checksum is verified before and after.
    """
    hyper = hyper or BganHyper()
    if not model.frozen:
        raise ContractViolation("bias-GAN training requires a frozen classic model")
    model.verify_frozen()
    state = state or init_bgan(ds.spec.feature_dim, ds.spec.m_classes, hyper, seed)
    train = ds.train
    for idx in batch_schedule(len(train), min(hyper.batch, len(train)), hyper.iters, make_rng(seed, 32)):
        ctx = train.ctx[idx]
        train_iteration(state, ctx, train.label[idx], model.forward(ctx), phi, gb)
    model.verify_frozen()
    return state


def train_integrated(ds, phi, gb, classic_hyper: ClassicHyper, hyper: BganHyper, seed: int = 0):
    """Joint schedule: every classic SGD step sees the cross-entropy loss and the
    bias-GAN iterations are spread evenly over the same run, against the
    still-moving classic logits. The classic model is frozen at the end.
    """
    hyper.validate()
    model = init_classic(ds.spec.feature_dim, ds.spec.m_classes, classic_hyper, seed)
    state = init_bgan(ds.spec.feature_dim, ds.spec.m_classes, hyper, seed)
    train = ds.train
    total = classic_hyper.iters
    # iteration i of the classic run triggers a bias-GAN step when the
    # cumulative quota floor((i + 1) * iters / total) advances
    quota = 0
    trace = []
    gan_batches = batch_schedule(len(train), min(hyper.batch, len(train)), hyper.iters, make_rng(seed, 32))
    cls_batches = batch_schedule(len(train), min(classic_hyper.batch, len(train)), total, make_rng(seed, 11))
    for i, idx in enumerate(cls_batches):
        trace.append(classic_step(model, train.ctx[idx], train.label[idx], classic_hyper.lr))
        target = (i + 1) * hyper.iters // total if total else hyper.iters
        while quota < target:
            gidx = next(gan_batches)
            ctx = train.ctx[gidx]
            train_iteration(state, ctx, train.label[gidx], model.forward(ctx), phi, gb)
            quota += 1
    for gidx in gan_batches:  # only reached when classic iters == 0
        ctx = train.ctx[gidx]
        train_iteration(state, ctx, train.label[gidx], model.forward(ctx), phi, gb)
    return freeze(model), trace, state
