import numpy as np
import pytest

from sbp.bgan import BganHyper
from sbp.bias import global_bias
from sbp.classic import (
    ClassicHyper,
    ClassicModel,
    PhiEncoder,
    classic_forward,
    freeze,
    phi_forward,
    train_classic,
)
from sbp.core import ContractViolation, FreezeViolation, make_rng, sgd_step
from sbp.data import DatasetSpec, generate
from sbp.training import train_bgan


def test_zero_head_gives_zero_logits():
    model = ClassicModel(5, 4, rng=make_rng(0), zero_head=True)
    assert np.array_equal(classic_forward(model, np.ones(5)), np.zeros(4))


def test_dimension_mismatch():
    with pytest.raises(ContractViolation):
        ClassicModel(5, 4, rng=make_rng(0)).forward(np.ones(6))


def test_frozen_forward_deterministic():
    model = freeze(ClassicModel(5, 4, rng=make_rng(0)))
    x = make_rng(1).standard_normal((3, 5))
    assert np.array_equal(model.forward(x), model.forward(x))


def test_single_class_trains_to_zero_loss():
    w = np.zeros(3)
    w[0] = 1.0
    ds = generate(DatasetSpec(m_classes=3, ctx_dim=4, n_train=200, n_test=8, group_size=4), w)
    _, trace = train_classic(ds, ClassicHyper(iters=3000), seed=0)
    assert trace[-1] < 0.01


def test_two_separated_classes():
    ds = generate(DatasetSpec(m_classes=2, ctx_dim=8, n_train=2000, n_test=400, zipf_s=0.0, noise_sigma=0.05))
    model, _ = train_classic(ds, ClassicHyper(iters=1500), seed=0)
    assert (model.forward(ds.test.ctx).argmax(1) == ds.test.label).mean() >= 0.99


def test_noise_free_head_classes_fit():
    ds = generate(DatasetSpec(noise_sigma=0.0, n_train=20000, n_test=8))
    model, _ = train_classic(ds, ClassicHyper(iters=18000), seed=1)
    head = ds.train.label < ds.spec.m_classes // 2
    pred = model.forward(ds.train.ctx[head]).argmax(1)
    assert (pred == ds.train.label[head]).mean() >= 0.99


def test_long_tail_bias_emerges(default_ds, default_classic):
    model, _ = default_classic
    pred = model.forward(default_ds.test.ctx).argmax(1)
    labels = default_ds.test.label
    m = default_ds.spec.m_classes
    recall = np.array([(pred[labels == c] == c).mean() for c in range(m)])
    assert recall[0] > recall[m // 2 :].mean()
    # head classes are over-predicted
    head = np.arange(m) < m // 2
    assert head[pred].mean() > head[labels].mean()


def test_loss_trace_finite_and_falling(default_classic):
    _, trace = default_classic
    trace = np.asarray(trace)
    assert np.all(np.isfinite(trace))
    first_half = trace[: len(trace) // 2]
    blocks = first_half[: len(first_half) // 1000 * 1000].reshape(-1, 1000).mean(axis=1)
    assert np.all(np.diff(blocks) <= 0)


def test_freeze_idempotent_and_blocks_optimizer():
    model = ClassicModel(4, 3, rng=make_rng(0))
    freeze(model)
    first = model.checksum
    assert freeze(model).checksum == first
    with pytest.raises(FreezeViolation):
        sgd_step(model.params(), 0.1)


def test_freeze_survives_bgan_training():
    ds = generate(DatasetSpec(m_classes=5, ctx_dim=6, n_train=300, n_test=40, group_size=4))
    model, _ = train_classic(ds, ClassicHyper(iters=200), seed=0)
    freeze(model)
    before = model.checksum
    phi = PhiEncoder(6, 5, seed=0)
    train_bgan(model, phi, global_bias(ds.class_weights), ds, BganHyper(iters=100, width=4), seed=0)
    model.verify_frozen()
    assert model.checksum == before


def test_verify_frozen_detects_tampering():
    model = freeze(ClassicModel(4, 3, rng=make_rng(0)))
    model.params()[0].value[0, 0] += 1e-12
    with pytest.raises(FreezeViolation):
        model.verify_frozen()


def test_phi_zero_output():
    phi = PhiEncoder(8, 5, "trans1", seed=0, zero_output=True)
    assert np.array_equal(phi_forward(phi, np.ones(8)), np.zeros(5))


@pytest.mark.parametrize("variant", ["fc", "trans1", "trans2"])
def test_phi_shape_and_determinism(variant):
    phi = PhiEncoder(10, 6, variant, seed=2)
    x = make_rng(3).standard_normal((4, 10))
    out = phi.forward(x)
    assert out.shape == (4, 6) and np.all(np.isfinite(out))
    assert np.array_equal(out, phi.forward(x))
    assert phi_forward(phi, x[0]).shape == (6,)


def test_phi_variants_differ():
    x = make_rng(3).standard_normal(10)
    outs = [PhiEncoder(10, 6, v, seed=2).forward(x) for v in ("fc", "trans1", "trans2")]
    assert not np.allclose(outs[0], outs[1]) and not np.allclose(outs[1], outs[2])


def test_phi_unknown_variant():
    with pytest.raises(ContractViolation):
        PhiEncoder(4, 3, "lstm")
