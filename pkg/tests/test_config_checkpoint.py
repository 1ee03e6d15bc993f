import json

import numpy as np
import pytest

from sbp.bgan import BganHyper, init_bgan
from sbp.checkpoint import CheckpointError, load_bgan, load_classic, save_bgan, save_classic
from sbp.classic import ClassicModel, freeze
from sbp.config import ConfigError, ExperimentConfig, config_from_dict, config_to_json, load_config
from sbp.core import FreezeViolation, make_rng


def test_defaults_validate():
    cfg = ExperimentConfig().validate()
    assert cfg.dataset.m_classes == 20 and cfg.bgan.critic_ratio == 5 and cfg.mode == "gradual"


@pytest.mark.parametrize("raw", [{"bogus": 1}, {"bgan": {"lr_gg": 0.1}}, {"dataset": {"m": 3}}])
def test_unknown_keys_rejected(raw):
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict(raw)


@pytest.mark.parametrize(
    "raw",
    [
        {"bgan": {"alpha": -1.0}},
        {"bgan": {"lr_schedule": "cosine"}},
        {"bias": {"scope": "everything"}},
        {"bias": {"eps_c": 0}},
        {"mode": "parallel"},
        {"eval": {"k_values": [0]}},
        {"eval": {"correctors": ["magic"]}},
        {"dataset": {"group_size": "8"}},
        {"bias": {"use_global_bias": 1}},
        {"seed": 1.5},
    ],
)
def test_invalid_values_rejected(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_int_coerced_to_float():
    cfg = config_from_dict({"bgan": {"alpha": 0}, "dataset": {"zipf_s": 2}})
    assert isinstance(cfg.bgan.alpha, float) and cfg.bgan.alpha == 0.0
    assert isinstance(cfg.dataset.zipf_s, float)


def test_clip_may_be_disabled():
    assert config_from_dict({"bgan": {"clip_c": None}}).bgan.clip_c is None


def test_config_json_round_trip(tmp_path):
    cfg = config_from_dict({"seed": 7, "bgan": {"iters": 3}, "bias": {"a": 0.5}})
    path = tmp_path / "c.json"
    path.write_text(config_to_json(cfg))
    assert load_config(path) == cfg


def test_missing_and_malformed_config(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "bad.json")


def test_classic_checkpoint_bitwise_round_trip(tmp_path):
    model = freeze(ClassicModel(7, 4, (5, 6), make_rng(3)))
    save_classic(model, tmp_path / "m.json")
    back = load_classic(tmp_path / "m.json")
    assert back.frozen and back.checksum == model.checksum
    for a, b in zip(model.params(), back.params()):
        assert a.name == b.name and a.value.tobytes() == b.value.tobytes()


def test_tampered_classic_checkpoint(tmp_path):
    save_classic(freeze(ClassicModel(7, 4, (5, 6), make_rng(3))), tmp_path / "m.json")
    raw = json.loads((tmp_path / "m.json").read_text())
    raw["layers"][0]["values"][0] += 1e-9
    (tmp_path / "m.json").write_text(json.dumps(raw))
    with pytest.raises(FreezeViolation):
        load_classic(tmp_path / "m.json")


def test_bgan_checkpoint_round_trip(tmp_path):
    hyper = BganHyper(width=6)
    state = init_bgan(5, 4, hyper, seed=2)
    save_bgan(state, tmp_path / "g.json", 5, 4, extra={"constructions": 0})
    G, D, raw = load_bgan(tmp_path / "g.json")
    for a, b in zip(state.G.params() + state.D.params(), G.params() + D.params()):
        assert a.value.tobytes() == b.value.tobytes()
    assert raw["counters"] == {"iterations": 0, "critic_updates": 0, "generator_updates": 0}
    assert raw["constructions"] == 0


@pytest.mark.parametrize(
    "mutate, match",
    [
        (lambda r: r.update(format_version=99), "format_version"),
        (lambda r: r.update(model_kind="bgan"), "expected"),
        (lambda r: r["layers"].pop(), "names"),
        (lambda r: r["layers"][0].update(shape=[1, 1]), "shape"),
    ],
)
def test_malformed_checkpoints(tmp_path, mutate, match):
    save_classic(freeze(ClassicModel(7, 4, (5, 6), make_rng(3))), tmp_path / "m.json")
    raw = json.loads((tmp_path / "m.json").read_text())
    mutate(raw)
    (tmp_path / "m.json").write_text(json.dumps(raw))
    with pytest.raises(CheckpointError, match=match):
        load_classic(tmp_path / "m.json")


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_classic(tmp_path / "absent.json")
    (tmp_path / "junk.json").write_text("not json")
    with pytest.raises(CheckpointError):
        load_bgan(tmp_path / "junk.json")
