"""JSON checkpoints: named layers with shapes and flat float64 value lists."""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .bgan import BganHyper, BganState, Critic, Generator
from .classic import ClassicModel, freeze, param_checksum
from .core import FreezeViolation

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint or one inconsistent with the requested model."""


def _layers(params) -> list[dict]:
    return [{"name": p.name, "shape": list(p.shape), "values": p.value.reshape(-1).tolist()} for p in params]


def _restore(params, layers: list[dict]) -> None:
    by_name = {layer["name"]: layer for layer in layers}
    if set(by_name) != {p.name for p in params}:
        raise CheckpointError("checkpoint layer names do not match the model architecture")
    for p in params:
        layer = by_name[p.name]
        if tuple(layer["shape"]) != p.shape:
            raise CheckpointError(f"layer {p.name!r}: shape {layer['shape']} != {list(p.shape)}")
        p.value[...] = np.asarray(layer["values"], dtype=np.float64).reshape(p.shape)


def _write(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=1))


def _read(path, kind: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: invalid JSON ({e})") from None
    if raw.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {raw.get('format_version')!r}")
    if raw.get("model_kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, got {raw.get('model_kind')!r}")
    return raw


def save_classic(model: ClassicModel, path, config: dict | None = None) -> None:
    _write(path, {
        "format_version": FORMAT_VERSION,
        "model_kind": "classic",
        "arch": {"in_dim": model.in_dim, "m_classes": model.m_classes, "hidden": list(model.hidden)},
        "frozen": model.frozen,
        "param_checksum": param_checksum(model.params()),
        "layers": _layers(model.params()),
        "config": config or {},
    })


def load_classic(path) -> ClassicModel:
    raw = _read(path, "classic")
    arch = raw["arch"]
    model = ClassicModel(arch["in_dim"], arch["m_classes"], arch["hidden"])
    _restore(model.params(), raw["layers"])
    if param_checksum(model.params()) != raw["param_checksum"]:
        raise FreezeViolation(f"{path}: parameters do not match the stored checksum")
    if raw["frozen"]:
        freeze(model)
    return model


def save_bgan(state: BganState, path, in_dim: int, m: int, config: dict | None = None, extra: dict | None = None) -> None:
    params = state.G.params() + (state.D.params() if state.D is not None else [])
    _write(path, {
        "format_version": FORMAT_VERSION,
        "model_kind": "bgan",
        "arch": {"in_dim": in_dim, "m_classes": m, "hyper": asdict(state.hyper)},
        "frozen": False,
        "param_checksum": param_checksum(params),
        "counters": {
            "iterations": state.iteration,
            "critic_updates": state.critic_updates,
            "generator_updates": state.gen_updates,
        },
        "layers": _layers(params),
        "config": config or {},
        **(extra or {}),
    })


def load_bgan(path) -> tuple[Generator, Critic | None, dict]:
    raw = _read(path, "bgan")
    arch = raw["arch"]
    hyper = BganHyper(**arch["hyper"])
    G = Generator(arch["in_dim"], arch["m_classes"], hyper)
    D = Critic(arch["m_classes"], hyper) if hyper.adversarial else None
    params = G.params() + (D.params() if D is not None else [])
    _restore(params, raw["layers"])
    if param_checksum(params) != raw["param_checksum"]:
        raise CheckpointError(f"{path}: parameters do not match the stored checksum")
    return G, D, raw
