"""Experiment configuration: one JSON file, every field defaulted, unknown keys rejected."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .bgan import BganHyper
from .classic import PHI_VARIANTS
from .core import ContractViolation
from .data import SCOPES, DatasetSpec
from .metrics import KINDS

MODES = ("gradual", "integrated")


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class DataConfig:
    m_classes: int = 20
    ctx_dim: int = 32
    zipf_s: float = 1.5
    n_train: int = 20000
    n_test: int = 5000
    group_size: int = 8
    noise_sigma: float = 0.12


@dataclass
class ClassicConfig:
    lr: float = 0.001
    batch: int = 16
    iters: int = 18000


@dataclass
class BganConfig:
    lr_g: float = 0.0001
    lr_d: float = 0.0005
    critic_ratio: int = 5
    alpha: float = 0.075
    clip_c: float | None = 0.01
    iters: int = 1000
    lr_schedule: str = "linear_decay"
    batch: int = 16
    variant: str = "bgan"
    g_layers: int = 5
    d_layers: int = 3
    width: int = 16
    ksize: int = 3
    rms_decay: float = 0.99


@dataclass
class BiasConfig:
    a: float = 1.0
    eps_glo: float = 0.001
    eps_c: float = 0.0001
    phi_variant: str = "trans1"
    phi_scale: float = 0.1
    use_global_bias: bool = True
    scope: str = "union"


@dataclass
class EvalConfig:
    k_values: list = field(default_factory=lambda: [1, 5])
    top_t_values: list = field(default_factory=lambda: [1, 5])
    correctors: list = field(default_factory=lambda: list(KINDS))


@dataclass
class ExperimentConfig:
    dataset: DataConfig = field(default_factory=DataConfig)
    classic: ClassicConfig = field(default_factory=ClassicConfig)
    bgan: BganConfig = field(default_factory=BganConfig)
    bias: BiasConfig = field(default_factory=BiasConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    mode: str = "gradual"
    seed: int = 1
    seeds: list = field(default_factory=lambda: [1, 2, 3])
    output_dir: str = "runs/default"

    # ------------------------------------------------------------ derived views

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(**asdict(self.dataset), scope=self.bias.scope, seed=self.seed)

    def bgan_hyper(self) -> BganHyper:
        return BganHyper(**asdict(self.bgan), eps_c=self.bias.eps_c)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))

    def snapshot(self) -> dict:
        """Config as stored in checkpoints; ``output_dir`` is left out so
        that runs into different directories stay byte-identical."""
        d = asdict(self)
        d.pop("output_dir")
        return d

    def validate(self) -> "ExperimentConfig":
        try:
            self.dataset_spec().validate()
            self.bgan_hyper().validate()
        except ContractViolation as e:
            raise ConfigError(str(e)) from None
        c = self.classic
        if c.lr <= 0 or c.batch < 1 or c.iters < 0:
            raise ConfigError("classic: lr must be > 0, batch >= 1, iters >= 0")
        b = self.bias
        if b.a < 0 or b.eps_glo < 0 or b.eps_c <= 0 or b.phi_scale < 0:
            raise ConfigError("bias: a >= 0, eps_glo >= 0, eps_c > 0 and phi_scale >= 0 required")
        if b.phi_variant not in PHI_VARIANTS:
            raise ConfigError(f"bias.phi_variant must be one of {PHI_VARIANTS}, got {b.phi_variant!r}")
        if b.scope not in SCOPES:
            raise ConfigError(f"bias.scope must be one of {SCOPES}, got {b.scope!r}")
        e = self.eval
        if not e.k_values or any(not isinstance(k, int) or k < 1 for k in e.k_values):
            raise ConfigError("eval.k_values must be a non-empty list of positive integers")
        if not e.top_t_values or any(not isinstance(t, int) or t < 1 for t in e.top_t_values):
            raise ConfigError("eval.top_t_values must be a non-empty list of positive integers")
        bad = [c for c in e.correctors if c not in KINDS]
        if bad or not e.correctors:
            raise ConfigError(f"eval.correctors must be drawn from {KINDS}, got {e.correctors}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.seeds or any(not isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        return self


_SECTIONS = {
    "dataset": DataConfig,
    "classic": ClassicConfig,
    "bgan": BganConfig,
    "bias": BiasConfig,
    "eval": EvalConfig,
}


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        default = getattr(cls(), k)
        if isinstance(default, bool) and not isinstance(v, bool):
            raise ConfigError(f"{where}.{k} must be true or false")
        if isinstance(default, float) and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        elif default is not None and not isinstance(v, type(default)) and not (v is None and k == "clip_c"):
            raise ConfigError(f"{where}.{k} must be of type {type(default).__name__}, got {v!r}")
        kwargs[k] = v
    return cls(**kwargs)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        if k in _SECTIONS:
            kwargs[k] = _build(_SECTIONS[k], v, k)
        else:
            kwargs[k] = v
    cfg = ExperimentConfig(**kwargs)
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        raise ConfigError(f"seed must be an integer, got {cfg.seed!r}")
    if not isinstance(cfg.output_dir, str):
        raise ConfigError("output_dir must be a string path")
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig().validate()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return config_from_dict(raw)


def config_to_json(cfg: ExperimentConfig) -> str:
    return json.dumps(asdict(cfg), indent=2, sort_keys=True)
