"""Seeded synthetic long-tailed relationship datasets.

Each sample stands in for one object pair: a context feature (prototype of its
class plus Gaussian noise), the id of the "image" it belongs to, and its
relation label. Class ids are ranked head to tail.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import ContractViolation, make_rng

SCOPES = ("union", "entire")


class DatasetParseError(ValueError):
    """A dataset file is malformed or violates a dataset invariant."""


@dataclass(frozen=True)
class DatasetSpec:
    m_classes: int = 20
    ctx_dim: int = 32
    zipf_s: float = 1.5
    n_train: int = 20000
    n_test: int = 5000
    group_size: int = 8
    noise_sigma: float = 0.12
    scope: str = "union"
    seed: int = 1

    def validate(self) -> None:
        for name in ("m_classes", "ctx_dim", "n_train", "n_test", "group_size"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v <= 0:
                raise ContractViolation(f"{name} must be a positive integer, got {v!r}")
        if self.m_classes < 2:
            raise ContractViolation(f"m_classes must be >= 2, got {self.m_classes}")
        if self.n_test % self.group_size:
            raise ContractViolation(f"n_test ({self.n_test}) must be divisible by group_size ({self.group_size})")
        if self.zipf_s < 0:
            raise ContractViolation(f"zipf_s must be >= 0, got {self.zipf_s}")
        if self.noise_sigma < 0:
            raise ContractViolation(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.scope not in SCOPES:
            raise ContractViolation(f"scope must be one of {SCOPES}, got {self.scope!r}")

    @property
    def feature_dim(self) -> int:
        """Length of a sample's ctx vector (doubled under the ``entire`` scope)."""
        return self.ctx_dim * (2 if self.scope == "entire" else 1)


@dataclass
class Split:
    """Column-major view of a list of samples."""

    ctx: np.ndarray  # (n, feature_dim)
    group_id: np.ndarray  # (n,) int
    label: np.ndarray  # (n,) int

    def __len__(self) -> int:
        return len(self.label)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Split)
            and np.array_equal(self.ctx, other.ctx)
            and np.array_equal(self.group_id, other.group_id)
            and np.array_equal(self.label, other.label)
        )

    def take(self, idx) -> "Split":
        return Split(self.ctx[idx], self.group_id[idx], self.label[idx])


@dataclass
class Dataset:
    spec: DatasetSpec
    class_weights: np.ndarray
    prototypes: np.ndarray
    train: Split
    test: Split

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dataset)
            and self.spec == other.spec
            and np.array_equal(self.class_weights, other.class_weights)
            and np.array_equal(self.prototypes, other.prototypes)
            and self.train == other.train
            and self.test == other.test
        )

    def train_frequencies(self) -> np.ndarray:
        counts = np.bincount(self.train.label, minlength=self.spec.m_classes)
        return counts / counts.sum()


def make_class_weights(m: int, s: float) -> np.ndarray:
    """Zipf weights ``1/(j+1)**s`` normalized to sum to one, head first."""
    if m < 2:
        raise ContractViolation(f"need at least 2 classes, got {m}")
    w = 1.0 / np.arange(1, m + 1, dtype=np.float64) ** s
    return w / w.sum()


def _draw_split(rng, n, weights, prototypes, spec: DatasetSpec) -> Split:
    labels = rng.choice(len(weights), size=n, p=weights)
    ctx = prototypes[labels] + spec.noise_sigma * rng.standard_normal((n, spec.ctx_dim))
    if spec.scope == "entire":
        # label-independent distractors drawn from their own stream
        distract = rng.standard_normal((n, spec.ctx_dim)) * np.sqrt(1.0 / spec.ctx_dim + spec.noise_sigma**2)
        ctx = np.concatenate([ctx, distract], axis=1)
    group_id = np.arange(n) // spec.group_size
    return Split(ctx, group_id, labels.astype(np.int64))


def generate(spec: DatasetSpec, class_weights: np.ndarray | None = None) -> Dataset:
    """Build a dataset from ``spec``; ``class_weights`` overrides the Zipf weights."""
    spec.validate()
    weights = make_class_weights(spec.m_classes, spec.zipf_s) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if weights.shape != (spec.m_classes,) or np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, atol=1e-12):
        raise ContractViolation("class_weights must be a non-negative length-M vector summing to 1")
    proto = make_rng(spec.seed, 0).standard_normal((spec.m_classes, spec.ctx_dim))
    proto /= np.linalg.norm(proto, axis=1, keepdims=True)
    train = _draw_split(make_rng(spec.seed, 1), spec.n_train, weights, proto, spec)
    test = _draw_split(make_rng(spec.seed, 2), spec.n_test, weights, proto, spec)
    return Dataset(spec, weights, proto, train, test)


# ---------------------------------------------------------------- persistence


def _split_to_json(s: Split) -> list[dict]:
    return [
        {"ctx": c.tolist(), "group_id": int(g), "label": int(y)}
        for c, g, y in zip(s.ctx, s.group_id, s.label)
    ]


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "spec": asdict(ds.spec),
        "class_weights": ds.class_weights.tolist(),
        "prototypes": ds.prototypes.tolist(),
        "train": _split_to_json(ds.train),
        "test": _split_to_json(ds.test),
    }


def save_dataset(ds: Dataset, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(dataset_to_dict(ds), separators=(",", ":")))


def _field(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise DatasetParseError(f"missing field {where}{key!r}")
    return obj[key]


def _parse_split(rows, spec: DatasetSpec, name: str) -> Split:
    if not isinstance(rows, list):
        raise DatasetParseError(f"field {name!r} must be a list of samples")
    dim = spec.feature_dim
    ctx = np.empty((len(rows), dim))
    gid = np.empty(len(rows), dtype=np.int64)
    lab = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        where = f"{name}[{i}]."
        c = np.asarray(_field(row, "ctx", where), dtype=np.float64)
        if c.shape != (dim,) or not np.all(np.isfinite(c)):
            raise DatasetParseError(f"field {where}ctx must be {dim} finite numbers")
        y = _field(row, "label", where)
        if not isinstance(y, int) or not 0 <= y < spec.m_classes:
            raise DatasetParseError(f"field {where}label={y!r} outside [0, {spec.m_classes})")
        g = _field(row, "group_id", where)
        if not isinstance(g, int) or g < 0:
            raise DatasetParseError(f"field {where}group_id={g!r} must be a non-negative integer")
        ctx[i], gid[i], lab[i] = c, g, y
    return Split(ctx, gid, lab)


def dataset_from_dict(raw: dict) -> Dataset:
    spec_raw = _field(raw, "spec", "")
    known = {f.name for f in fields(DatasetSpec)}
    if not isinstance(spec_raw, dict) or set(spec_raw) != known:
        raise DatasetParseError(f"field 'spec' must have exactly the keys {sorted(known)}")
    spec = DatasetSpec(**spec_raw)
    try:
        spec.validate()
    except ContractViolation as e:
        raise DatasetParseError(f"field 'spec': {e}") from None
    w = np.asarray(_field(raw, "class_weights", ""), dtype=np.float64)
    if w.shape != (spec.m_classes,) or not np.isclose(w.sum(), 1.0, atol=1e-12):
        raise DatasetParseError("field 'class_weights' must be M weights summing to 1")
    proto = np.asarray(_field(raw, "prototypes", ""), dtype=np.float64)
    if proto.shape != (spec.m_classes, spec.ctx_dim):
        raise DatasetParseError("field 'prototypes' has the wrong shape")
    train = _parse_split(_field(raw, "train", ""), spec, "train")
    test = _parse_split(_field(raw, "test", ""), spec, "test")
    if len(test) % spec.group_size or np.any(np.bincount(test.group_id) % spec.group_size):
        raise DatasetParseError("field 'test' must consist of complete groups")
    return Dataset(spec, w, proto, train, test)


def load_dataset(path) -> Dataset:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DatasetParseError(f"dataset file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise DatasetParseError(f"{path}: not valid JSON ({e})") from None
    return dataset_from_dict(raw)
