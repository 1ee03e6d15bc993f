"""Logit correctors and the ranking metrics R@K, mR@K, A@K and F-Acc."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import ContractViolation, log_softmax

KINDS = ("identity", "posterior_divide", "resistance_subtract", "sbp")


@dataclass
class Corrector:
    """``payload`` holds class frequencies (posterior_divide), the resistance
    vector (resistance_subtract) or a ``(generator, global_bias)`` pair (sbp)."""

    kind: str
    payload: object = None
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractViolation(f"corrector kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "posterior_divide":
            c = np.asarray(self.payload, dtype=np.float64)
            if np.any(c <= 0):
                raise ContractViolation("posterior_divide needs strictly positive class frequencies")
            self.payload = c
        elif self.kind == "resistance_subtract":
            self.payload = np.asarray(self.payload, dtype=np.float64)
        if self.name is None:
            self.name = self.kind


def correct(c: Corrector, z: np.ndarray, ctx: np.ndarray | None = None) -> np.ndarray:
    """Corrected logits for one vector or a (batch, M) matrix."""
    z = np.asarray(z, dtype=np.float64)
    if c.kind == "identity":
        return z.copy()
    if c.kind == "posterior_divide":
        if c.payload.shape != z.shape[-1:]:
            raise ContractViolation("frequency vector length differs from M")
        return log_softmax(log_softmax(z) - np.log(c.payload))
    if c.kind == "resistance_subtract":
        if c.payload.shape != z.shape[-1:]:
            raise ContractViolation("resistance vector length differs from M")
        return z - c.payload
    G, gb = c.payload
    b = G.forward(np.atleast_2d(ctx), gb.b_glo, np.atleast_2d(z))
    return z + (b[0] if z.ndim == 1 else b)


# ---------------------------------------------------------------- metrics


def _ranks_within_groups(conf: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Rank of each sample inside its group: confidence descending, index ascending."""
    n = len(conf)
    idx = np.arange(n)
    order = np.lexsort((idx, -conf, groups))
    sorted_groups = groups[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_groups)) + 1]
    group_start = np.repeat(starts, np.diff(np.r_[starts, n]))
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n) - group_start
    return ranks


def recalled_at_k(logits: np.ndarray, labels: np.ndarray, groups: np.ndarray, k: int) -> np.ndarray:
    """Boolean per sample: ranked within the group's top-k and predicted correctly."""
    if k < 1:
        raise ContractViolation(f"K must be >= 1, got {k}")
    # max softmax probability is 1 / sum(exp(z - max z)); summing the sorted
    # terms makes it exactly invariant to permuting a row's logits
    conf = 1.0 / np.sort(np.exp(logits - logits.max(axis=1, keepdims=True)), axis=1).sum(axis=1)
    hit = logits.argmax(axis=1) == labels
    return hit & (_ranks_within_groups(conf, groups) < k)


def exact_mean(values) -> float:
    """Mean of float values computed in exact rational arithmetic and rounded
    once, so the result does not depend on summation order."""
    values = list(values)
    return float(sum((Fraction(float(v)) for v in values), Fraction(0)) / len(values))


def per_class_rate(flags: np.ndarray, labels: np.ndarray, m: int) -> np.ndarray:
    """Pooled per-class mean of ``flags``; NaN for classes absent from ``labels``."""
    counts = np.bincount(labels, minlength=m).astype(np.float64)
    hits = np.bincount(labels, weights=flags.astype(np.float64), minlength=m)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, hits / counts, np.nan)


def recall_at_k(logits, labels, groups, k: int, m: int | None = None) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    m = logits.shape[1] if m is None else m
    rec = recalled_at_k(logits, labels, groups, k)
    _, inverse, sizes = np.unique(groups, return_inverse=True, return_counts=True)
    per_group = np.bincount(inverse, weights=rec) / sizes
    return exact_mean(per_group), per_class_rate(rec, labels, m)


def mean_recall_at_k(per_class_recall) -> float:
    pcr = np.asarray(per_class_recall, dtype=np.float64)
    present = ~np.isnan(pcr)
    if not present.all():
        warnings.warn(f"{int((~present).sum())} classes absent from the test set; excluded from mR@K", stacklevel=2)
    if not present.any():
        raise ContractViolation("no class present in the test set")
    return exact_mean(pcr[present])


def average_at_k(r: float, mr: float) -> float:
    return (r + mr) / 2


def top_t_hits(logits: np.ndarray, labels: np.ndarray, top_t: int) -> np.ndarray:
    if top_t < 1:
        raise ContractViolation(f"top_t must be >= 1, got {top_t}")
    order = np.argsort(-logits, axis=1, kind="stable")[:, :top_t]
    return (order == labels[:, None]).any(axis=1)


def f_acc(logits, labels, top_t: int, m: int | None = None) -> float:
    """Macro top-t accuracy: per-class share of samples with the label in the top t."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    m = logits.shape[1] if m is None else m
    rates = per_class_rate(top_t_hits(logits, labels, top_t), labels, m)
    return exact_mean(rates[~np.isnan(rates)])


@dataclass
class MetricsReport:
    corrector: str
    k_values: list[int]
    r_at_k: dict[int, float] = field(default_factory=dict)
    mr_at_k: dict[int, float] = field(default_factory=dict)
    a_at_k: dict[int, float] = field(default_factory=dict)
    per_class_recall: dict[int, np.ndarray] = field(default_factory=dict)
    f_acc: dict[int, float] = field(default_factory=dict)


def compute_metrics(name: str, logits, labels, groups, k_values, top_t_values) -> MetricsReport:
    logits = np.asarray(logits, dtype=np.float64)
    m = logits.shape[1]
    rep = MetricsReport(name, list(k_values))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in k_values:
            r, pcr = recall_at_k(logits, labels, groups, k, m)
            mr = mean_recall_at_k(pcr)
            rep.r_at_k[k], rep.mr_at_k[k], rep.per_class_recall[k] = r, mr, pcr
            rep.a_at_k[k] = average_at_k(r, mr)
    for t in top_t_values:
        rep.f_acc[t] = f_acc(logits, labels, t, m)
    return rep


def evaluate(corrector: Corrector, model, test, k_values=(1, 5), top_t_values=(1, 5)) -> MetricsReport:
    """Apply ``corrector`` to the frozen model's test logits and score them."""
    if not model.frozen:
        raise ContractViolation("evaluation requires a frozen classic model")
    model.verify_frozen()
    z = model.forward(test.ctx)
    logits = correct(corrector, z, test.ctx)
    rep = compute_metrics(corrector.name, logits, test.label, test.group_id, k_values, top_t_values)
    model.verify_frozen()
    return rep
