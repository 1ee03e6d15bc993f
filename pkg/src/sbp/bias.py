"""Global prior bias and per-sample correction biases.

A correction bias ``b_tru`` for logits ``z`` and label ``r`` starts from
``phi(ctx) + b_glo`` and is pushed, one offending class at a time, until
``argmax(z + b_tru) == r``. Each offending class is lowered to sit exactly
``eps_c`` below the ground truth. A ground truth that already leads by less
than ``0.9 * eps_c`` is treated as not yet winning.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ContractViolation


@dataclass(frozen=True)
class GlobalBias:
    b_glo: np.ndarray
    a: float = 1.0
    eps_glo: float = 0.001


def global_bias(w, a: float = 1.0, eps_glo: float = 0.001) -> GlobalBias:
    """``-log(w**a / sum(w**a) + eps_glo)``; rarer classes get larger entries."""
    w = np.asarray(w, dtype=np.float64)
    if a < 0:
        raise ContractViolation(f"exponent a must be >= 0, got {a}")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ContractViolation("class weights must be positive and finite")
    wa = w**a
    arg = wa / wa.sum() + eps_glo
    if np.any(arg <= 0):
        raise ContractViolation("non-positive argument to log in global bias")
    return GlobalBias(-np.log(arg), a, eps_glo)


def zero_bias(m: int) -> GlobalBias:
    """Stand-in used when the global prior is switched off."""
    return GlobalBias(np.zeros(m), 0.0, 0.0)


@dataclass
class CorrectionBias:
    b_tru: np.ndarray
    r_tru: int
    margin: float
    passes: int = 0


def correct_to_label(z: np.ndarray, b0: np.ndarray, r_tru: int, eps_c: float) -> CorrectionBias:
    """Run the closure loop from an initial bias ``b0``."""
    m = len(z)
    if not 0 <= r_tru < m:
        raise ContractViolation(f"label {r_tru} outside [0, {m})")
    if eps_c <= 0:
        raise ContractViolation(f"eps_c must be positive, got {eps_c}")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(b0))):
        raise ContractViolation("logits and initial bias must be finite")
    b = np.array(b0, dtype=np.float64)
    zh = z + b
    passes = 0
    while True:
        rivals = zh.copy()
        rivals[r_tru] = -np.inf
        r_pre = int(np.argmax(rivals))
        # a near-tie (lead under 0.9 * eps_c) is treated like a loss
        if zh[r_tru] - zh[r_pre] >= 0.9 * eps_c:
            break
        if passes >= m:
            raise RuntimeError("correction loop failed to terminate")  # unreachable
        d = zh[r_tru] - zh[r_pre]
        b[r_pre] += d - eps_c
        zh = z + b
        passes += 1
    return CorrectionBias(b, r_tru, float(zh[r_tru] - zh[r_pre]), passes)


def construct_bias(z, ctx, phi, gb: GlobalBias, r_tru: int, eps_c: float = 1e-4) -> CorrectionBias:
    z = np.asarray(z, dtype=np.float64)
    b0 = phi.forward(ctx) + gb.b_glo
    return correct_to_label(z, b0, int(r_tru), eps_c)


def build_batch_set(ctx: np.ndarray, labels: np.ndarray, z: np.ndarray, phi, gb: GlobalBias, eps_c: float = 1e-4) -> list[CorrectionBias]:
    """One correction bias per sample, in batch order.

    ``z`` are the frozen model's logits for ``ctx`` (computed by the caller so
    the frozen model is only touched through its forward pass).
    """
    if len(labels) == 0:
        return []
    b0 = phi.forward(np.atleast_2d(ctx)) + gb.b_glo
    return [correct_to_label(zi, bi, int(r), eps_c) for zi, bi, r in zip(z, b0, labels)]


def build_batch_set_for_model(samples_ctx, labels, model, phi, gb, eps_c=1e-4) -> list[CorrectionBias]:
    if not model.frozen:
        raise ContractViolation("bias set must be built against a frozen model")
    if len(labels) == 0:
        return []
    return build_batch_set(samples_ctx, labels, model.forward(np.atleast_2d(samples_ctx)), phi, gb, eps_c)
