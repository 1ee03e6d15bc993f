"""Sample-level bias prediction for long-tailed relation classification.

A frozen base classifier produces logits ``z``; a generator trained against a
Wasserstein critic predicts a per-sample bias ``b`` so that ``z + b`` is less
skewed toward head classes.
"""
from .core import ContractViolation, FreezeViolation, TrainingDivergence

__version__ = "0.1.0"

__all__ = ["ContractViolation", "FreezeViolation", "TrainingDivergence", "__version__"]
