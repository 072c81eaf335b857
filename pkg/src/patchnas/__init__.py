"""Differentiable architecture search with input-specific patchwise attention."""

__version__ = "0.1.0"

from .space import (  # noqa: F401
    Genotype,
    OperationKind,
    SearchSpace,
    default_catalog,
    enumerate_pairs,
    validate_genotype,
)
