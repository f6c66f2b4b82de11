"""Numerical laboratory for quadratic compensated-compactness quantities.

Periodic-grid spectral tools, H1/BMO norm estimators, commutator operators,
minimum-norm solvers, Blaschke-product factorization and a finite-dimensional
surrogate model.
"""

__version__ = "0.1.0"

from .spectral_core import (
    GridSpec,
    Field,
    MultiplierSymbol,
    apply_multiplier,
    cauchy_transform,
    dealiased_product,
)

__all__ = [
    "__version__",
    "GridSpec",
    "Field",
    "MultiplierSymbol",
    "apply_multiplier",
    "cauchy_transform",
    "dealiased_product",
]
