"""Hierarchical open-quantum-dynamics solvers for quadratic system-bath
coupling: extended dissipaton hierarchy, Brownian solvation-mode hierarchy
with phase-space reconstruction, and imaginary-time / work-counting
hierarchies for hybridization thermodynamics.
"""

from ._backend import backend_name, set_num_threads
from .bath import (
    BathDecomposition,
    BrownianDrude,
    Drude,
    FPParams,
    correlation_quadrature,
    decompose,
    decomposition_residual,
    eval_spectral_density,
    ht_brownian_params,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "backend_name",
    "set_num_threads",
    "Drude",
    "BrownianDrude",
    "BathDecomposition",
    "FPParams",
    "eval_spectral_density",
    "correlation_quadrature",
    "decompose",
    "decomposition_residual",
    "ht_brownian_params",
]
