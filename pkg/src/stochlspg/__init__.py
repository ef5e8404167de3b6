"""Spectral projection methods for linear systems with one random parameter.

Stochastic Galerkin, pseudo-spectral projection and weighted least-squares
Petrov-Galerkin (LSPG) solvers over orthonormal polynomial chaos bases, with
finite-element benchmark problems and error analysis.
"""

__version__ = "0.1.0"

from .gpc import build_basis, gauss_rule, hermite_space, laguerre_space  # noqa: E402
from .projection import (WeightingScheme, solve_pseudospectral,  # noqa: E402
                         solve_stochastic_galerkin, solve_weighted_lspg)
from .problems import build_problem  # noqa: E402

__all__ = [
    "build_basis", "gauss_rule", "hermite_space", "laguerre_space",
    "WeightingScheme", "solve_pseudospectral", "solve_stochastic_galerkin",
    "solve_weighted_lspg", "build_problem",
]
