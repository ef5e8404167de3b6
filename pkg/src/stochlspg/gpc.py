"""Orthonormal polynomial chaos bases and Gauss rules built from recurrences.

Only one-dimensional parameter spaces are shipped.  Polynomials are generated
from the three-term recurrence of the monic family orthogonal with respect to
the parameter density; Gauss rules come from the eigen-decomposition of the
associated Jacobi matrix (Golub-Welsch), so every rule absorbs the density and
its weights sum to one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import gammaln

HERMITE = "hermite"
LAGUERRE = "laguerre"


class QuadratureError(ValueError):
    """Raised when a rule cannot deliver the requested accuracy."""


class IntegrandError(ValueError):
    """Raised when an integrand is not finite at a quadrature node."""


def default_quadrature_order(p: int) -> int:
    return max(30, 2 * p + 12)


@dataclass(frozen=True)
class PolynomialFamily:
    """Monic orthogonal family given by its three-term recurrence.

    ``pi_{k+1}(x) = (x - a_k) pi_k(x) - b_k pi_{k-1}(x)`` with ``b_0`` set to
    the total mass of the density (one for probability densities).
    """

    kind: str
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in (HERMITE, LAGUERRE):
            raise ValueError(f"unsupported polynomial family {self.kind!r}")
        if self.kind == LAGUERRE and self.alpha <= -1.0:
            raise ValueError("generalized Laguerre requires alpha > -1")

    def recurrence(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(a_k, b_k)`` for ``k = 0 .. n-1``."""
        k = np.arange(n, dtype=float)
        if self.kind == HERMITE:
            a = np.zeros(n)
            b = k.copy()
        else:
            a = 2.0 * k + self.alpha + 1.0
            b = k * (k + self.alpha)
        if n:
            b[0] = 1.0
        return a, b


@dataclass(frozen=True, eq=False)
class ParameterSpace:
    family: PolynomialFamily
    support: tuple[float, float]
    n_xi: int = 1

    def density(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.family.kind == HERMITE:
            return np.exp(-0.5 * xi**2) / math.sqrt(2.0 * math.pi)
        alpha = self.family.alpha
        out = np.zeros_like(xi)
        pos = xi > 0
        out[pos] = np.exp(alpha * np.log(xi[pos]) - xi[pos] - gammaln(alpha + 1.0))
        return out

    def moment(self, m: int) -> float:
        """Closed-form ``E[xi^m]`` under the density."""
        if self.family.kind == HERMITE:
            if m % 2:
                return 0.0
            return float(np.prod(np.arange(m - 1, 0, -2, dtype=float)))
        # rising factorial (alpha+1)_m
        return float(np.prod(self.family.alpha + 1.0 + np.arange(m, dtype=float)))

    def contains(self, xi) -> bool:
        lo, hi = self.support
        xi = np.asarray(xi)
        return bool(np.all((xi >= lo) & (xi <= hi)))


def hermite_space() -> ParameterSpace:
    """Standard normal parameter with probabilists' Hermite polynomials."""
    return ParameterSpace(PolynomialFamily(HERMITE), (-math.inf, math.inf))


def laguerre_space(alpha: float) -> ParameterSpace:
    """Gamma(alpha + 1) parameter, density ``xi^alpha exp(-xi) / Gamma(alpha+1)``."""
    return ParameterSpace(PolynomialFamily(LAGUERRE, float(alpha)), (0.0, math.inf))


@dataclass(frozen=True, eq=False)
class Basis:
    space: ParameterSpace
    p: int
    multi_indices: tuple = field(default=())

    @property
    def n_psi(self) -> int:
        return len(self.multi_indices)

    def evaluate(self, xi) -> np.ndarray:
        """Evaluate all basis polynomials; output shape ``xi.shape + (n_psi,)``."""
        xi = np.asarray(xi, dtype=float)
        a, b = self.space.family.recurrence(self.p + 1)
        out = np.empty(xi.shape + (self.p + 1,))
        out[..., 0] = 1.0
        if self.p >= 1:
            out[..., 1] = (xi - a[0]) / math.sqrt(b[1])
        for k in range(1, self.p):
            out[..., k + 1] = ((xi - a[k]) * out[..., k]
                               - math.sqrt(b[k]) * out[..., k - 1]) / math.sqrt(b[k + 1])
        return out


def build_basis(space: ParameterSpace, p: int) -> Basis:
    """Total-degree orthonormal basis of maximal degree ``p``."""
    if p < 0:
        raise ValueError("polynomial degree must be non-negative")
    if space.n_xi != 1:
        raise NotImplementedError("only one-dimensional parameter spaces are supported")
    _, b = space.family.recurrence(p + 1)
    if np.any(b[1:] <= 0):
        raise ValueError("recurrence coefficients b_k must be positive")
    return Basis(space, p, tuple((k,) for k in range(p + 1)))


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    space: Optional[ParameterSpace] = None

    @property
    def n_q(self) -> int:
        return len(self.nodes)

    @property
    def exactness_degree(self) -> int:
        return 2 * self.n_q - 1


def gauss_rule(space: ParameterSpace, n_q: int) -> QuadratureRule:
    """Gauss rule with ``n_q`` nodes for the density of ``space``."""
    if n_q < 1:
        raise ValueError("n_q must be at least 1")
    a, b = space.family.recurrence(n_q)
    try:
        nodes, vecs = eigh_tridiagonal(a, np.sqrt(b[1:]))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise QuadratureError(f"Jacobi eigen-solve failed: {exc}") from exc
    weights = b[0] * vecs[0, :] ** 2
    order = np.argsort(nodes)
    return QuadratureRule(nodes[order], weights[order], space)


def expectation(integrand: Callable, rule: QuadratureRule):
    """``sum_k w_k g(xi_k)`` for scalar- or array-valued ``g``."""
    values = [np.asarray(integrand(x), dtype=float) for x in rule.nodes]
    for k, v in enumerate(values):
        if not np.all(np.isfinite(v)):
            raise IntegrandError(
                f"integrand is not finite at node {k} (xi = {rule.nodes[k]!r})")
    stacked = np.stack(values)
    return np.tensordot(rule.weights, stacked, axes=1)


@dataclass(frozen=True, eq=False)
class MomentTensors:
    """Expectations of products of two, three and four basis polynomials."""

    G2: np.ndarray
    G3: Optional[np.ndarray] = None
    G4: Optional[np.ndarray] = None

    @property
    def max_order(self) -> int:
        return 4 if self.G4 is not None else 3 if self.G3 is not None else 2


def _symmetric_moment(psi: np.ndarray, w: np.ndarray, order: int) -> np.ndarray:
    n = psi.shape[1]
    letters = "abcd"[:order]
    spec = ",".join(["k"] + [f"k{c}" for c in letters]) + "->" + letters
    full = np.einsum(spec, w, *([psi] * order), optimize=True)
    # copy the canonical (sorted-index) entry everywhere so permutations agree bitwise
    idx = np.sort(np.indices((n,) * order).reshape(order, -1), axis=0)
    return full[tuple(idx)].reshape((n,) * order)


def moment_tensors(basis: Basis, max_order: int, rule: QuadratureRule) -> MomentTensors:
    if max_order not in (2, 3, 4):
        raise ValueError("max_order must be 2, 3 or 4")
    needed = max_order * basis.p
    if rule.exactness_degree < needed:
        raise QuadratureError(
            f"rule with {rule.n_q} nodes is exact to degree {rule.exactness_degree}, "
            f"order-{max_order} moments of degree-{basis.p} polynomials need {needed}")
    psi = basis.evaluate(rule.nodes)
    w = rule.weights
    G2 = _symmetric_moment(psi, w, 2)
    G3 = _symmetric_moment(psi, w, 3) if max_order >= 3 else None
    G4 = _symmetric_moment(psi, w, 4) if max_order >= 4 else None
    return MomentTensors(G2, G3, G4)
