"""Parameterized linear systems ``A(xi) u(xi) = f(xi)`` and spectral solutions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .gpc import Basis, QuadratureRule, build_basis


def dense(mat) -> np.ndarray:
    if sp.issparse(mat):
        return mat.toarray()
    return np.atleast_2d(np.asarray(mat, dtype=float))


@dataclass(frozen=True, eq=False)
class ParamSystem:
    """Pointwise evaluator of a parameterized linear system.

    ``eval_A`` may return a dense array or a scipy sparse matrix.  Evaluators
    must be pure; every expectation is taken by the projection layer.
    """

    n_x: int
    eval_A: Callable
    eval_f: Callable
    spd: bool = False
    name: str = "system"

    def A(self, xi) -> np.ndarray:
        return dense(self.eval_A(float(xi)))

    def f(self, xi) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.eval_f(float(xi)), dtype=float))

    def sample(self, nodes) -> tuple[np.ndarray, np.ndarray]:
        """Stack ``A`` and ``f`` at the given nodes: shapes (n_q, n_x, n_x), (n_q, n_x)."""
        As = np.stack([self.A(x) for x in nodes])
        fs = np.stack([self.f(x) for x in nodes])
        return As, fs


@dataclass(eq=False)
class SpectralSolution:
    """Block coefficient vector ``[u_1; ...; u_npsi]`` of a gPC expansion."""

    basis: Basis
    coeffs: np.ndarray
    method: str = ""
    objective: Optional[float] = None
    timings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float).ravel()
        if self.coeffs.size % self.basis.n_psi:
            raise ValueError("coefficient length is not a multiple of n_psi")

    @property
    def n_x(self) -> int:
        return self.coeffs.size // self.basis.n_psi

    @property
    def blocks(self) -> np.ndarray:
        """Coefficients reshaped to ``(n_psi, n_x)``."""
        return self.coeffs.reshape(self.basis.n_psi, self.n_x)


def evaluate_solution(sol: SpectralSolution, xi) -> np.ndarray:
    """``sum_i u_i psi_i(xi)``; a 1-D array of nodes gives shape ``(len(xi), n_x)``."""
    psi = sol.basis.evaluate(xi)
    return psi @ sol.blocks


def evaluate_residual(sys: ParamSystem, sol: SpectralSolution, xi) -> np.ndarray:
    return sys.f(xi) - sys.A(xi) @ evaluate_solution(sol, float(xi))


@dataclass(frozen=True, eq=False)
class OperatorExpansion:
    """Truncated gPC coefficients ``A_l = E[A psi_l]`` and ``f_l = E[f psi_l]``."""

    A_l: np.ndarray
    f_l: np.ndarray
    basis: Basis
    max_nodal_error: float
    rms_error: float
    tolerance: float

    @property
    def n_a(self) -> int:
        return self.A_l.shape[0]

    @property
    def n_b(self) -> int:
        return self.f_l.shape[0]

    @property
    def truncated(self) -> bool:
        return self.rms_error > self.tolerance


def expand_operator(sys: ParamSystem, basis: Basis, rule: QuadratureRule,
                    n_a: Optional[int] = None, n_b: Optional[int] = None,
                    tolerance: float = 1e-10) -> OperatorExpansion:
    """Project ``A`` and ``f`` onto the first ``n_a`` / ``n_b`` basis polynomials.

    ``basis`` only supplies the family; the expansion length defaults to
    ``2p + 1`` terms.  Relative reconstruction errors at the rule nodes are
    recorded; a truncation above ``tolerance`` (in the density-weighted norm)
    is flagged through ``truncated`` rather than raised.
    """
    n_a = 2 * basis.p + 1 if n_a is None else n_a
    n_b = 2 * basis.p + 1 if n_b is None else n_b
    long_basis = build_basis(basis.space, max(n_a, n_b) - 1)
    psi = long_basis.evaluate(rule.nodes)
    As, fs = sys.sample(rule.nodes)
    w = rule.weights
    A_l = np.einsum("k,kl,kab->lab", w, psi[:, :n_a], As)
    f_l = np.einsum("k,kl,ka->la", w, psi[:, :n_b], fs)

    A_rec = np.einsum("kl,lab->kab", psi[:, :n_a], A_l)
    scale = max(np.sqrt(np.einsum("k,kab,kab->", w, As, As)), np.finfo(float).tiny)
    diff = np.linalg.norm((As - A_rec).reshape(len(w), -1), axis=1)
    nodal = diff / np.maximum(np.linalg.norm(As.reshape(len(w), -1), axis=1),
                              np.finfo(float).tiny)
    rms = math.sqrt(float(w @ diff**2)) / scale
    f_scale = math.sqrt(float(w @ np.sum(fs**2, axis=1)))
    if f_scale > 0:
        f_diff = fs - psi[:, :n_b] @ f_l
        rms = max(rms, math.sqrt(float(w @ np.sum(f_diff**2, axis=1))) / f_scale)
    return OperatorExpansion(A_l, f_l, long_basis, float(nodal.max()), rms, tolerance)


def scalar_toy(a_fn: Callable, f_fn: Callable, name: str = "scalar_toy",
               spd: Optional[bool] = None) -> ParamSystem:
    """One-unknown system ``a(xi) u(xi) = f(xi)``.

    The SPD flag defaults to True, which is right for a positive ``a``.
    """
    return ParamSystem(
        n_x=1,
        eval_A=lambda xi: np.array([[float(a_fn(xi))]]),
        eval_f=lambda xi: np.array([float(f_fn(xi))]),
        spd=True if spd is None else spd,
        name=name,
    )
