"""Stochastic Galerkin, pseudo-spectral and weighted least-squares projections.

Every expectation is a quadrature sum over the nodes of a ``QuadratureRule``.
Weightings are applied node by node through factorizations (Cholesky for the
energy weighting, LU for the inverse-based ones); no explicit inverse is ever
formed.  Block vectors follow the ``[u_1; ...; u_npsi]`` layout, so
``kron(psi psi^T, B)`` is indexed ``(i * n_x + a, j * n_x + b)``.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.linalg.lapack import dpocon
from scipy.sparse.linalg import cg

from .fem import QoIOperator
from .gpc import (Basis, MomentTensors, QuadratureRule, build_basis, gauss_rule,
                  moment_tensors)
from .sysmodel import OperatorExpansion, ParamSystem, SpectralSolution

COND_LIMIT = 1e14
RANK_RTOL = 1e-12


class FactorizationError(np.linalg.LinAlgError):
    """A per-node factorization failed; carries the node index and parameter value."""

    def __init__(self, what: str, node: int, xi: float):
        super().__init__(f"{what} failed at quadrature node {node} (xi = {xi!r})")
        self.node = node
        self.xi = xi


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class WeightingScheme:
    """Choice of ``M(xi)`` in ``min ||M r||``.

    ``energy``: ``M = C^{-1}`` with ``A = C C^T``; ``identity``: ``M = I``;
    ``inverse``: ``M = A^{-1}``; ``goal``: ``M = F A^{-1}``.
    """

    kind: str
    qoi: Optional[QoIOperator] = None

    def __post_init__(self):
        if self.kind not in ("energy", "identity", "inverse", "goal"):
            raise ValueError(f"unknown weighting {self.kind!r}")
        if self.kind == "goal" and self.qoi is None:
            raise ValueError("goal-oriented weighting needs a QoI operator")

    @classmethod
    def energy(cls, sys: Optional[ParamSystem] = None) -> "WeightingScheme":
        if sys is not None and not sys.spd:
            raise ValueError(f"energy weighting requires an SPD system ({sys.name})")
        return cls("energy")

    @classmethod
    def identity(cls) -> "WeightingScheme":
        return cls("identity")

    @classmethod
    def inverse(cls) -> "WeightingScheme":
        return cls("inverse")

    @classmethod
    def goal(cls, qoi: QoIOperator) -> "WeightingScheme":
        return cls("goal", qoi)


@dataclass(eq=False)
class NormalEquations:
    T1: np.ndarray
    T2: np.ndarray
    T3: float
    basis: Basis
    weighting: str = ""
    semidefinite: bool = False
    assembly_seconds: float = 0.0
    warnings: list = field(default_factory=list)
    n_terms: int = 0

    @property
    def n_x(self) -> int:
        return self.T2.size // self.basis.n_psi


# ---------------------------------------------------------------------------
# per-node helpers
# ---------------------------------------------------------------------------

def factor_lu(A: np.ndarray, k: int = -1, xi: float = np.nan):
    """LU factors of ``A``; an exactly singular factor raises ``FactorizationError``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=True)
    if np.any(np.diag(lu) == 0):
        raise FactorizationError("LU factorization", k, xi)
    return lu, piv


def weighted_node(A: np.ndarray, f: np.ndarray, weighting: WeightingScheme,
                  k: int = -1, xi: float = np.nan):
    """``(M A, M f)`` at one node."""
    if weighting.kind == "identity":
        return A, f
    if weighting.kind == "energy":
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError("Cholesky factorization", k, xi) from exc
        return (sla.solve_triangular(L, A, lower=True),
                sla.solve_triangular(L, f, lower=True))
    lu = factor_lu(A, k, xi)
    AinvA = sla.lu_solve(lu, A)
    Ainvf = sla.lu_solve(lu, f)
    if weighting.kind == "inverse":
        return AinvA, Ainvf
    F = weighting.qoi.F(xi)
    return F @ AinvA, F @ Ainvf


def _kron_expect(w: np.ndarray, psi: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``sum_k w_k kron(psi_k psi_k^T, B_k)`` as a dense matrix."""
    n_q, n = psi.shape
    m, p = B.shape[1:]
    P = (w[:, None, None] * psi[:, :, None] * psi[:, None, :]).reshape(n_q, n * n)
    out = (P.T @ B.reshape(n_q, m * p)).reshape(n, n, m, p)
    return out.transpose(0, 2, 1, 3).reshape(n * m, n * p)


def _block_expect(w: np.ndarray, psi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``sum_k w_k psi_k (x) v_k`` as a block vector."""
    return ((w[:, None] * psi).T @ v).ravel()


# ---------------------------------------------------------------------------
# LSPG
# ---------------------------------------------------------------------------

def assemble_normal_equations(sys: ParamSystem, basis: Basis, rule: QuadratureRule,
                              weighting: WeightingScheme) -> NormalEquations:
    """Quadrature assembly of ``T1``, ``T2``, ``T3`` for ``min E||M r||^2``."""
    if weighting.kind == "energy" and not sys.spd:
        raise ValueError(f"energy weighting requires an SPD system ({sys.name})")
    t0 = time.perf_counter()
    psi = basis.evaluate(rule.nodes)
    As, fs = sys.sample(rule.nodes)
    Bs, cs, ts = [], [], []
    for k, xi in enumerate(rule.nodes):
        MA, Mf = weighted_node(As[k], fs[k], weighting, k, float(xi))
        B = MA.T @ MA
        Bs.append(0.5 * (B + B.T))
        cs.append(MA.T @ Mf)
        ts.append(float(Mf @ Mf))
    w = rule.weights
    T1 = _kron_expect(w, psi, np.stack(Bs))
    T1 = 0.5 * (T1 + T1.T)
    T2 = _block_expect(w, psi, np.stack(cs))
    T3 = float(w @ np.asarray(ts))
    rows = weighting.qoi.n_o if weighting.kind == "goal" else sys.n_x
    return NormalEquations(T1, T2, T3, basis, weighting.kind,
                           semidefinite=rows < sys.n_x,
                           assembly_seconds=time.perf_counter() - t0)


def objective_value(ne: NormalEquations, x) -> float:
    """``x^T T1 x - 2 T2^T x + T3``."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != ne.T2.size:
        raise ValueError(f"expected a vector of length {ne.T2.size}, got {x.size}")
    return float(x @ (ne.T1 @ x) - 2.0 * ne.T2 @ x + ne.T3)


def _smallest_pivot(T1: np.ndarray) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, _ = sla.lu_factor(T1, check_finite=False)
    return float(np.min(np.abs(np.diag(lu))))


def solve_lspg(ne: NormalEquations, solver: str = "cholesky") -> SpectralSolution:
    """Solve ``T1 u = T2``.

    Normal equations that are semidefinite by construction (goal-oriented
    weighting with fewer outputs than unknowns) get the minimum-norm
    minimizer; all others must be positive definite.
    """
    t0 = time.perf_counter()
    warns = list(ne.warnings)
    N = ne.T2.size
    if ne.semidefinite:
        lam, V = sla.eigh(ne.T1)
        keep = lam > RANK_RTOL * max(lam[-1], 0.0)
        if not np.any(keep):
            raise SingularSystemError("normal-equation matrix is numerically zero")
        u = V[:, keep] @ ((V[:, keep].T @ ne.T2) / lam[keep])
        warns.append(f"rank-deficient normal equations (rank {int(keep.sum())} of {N}); "
                     "minimum-norm solution")
    elif solver == "cg":
        u, info = cg(ne.T1, ne.T2, rtol=1e-12, atol=0.0, maxiter=10 * N)
        if info != 0:
            warns.append(f"conjugate gradients did not converge (info={info})")
    elif solver == "cholesky":
        try:
            c, low = sla.cho_factor(ne.T1, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(
                f"normal-equation matrix is not positive definite "
                f"(smallest pivot {_smallest_pivot(ne.T1):.3e})") from exc
        u = sla.cho_solve((c, low), ne.T2)
        rcond, _ = dpocon(c, np.linalg.norm(ne.T1, 1), uplo="L" if low else "U")
        if rcond * COND_LIMIT < 1.0:
            warns.append(f"ill-conditioned normal equations (cond ~ {1.0 / rcond:.2e})")
    else:
        raise ValueError(f"unknown solver {solver!r}")
    solve_s = time.perf_counter() - t0
    return SpectralSolution(ne.basis, u, method=f"LSPG_{ne.weighting}",
                            objective=float(ne.T3 - ne.T2 @ u),
                            timings={"assembly": ne.assembly_seconds, "solve": solve_s},
                            warnings=warns)


def solve_weighted_lspg(sys: ParamSystem, basis: Basis, rule: QuadratureRule,
                        weighting: WeightingScheme, solver: str = "cholesky"):
    return solve_lspg(assemble_normal_equations(sys, basis, rule, weighting), solver)


# ---------------------------------------------------------------------------
# Stochastic Galerkin and pseudo-spectral
# ---------------------------------------------------------------------------

def galerkin_system(sys: ParamSystem, basis: Basis, rule: QuadratureRule):
    """``E[psi psi^T (x) A]`` and ``E[psi (x) f]`` by quadrature."""
    psi = basis.evaluate(rule.nodes)
    As, fs = sys.sample(rule.nodes)
    return _kron_expect(rule.weights, psi, As), _block_expect(rule.weights, psi, fs)


def _solve_coupled(K: np.ndarray, rhs: np.ndarray, spd: bool) -> np.ndarray:
    if spd:
        try:
            return sla.cho_solve(sla.cho_factor(K), rhs)
        except np.linalg.LinAlgError:
            pass
    lu, piv = sla.lu_factor(K)
    if np.any(np.diag(lu) == 0):
        raise SingularSystemError("Galerkin matrix is singular")
    return sla.lu_solve((lu, piv), rhs)


def solve_stochastic_galerkin(sys: ParamSystem, basis: Basis,
                              rule: QuadratureRule) -> SpectralSolution:
    t0 = time.perf_counter()
    K, rhs = galerkin_system(sys, basis, rule)
    t1 = time.perf_counter()
    u = _solve_coupled(K, rhs, sys.spd)
    return SpectralSolution(basis, u, method="SG",
                            timings={"assembly": t1 - t0,
                                     "solve": time.perf_counter() - t1})


def solve_pseudospectral(sys: ParamSystem, basis: Basis,
                         rule: QuadratureRule) -> SpectralSolution:
    t0 = time.perf_counter()
    psi = basis.evaluate(rule.nodes)
    As, fs = sys.sample(rule.nodes)
    t1 = time.perf_counter()
    us = np.stack([sla.lu_solve(factor_lu(As[k], k, float(x)), fs[k])
                   for k, x in enumerate(rule.nodes)])
    u = _block_expect(rule.weights, psi, us)
    return SpectralSolution(basis, u, method="PS",
                            timings={"assembly": t1 - t0,
                                     "solve": time.perf_counter() - t1})


# ---------------------------------------------------------------------------
# orthogonality conditions
# ---------------------------------------------------------------------------

def galerkin_residual(sys: ParamSystem, sol: SpectralSolution,
                      rule: QuadratureRule) -> np.ndarray:
    """``E[psi (x) r(u)]`` evaluated node by node."""
    psi = sol.basis.evaluate(rule.nodes)
    As, fs = sys.sample(rule.nodes)
    u_nodes = psi @ sol.blocks
    r = fs - np.einsum("kab,kb->ka", As, u_nodes)
    return _block_expect(rule.weights, psi, r)


def petrov_galerkin_residual(sys: ParamSystem, sol: SpectralSolution,
                             rule: QuadratureRule, weighting: WeightingScheme):
    """``E[phi^T (M f - (psi^T (x) M A) u)]`` with ``phi_i = psi_i (x) M A``.

    The test functions are formed node by node and never stored.  Returns the
    residual block vector and the matching scale ``||E[psi (x) (MA)^T M f]||``.
    """
    psi = sol.basis.evaluate(rule.nodes)
    As, fs = sys.sample(rule.nodes)
    u_nodes = psi @ sol.blocks
    out = np.zeros_like(sol.coeffs)
    scale = np.zeros_like(sol.coeffs)
    for k, xi in enumerate(rule.nodes):
        MA, Mf = weighted_node(As[k], fs[k], weighting, k, float(xi))
        wr = MA.T @ (Mf - MA @ u_nodes[k])
        out += rule.weights[k] * np.kron(psi[k], wr)
        scale += rule.weights[k] * np.kron(psi[k], MA.T @ Mf)
    return out, float(np.linalg.norm(scale))


# ---------------------------------------------------------------------------
# analytic assembly from gPC operator expansions
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class AnalyticSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    basis: Basis
    n_terms: int
    warnings: list = field(default_factory=list)


def analytic_tensors(basis: Basis, exp: OperatorExpansion, order: int) -> MomentTensors:
    """Moment tensors on a basis long enough for both ``basis`` and ``exp``."""
    P = max(basis.p, exp.n_a - 1, exp.n_b - 1)
    long_basis = build_basis(basis.space, P)
    rule = gauss_rule(basis.space, (order * P) // 2 + 1)
    return moment_tensors(long_basis, order, rule)


def _check_tensors(tensors: MomentTensors, order: int, n: int, exp: OperatorExpansion):
    if tensors.max_order < order:
        raise ValueError(f"moment tensors of order {order} are required")
    size = tensors.G2.shape[0]
    if size < max(n, exp.n_a, exp.n_b):
        raise ValueError(f"moment tensors cover {size} polynomials, "
                         f"need {max(n, exp.n_a, exp.n_b)}")


def _truncation_warnings(exp: OperatorExpansion) -> list:
    if exp.truncated:
        return [f"gPC expansion truncated (relative rms error {exp.rms_error:.2e} "
                f"> {exp.tolerance:.0e}; n_a={exp.n_a}, n_b={exp.n_b})"]
    return []


def assemble_analytic_sg(exp: OperatorExpansion, tensors: MomentTensors,
                         basis: Basis) -> AnalyticSystem:
    """``sum_l kron(E[psi psi^T psi_l], A_l)`` and ``E[psi (x) f]`` from ``f_l``."""
    n = basis.n_psi
    _check_tensors(tensors, 3, n, exp)
    G3 = tensors.G3[:n, :n, :exp.n_a]
    n_x = exp.A_l.shape[1]
    K = np.einsum("ijl,lab->iajb", G3, exp.A_l).reshape(n * n_x, n * n_x)
    rhs = (tensors.G2[:n, :exp.n_b] @ exp.f_l).ravel()
    return AnalyticSystem(K, rhs, basis, exp.n_a, _truncation_warnings(exp))


def assemble_analytic_lspg_ata(exp: OperatorExpansion, tensors: MomentTensors,
                               basis: Basis) -> NormalEquations:
    """Normal equations of ``min E||r||^2`` from quadruple-product moments."""
    t0 = time.perf_counter()
    n = basis.n_psi
    _check_tensors(tensors, 4, n, exp)
    n_a, n_b = exp.n_a, exp.n_b
    A, f = exp.A_l, exp.f_l
    n_x = A.shape[1]
    AtA = np.einsum("kca,lcb->klab", A, A)  # n_a^2 products A_k^T A_l
    G4 = tensors.G4[:n, :n, :n_a, :n_a]
    T1 = np.einsum("ijkl,klab->iajb", G4, AtA, optimize=True).reshape(n * n_x, n * n_x)
    T1 = 0.5 * (T1 + T1.T)
    G3 = tensors.G3[:n, :n_a, :n_b]
    T2 = np.einsum("ikl,kca,lc->ia", G3, A, f, optimize=True).ravel()
    T3 = float(np.einsum("lm,la,ma->", tensors.G2[:n_b, :n_b], f, f))
    return NormalEquations(T1, T2, T3, basis, "identity",
                           assembly_seconds=time.perf_counter() - t0,
                           warnings=_truncation_warnings(exp), n_terms=n_a * n_a)


def solve_analytic_sg(exp: OperatorExpansion, tensors: MomentTensors, basis: Basis,
                      spd: bool = True) -> SpectralSolution:
    t0 = time.perf_counter()
    system = assemble_analytic_sg(exp, tensors, basis)
    t1 = time.perf_counter()
    u = _solve_coupled(system.matrix, system.rhs, spd)
    return SpectralSolution(basis, u, method="SG",
                            timings={"assembly": t1 - t0,
                                     "solve": time.perf_counter() - t1},
                            warnings=list(system.warnings))
