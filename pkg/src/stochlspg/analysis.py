"""Weighted norms, relative error measures and norm-equivalence constants."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla
from scipy import stats

from .fem import QoIOperator
from .gpc import HERMITE, ParameterSpace, QuadratureRule
from .projection import factor_lu
from .sysmodel import ParamSystem, SpectralSolution

THETAS = ("A", "AtA", "2", "FtF")


class DegenerateProblemError(ZeroDivisionError):
    pass


def _quad_form(theta: str, e: np.ndarray, As=None, Fs=None) -> np.ndarray:
    """Per-node ``e_k^T Theta_k e_k`` for node samples ``e`` of shape (n_q, n_x)."""
    if theta == "2":
        return np.einsum("ka,ka->k", e, e)
    if theta == "A":
        return np.einsum("ka,kab,kb->k", e, As, e)
    if theta == "AtA":
        Ae = np.einsum("kab,kb->ka", As, e)
        return np.einsum("ka,ka->k", Ae, Ae)
    if theta == "FtF":
        Fe = np.einsum("kob,kb->ko", Fs, e)
        return np.einsum("ko,ko->k", Fe, Fe)
    raise ValueError(f"unknown norm {theta!r}")


def weighted_norm_sq(v: Union[Callable, np.ndarray], theta: str, sys: ParamSystem,
                     F: Optional[QoIOperator], rule: QuadratureRule) -> float:
    """``E[v^T Theta v]`` for ``Theta`` in ``A``, ``AtA``, ``2``, ``FtF``.

    ``v`` is a function of ``xi`` or an array of its values at the rule nodes.
    """
    if theta == "A" and not sys.spd:
        raise ValueError(f"energy norm needs an SPD operator ({sys.name})")
    if callable(v):
        e = np.stack([np.atleast_1d(np.asarray(v(x), dtype=float)) for x in rule.nodes])
    else:
        e = np.asarray(v, dtype=float).reshape(rule.n_q, -1)
    As = sys.sample(rule.nodes)[0] if theta in ("A", "AtA") else None
    Fs = np.stack([F.F(x) for x in rule.nodes]) if theta == "FtF" else None
    if theta == "A":
        for k, x in enumerate(rule.nodes):
            if not np.allclose(As[k], As[k].T):
                raise ValueError(f"operator is not symmetric at xi={x!r}")
    return float(rule.weights @ _quad_form(theta, e, As, Fs))


@dataclass(eq=False)
class ReferenceSolution:
    """Exact node samples ``u(xi_k) = A(xi_k)^{-1} f(xi_k)`` on a reference rule."""

    rule: QuadratureRule
    As: np.ndarray
    fs: np.ndarray
    us: np.ndarray
    Fs: Optional[np.ndarray]
    spd: bool
    lu: list
    max_residual: float
    norms: dict = field(default_factory=dict)


def reference_solution(sys: ParamSystem, rule_ref: QuadratureRule,
                       qoi: Optional[QoIOperator] = None) -> ReferenceSolution:
    As, fs = sys.sample(rule_ref.nodes)
    lus, us, res = [], [], []
    for k, x in enumerate(rule_ref.nodes):
        lu = factor_lu(As[k], k, float(x))
        u = sla.lu_solve(lu, fs[k])
        lus.append(lu)
        us.append(u)
        fn = np.linalg.norm(fs[k])
        res.append(np.linalg.norm(fs[k] - As[k] @ u) / fn if fn > 0 else 0.0)
    us = np.stack(us)
    Fs = np.stack([qoi.F(x) for x in rule_ref.nodes]) if qoi is not None else None
    w = rule_ref.weights
    norms = {"u_2": float(w @ _quad_form("2", us)),
             "f_2": float(w @ _quad_form("2", fs))}
    if sys.spd:
        norms["u_A"] = float(w @ _quad_form("A", us, As))
    if Fs is not None:
        norms["Fu_2"] = float(w @ _quad_form("FtF", us, Fs=Fs))
    return ReferenceSolution(rule_ref, As, fs, us, Fs, sys.spd, lus, float(max(res)), norms)


@dataclass
class ErrorReport:
    """Relative squared errors; ``eta_A`` is ``None`` for non-SPD systems."""

    eta_r: float
    eta_e: float
    eta_A: Optional[float] = None
    eta_Q: Optional[float] = None
    assembly_seconds: float = 0.0
    solve_seconds: float = 0.0

    def measure(self, name: str) -> Optional[float]:
        return getattr(self, name)


def _ratio(num: float, den: float, what: str) -> float:
    if den <= 0.0:
        raise DegenerateProblemError(f"zero denominator in {what}")
    return num / den


def solution_error(sol: SpectralSolution, ref: ReferenceSolution) -> np.ndarray:
    psi = sol.basis.evaluate(ref.rule.nodes)
    return ref.us - psi @ sol.blocks


def error_report(sol: SpectralSolution, ref: ReferenceSolution) -> ErrorReport:
    e = solution_error(sol, ref)
    w = ref.rule.weights
    rep = ErrorReport(
        eta_r=_ratio(float(w @ _quad_form("AtA", e, ref.As)), ref.norms["f_2"], "eta_r"),
        eta_e=_ratio(float(w @ _quad_form("2", e)), ref.norms["u_2"], "eta_e"),
        assembly_seconds=sol.timings.get("assembly", 0.0),
        solve_seconds=sol.timings.get("solve", 0.0),
    )
    if ref.spd:
        rep.eta_A = _ratio(float(w @ _quad_form("A", e, ref.As)), ref.norms["u_A"], "eta_A")
    if ref.Fs is not None:
        rep.eta_Q = _ratio(float(w @ _quad_form("FtF", e, Fs=ref.Fs)),
                           ref.norms["Fu_2"], "eta_Q")
    return rep


# ---------------------------------------------------------------------------
# stability constants
# ---------------------------------------------------------------------------

def probe_grid(space: ParameterSpace, n: int = 201, mass: float = 0.9999) -> np.ndarray:
    """Equispaced points spanning the central ``mass`` of the parameter density."""
    tail = (1.0 - mass) / 2.0
    if space.family.kind == HERMITE:
        dist = stats.norm()
    else:
        dist = stats.gamma(space.family.alpha + 1.0)
    return np.linspace(dist.ppf(tail), dist.ppf(1.0 - tail), n)


def default_samples(space: ParameterSpace, rule_ref: QuadratureRule) -> np.ndarray:
    return np.concatenate([rule_ref.nodes, probe_grid(space)])


@dataclass
class StabilityEstimate:
    """Sampled singular-value extremes and the norm-equivalence table.

    ``table[i, j]`` bounds ``||x||_{THETAS[j]}^2 <= C ||x||_{THETAS[i]}^2``.
    """

    sigma_min_A: float
    sigma_max_A: float
    sigma_min_F: float
    sigma_max_F: float
    table: np.ndarray
    n_samples: int

    def constant(self, theta: str, theta_prime: str) -> float:
        return float(self.table[THETAS.index(theta), THETAS.index(theta_prime)])


def _div(num: float, den: float) -> float:
    return math.inf if den == 0.0 else num / den


def stability_table(smin_A: float, smax_A: float, smin_F: float, smax_F: float,
                    spd: bool = True) -> np.ndarray:
    C = np.array([
        [1.0, smax_A, _div(1.0, smin_A), _div(smax_F**2, smin_A)],
        [_div(1.0, smin_A), 1.0, _div(1.0, smin_A**2), _div(smax_F**2, smin_A**2)],
        [smax_A, smax_A**2, 1.0, smax_F**2],
        [_div(smax_A, smin_F**2), _div(smax_A**2, smin_F**2), _div(1.0, smin_F**2), 1.0],
    ])
    if not spd:
        C[0, 1:] = np.nan
        C[1:, 0] = np.nan
    return C


def stability_constants(sys: ParamSystem, F: Optional[QoIOperator],
                        sample_xis: Sequence[float]) -> StabilityEstimate:
    xs = np.asarray(sample_xis, dtype=float)
    if xs.size == 0:
        raise ValueError("need at least one sample point")
    sA = [np.linalg.svd(sys.A(x), compute_uv=False) for x in xs]
    smin_A = float(min(s[-1] for s in sA))
    smax_A = float(max(s[0] for s in sA))
    if F is None:
        smin_F, smax_F = math.nan, math.nan
    else:
        sF = [np.linalg.svd(F.F(x), compute_uv=False) for x in xs]
        smax_F = float(max(s[0] for s in sF))
        # a wide operator has a non-trivial null space
        smin_F = 0.0 if F.n_o < sys.n_x else float(min(s[-1] for s in sF))
    table = stability_table(smin_A, smax_A, smin_F, smax_F, sys.spd)
    return StabilityEstimate(smin_A, smax_A, smin_F, smax_F, table, xs.size)


@dataclass
class AuditResult:
    verdict: str  # "pass", "fail" or "unbounded"
    ratio: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def audit_norm_equivalence(sol: SpectralSolution, ref: ReferenceSolution,
                           estimate: StabilityEstimate, theta: str, theta_prime: str,
                           slack: float = 0.0) -> AuditResult:
    """Check ``||e||_{theta'}^2 <= (1 + slack) C ||e||_theta^2`` on the reference rule."""
    bound = estimate.constant(theta, theta_prime)
    e = solution_error(sol, ref)
    w = ref.rule.weights
    num = float(w @ _quad_form(theta_prime, e, ref.As, ref.Fs))
    den = float(w @ _quad_form(theta, e, ref.As, ref.Fs))
    ratio = _div(num, den) if num > 0 else 0.0
    if not math.isfinite(bound):
        return AuditResult("unbounded", ratio, bound)
    return AuditResult("pass" if ratio <= (1.0 + slack) * bound else "fail", ratio, bound)
