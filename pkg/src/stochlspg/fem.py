"""Bilinear (Q1) finite elements on uniform rectangular meshes.

Assembly uses 2x2 Gauss quadrature on every element.  Random coefficients are
exponentials of the leading Karhunen-Loeve mode of a separable exponential
covariance; the mode is computed by a Nystrom discretization on the mesh's
1-D node lines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .sysmodel import ParamSystem, dense

_GP = np.array([-1.0, 1.0]) / math.sqrt(3.0)
# local node order: bottom-left, bottom-right, top-right, top-left
_REF = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


class SPDViolation(ValueError):
    """Raised when a diffusion coefficient sample is not strictly positive."""


@dataclass(frozen=True, eq=False)
class Mesh:
    x0: float
    x1: float
    y0: float
    y1: float
    n_el: int

    @property
    def hx(self) -> float:
        return (self.x1 - self.x0) / self.n_el

    @property
    def hy(self) -> float:
        return (self.y1 - self.y0) / self.n_el

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @cached_property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x0, self.x1, self.n_el + 1)

    @cached_property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y0, self.y1, self.n_el + 1)

    @cached_property
    def coords(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys)  # x varies fastest
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def n_nodes(self) -> int:
        return (self.n_el + 1) ** 2

    @cached_property
    def elements(self) -> np.ndarray:
        m = self.n_el + 1
        j, i = np.meshgrid(np.arange(self.n_el), np.arange(self.n_el), indexing="ij")
        bl = (j * m + i).ravel()
        return np.column_stack([bl, bl + 1, bl + m + 1, bl + m])

    @cached_property
    def boundary(self) -> np.ndarray:
        m = self.n_el + 1
        ix, iy = np.arange(self.n_nodes) % m, np.arange(self.n_nodes) // m
        mask = (ix == 0) | (ix == m - 1) | (iy == 0) | (iy == m - 1)
        return np.flatnonzero(mask)

    @cached_property
    def interior(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_nodes), self.boundary)

    @cached_property
    def gauss_points(self) -> np.ndarray:
        """Physical Gauss points, shape ``(n_elements, 4, 2)``."""
        centers = self.coords[self.elements].mean(axis=1)
        s, t = np.meshgrid(_GP, _GP)
        ref = np.column_stack([s.ravel(), t.ravel()])
        half = np.array([self.hx, self.hy]) / 2.0
        return centers[:, None, :] + ref[None, :, :] * half

    @cached_property
    def _shape(self):
        s, t = np.meshgrid(_GP, _GP)
        s, t = s.ravel(), t.ravel()
        N = 0.25 * (1 + s[:, None] * _REF[:, 0]) * (1 + t[:, None] * _REF[:, 1])
        dNds = 0.25 * _REF[:, 0] * (1 + t[:, None] * _REF[:, 1])
        dNdt = 0.25 * (1 + s[:, None] * _REF[:, 0]) * _REF[:, 1]
        return N, dNds * 2.0 / self.hx, dNdt * 2.0 / self.hy, self.hx * self.hy / 4.0

    @cached_property
    def _coo(self):
        e = self.elements
        return np.repeat(e, 4, axis=1).ravel(), np.tile(e, (1, 4)).ravel()

    def scatter(self, local: np.ndarray) -> sp.csr_matrix:
        """Sum element matrices ``(n_elements, 4, 4)`` into a global CSR matrix."""
        rows, cols = self._coo
        return sp.csr_matrix((local.ravel(), (rows, cols)),
                             shape=(self.n_nodes, self.n_nodes))

    def interpolate(self, nodal: np.ndarray) -> np.ndarray:
        """Nodal field values at the Gauss points, shape ``(n_elements, 4)``."""
        N = self._shape[0]
        return nodal[self.elements] @ N.T


def unit_square(n_el: int) -> Mesh:
    return Mesh(0.0, 1.0, 0.0, 1.0, n_el)


def restrict(mat, rows, cols=None):
    cols = rows if cols is None else cols
    return sp.csr_matrix(mat)[rows][:, cols]


# ---------------------------------------------------------------------------
# Karhunen-Loeve mode
# ---------------------------------------------------------------------------

def _trapezoid_weights(pts: np.ndarray) -> np.ndarray:
    w = np.zeros_like(pts)
    d = np.diff(pts)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def kl_leading_mode_1d(pts, c: float) -> tuple[float, np.ndarray]:
    """Leading eigenpair of ``v -> int exp(-|x-y|/c) v(y) dy`` on a node line.

    Returns the eigenvalue and nodal eigenfunction, normalized to unit
    (trapezoid) L2 norm with a non-negative integral.
    """
    if c <= 0:
        raise ValueError("correlation length must be positive")
    pts = np.asarray(pts, dtype=float)
    w = _trapezoid_weights(pts)
    sw = np.sqrt(w)
    K = np.exp(-np.abs(pts[:, None] - pts[None, :]) / c)
    try:
        vals, vecs = sla.eigh(sw[:, None] * K * sw[None, :])
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise RuntimeError(f"KL eigen-solve failed: {exc}") from exc
    v = vecs[:, -1] / sw
    v /= math.sqrt(float(w @ v**2))
    if w @ v < 0:
        v = -v
    return float(vals[-1]), v


def kl_first_eigenfunction(mesh: Mesh, c: float) -> np.ndarray:
    """Nodal values of the first KL eigenfunction ``a1(x) = v1(x1) v1(x2)``."""
    _, vx = kl_leading_mode_1d(mesh.xs, c)
    _, vy = kl_leading_mode_1d(mesh.ys, c)
    return np.outer(vy, vx).ravel()


@dataclass(frozen=True, eq=False)
class RandomFieldKL:
    """``exp(mu + sigma a1(x) xi)``; the ``gamma`` form adds ``0.01 sin(xi)``."""

    mesh: Mesh
    mu: float = 1.0
    sigma: float = 0.25
    c: float = 2.0
    form: str = "lognormal"

    def __post_init__(self):
        if self.form not in ("lognormal", "gamma"):
            raise ValueError(f"unknown field form {self.form!r}")

    @cached_property
    def a1(self) -> np.ndarray:
        return kl_first_eigenfunction(self.mesh, self.c)

    @cached_property
    def _a1_gauss(self) -> np.ndarray:
        return self.mesh.interpolate(self.a1)

    def _exponent(self, a1, xi):
        out = self.mu + self.sigma * a1 * xi
        if self.form == "gamma":
            out = out + 0.01 * math.sin(xi)
        return out

    def nodal(self, xi: float) -> np.ndarray:
        return np.exp(self._exponent(self.a1, xi))

    def at_gauss(self, xi: float) -> np.ndarray:
        with np.errstate(over="ignore"):
            a = np.exp(self._exponent(self._a1_gauss, xi))
        if not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise SPDViolation(f"non-positive or non-finite coefficient at xi={xi!r}")
        return a


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _diffusion_local(mesh: Mesh, a_gauss: np.ndarray) -> np.ndarray:
    _, dx, dy, det = mesh._shape
    Kg = det * (dx[:, :, None] * dx[:, None, :] + dy[:, :, None] * dy[:, None, :])
    return np.einsum("eg,gij->eij", a_gauss, Kg)


def assemble_diffusion_full(mesh: Mesh, a_gauss: np.ndarray) -> sp.csr_matrix:
    """Full (boundary-included) stiffness for coefficient values at Gauss points."""
    a_gauss = np.asarray(a_gauss, dtype=float)
    if a_gauss.ndim == 0:
        a_gauss = np.full((len(mesh.elements), 4), float(a_gauss))
    if np.any(a_gauss <= 0) or not np.all(np.isfinite(a_gauss)):
        raise SPDViolation("diffusion coefficient must be positive and finite")
    return mesh.scatter(_diffusion_local(mesh, a_gauss))


def assemble_diffusion(mesh: Mesh, field: RandomFieldKL, xi: float) -> sp.csr_matrix:
    """Interior-node stiffness ``int a(x, xi) grad phi_i . grad phi_j``."""
    full = assemble_diffusion_full(mesh, field.at_gauss(xi))
    return restrict(full, mesh.interior)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    N, _, _, det = mesh._shape
    Mg = det * np.einsum("gi,gj->ij", N, N)
    return mesh.scatter(np.broadcast_to(Mg, (len(mesh.elements), 4, 4)).copy())


def assemble_rhs(mesh: Mesh, f: Callable, xi: float) -> np.ndarray:
    """Load vector ``int f(x, xi) phi_i`` over all nodes.

    ``f(x, y, xi)`` receives arrays of Gauss-point coordinates.
    """
    N, _, _, det = mesh._shape
    gp = mesh.gauss_points
    vals = np.broadcast_to(np.asarray(f(gp[..., 0], gp[..., 1], xi), dtype=float),
                           gp.shape[:2])
    local = det * vals @ N  # (n_elements, 4)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elements, local)
    return out


def streamline_length(mesh: Mesh, w) -> float:
    """Length of the element cut by the flow direction through its centre."""
    wx, wy = abs(w[0]), abs(w[1])
    if wx == 0 and wy == 0:
        raise ValueError("streamline length is undefined for zero velocity")
    lens = []
    if wx > 0:
        lens.append(mesh.hx * math.hypot(wx, wy) / wx)
    if wy > 0:
        lens.append(mesh.hy * math.hypot(wx, wy) / wy)
    return min(lens)


def streamline_delta(mesh: Mesh, a_gauss: np.ndarray, eps: float, w) -> np.ndarray:
    """Per-element stabilization parameter; zero where the Peclet number is at most one."""
    wnorm = math.hypot(w[0], w[1])
    if wnorm == 0:
        return np.zeros(len(a_gauss))
    h = streamline_length(mesh, w)
    abar = a_gauss.mean(axis=1)
    pe = wnorm * h / (2.0 * eps * abar)
    delta = np.zeros_like(pe)
    hot = pe > 1.0
    delta[hot] = h / (2.0 * wnorm) * (1.0 - 1.0 / pe[hot])
    return delta


def convection_parts(mesh: Mesh, a_gauss: np.ndarray, eps: float, w):
    """Full diffusion ``D``, convection ``C`` and streamline ``S`` matrices."""
    N, dx, dy, det = mesh._shape
    wgrad = w[0] * dx + w[1] * dy  # (gauss, shape)
    Cg = det * np.einsum("gi,gj->ij", N, wgrad)
    Sg = det * np.einsum("gi,gj->ij", wgrad, wgrad)
    n_e = len(mesh.elements)
    D = assemble_diffusion_full(mesh, a_gauss)
    C = mesh.scatter(np.broadcast_to(Cg, (n_e, 4, 4)).copy())
    delta = streamline_delta(mesh, a_gauss, eps, w)
    S = mesh.scatter(delta[:, None, None] * Sg[None])
    return D, C, S


def assemble_convection_diffusion(mesh: Mesh, field: RandomFieldKL, eps: float, w,
                                  xi: float, full: bool = False) -> sp.csr_matrix:
    """``eps D(a(xi)) + C + S``; interior block unless ``full`` is set."""
    D, C, S = convection_parts(mesh, field.at_gauss(xi), eps, w)
    A = (eps * D + C + S).tocsr()
    return A if full else restrict(A, mesh.interior)


def lift(A_full, f_full: np.ndarray, mesh: Mesh, g_boundary: np.ndarray):
    """Reduce to interior unknowns: ``f_I - A_IB g_B``."""
    A_full = sp.csr_matrix(A_full)
    A_ii = restrict(A_full, mesh.interior)
    A_ib = restrict(A_full, mesh.interior, mesh.boundary)
    f_i = np.asarray(f_full, dtype=float)[mesh.interior] - A_ib @ g_boundary
    return A_ii, f_i


def apply_dirichlet(full: ParamSystem, mesh: Mesh, g_D: Callable) -> ParamSystem:
    """Interior system of a full-node system with boundary data ``g_D(x, y)``."""
    bx = mesh.coords[mesh.boundary]
    g_b = np.asarray([g_D(x, y) for x, y in bx], dtype=float)

    def eval_A(xi):
        return restrict(full.eval_A(xi), mesh.interior)

    def eval_f(xi):
        return lift(full.eval_A(xi), full.f(xi), mesh, g_b)[1]

    return ParamSystem(len(mesh.interior), eval_A, eval_f, spd=full.spd, name=full.name)


# ---------------------------------------------------------------------------
# Output quantities of interest
# ---------------------------------------------------------------------------

G_FUNCTIONS: dict[str, Callable[[float], float]] = {
    "one": lambda xi: 1.0,
    "xi": lambda xi: xi,
    "sin": math.sin,
    "exp_abs": lambda xi: math.exp(xi) * abs(xi - 1.0),
}


@dataclass(frozen=True, eq=False)
class QoIOperator:
    kind: str
    n_o: int
    eval_F: Callable
    G: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def F(self, xi) -> np.ndarray:
        return np.atleast_2d(dense(self.eval_F(float(xi))))


def random_functional_matrix(n_o: int, n_x: int, seed: int) -> np.ndarray:
    """Uniform [0, 1] entries from a counter-based (Philox) stream."""
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.random((n_o, n_x))


def qoi_f1(n_x: int, n_o: int, g: str | Callable = "xi", seed: int = 0) -> QoIOperator:
    """``F(xi) = g(xi) G`` with a fixed random ``G``."""
    g_fn = G_FUNCTIONS[g] if isinstance(g, str) else g
    G = random_functional_matrix(n_o, n_x, seed)
    return QoIOperator("F1", n_o, lambda xi: g_fn(xi) * G, G=G, seed=seed)


def qoi_f2(sys: ParamSystem, mass_interior) -> QoIOperator:
    """``F(xi) = f(xi)^T M`` with the interior mass matrix (no ``1/|D|`` factor)."""
    M = dense(mass_interior)
    return QoIOperator("F2", 1, lambda xi: (sys.f(xi) @ M)[None, :])
