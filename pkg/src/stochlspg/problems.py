"""Benchmark problems: stochastic diffusion, convection-diffusion and a scalar toy."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fem
from .fem import Mesh, QoIOperator, RandomFieldKL
from .gpc import ParameterSpace, hermite_space, laguerre_space
from .sysmodel import ParamSystem, scalar_toy

PROBLEMS = ("diffusion1", "diffusion2", "diffusion3", "convdiff", "scalar_toy")
SPD_PROBLEMS = ("diffusion1", "diffusion2", "diffusion3", "scalar_toy")

CONVDIFF_EPS = 1.0 / 200.0
CONVDIFF_WIND = (-math.sin(math.pi / 6.0), math.cos(math.pi / 6.0))
TOY_RATE = 0.3


def forcing_exp_abs(xi: float) -> float:
    return math.exp(xi) * abs(xi - 1.0)


def forcing_log_abs(xi: float) -> float:
    if xi <= 0.0:
        return math.nan  # singular at the left end of the Gamma support
    return math.log10(xi) * abs(xi - 1.0)


def hot_wall(x: float, y: float) -> float:
    """One on the right wall and the right half of the bottom wall, zero elsewhere."""
    tol = 1e-12
    if abs(x - 1.0) < tol and y < 1.0 - tol:
        return 1.0
    if abs(y + 1.0) < tol and x >= -tol:
        return 1.0
    return 0.0


@dataclass(frozen=True)
class QoISpec:
    kind: str = "F1"
    n_o: int = 20
    g: str = "xi"
    seed: int = 0


DEFAULT_QOI = {
    "diffusion1": QoISpec("F1", 20, "xi"),
    "diffusion2": QoISpec("F2"),
    "diffusion3": QoISpec("F2"),
    "convdiff": QoISpec("F1", 20, "exp_abs"),
    "scalar_toy": QoISpec("F1", 1, "one"),
}


@dataclass(frozen=True, eq=False)
class Problem:
    name: str
    system: ParamSystem
    space: ParameterSpace
    qoi: Optional[QoIOperator]
    mesh: Optional[Mesh] = None
    field: Optional[RandomFieldKL] = None

    @property
    def spd(self) -> bool:
        return self.system.spd


def _qoi(spec: Optional[QoISpec], sys: ParamSystem, mesh: Optional[Mesh]):
    if spec is None:
        return None
    if spec.kind == "F1":
        return fem.qoi_f1(sys.n_x, spec.n_o, spec.g, spec.seed)
    if spec.kind == "F2":
        if mesh is None:
            raise ValueError("F2 needs a finite-element mesh")
        M = fem.restrict(fem.assemble_mass(mesh), mesh.interior)
        return fem.qoi_f2(sys, M)
    raise ValueError(f"unknown QoI kind {spec.kind!r}")


def diffusion_problem(which: int, n_el: int = 8, mu: float = 1.0, sigma: float = 0.25,
                      c: float = 2.0, qoi: Optional[QoISpec] = None) -> Problem:
    """Diffusion problems 1-3 on the unit square with homogeneous Dirichlet data."""
    mesh = fem.unit_square(n_el)
    if which == 3:
        space = laguerre_space(0.5)
        field = RandomFieldKL(mesh, mu, sigma, c, form="gamma")
        source = forcing_log_abs
    else:
        space = hermite_space()
        field = RandomFieldKL(mesh, mu, sigma, c)
        source = (lambda xi: 1.0) if which == 1 else forcing_exp_abs
    load = fem.assemble_rhs(mesh, lambda x, y, xi: 1.0, 0.0)[mesh.interior]

    sys = ParamSystem(
        n_x=len(mesh.interior),
        eval_A=lambda xi: fem.assemble_diffusion(mesh, field, xi),
        eval_f=lambda xi: source(xi) * load,
        spd=True,
        name=f"diffusion{which}",
    )
    spec = DEFAULT_QOI[sys.name] if qoi is None else qoi
    return Problem(sys.name, sys, space, _qoi(spec, sys, mesh), mesh, field)


def convdiff_problem(n_el: int = 8, mu: float = 1.0, sigma: float = 0.25, c: float = 2.0,
                     eps: float = CONVDIFF_EPS, wind=CONVDIFF_WIND,
                     qoi: Optional[QoISpec] = None) -> Problem:
    """Streamline-diffusion stabilized convection-diffusion on ``[-1, 1]^2``."""
    mesh = Mesh(-1.0, 1.0, -1.0, 1.0, n_el)
    field = RandomFieldKL(mesh, mu, sigma, c)
    full = ParamSystem(
        n_x=mesh.n_nodes,
        eval_A=lambda xi: fem.assemble_convection_diffusion(mesh, field, eps, wind, xi,
                                                            full=True),
        eval_f=lambda xi: np.zeros(mesh.n_nodes),
        spd=False,
        name="convdiff",
    )
    sys = fem.apply_dirichlet(full, mesh, hot_wall)
    spec = DEFAULT_QOI["convdiff"] if qoi is None else qoi
    return Problem("convdiff", sys, hermite_space(), _qoi(spec, sys, mesh), mesh, field)


def toy_problem(rate: float = TOY_RATE, qoi: Optional[QoISpec] = None) -> Problem:
    """``exp(rate xi) u = exp(xi) |xi - 1|`` with a standard normal parameter."""
    sys = scalar_toy(lambda xi: math.exp(rate * xi), forcing_exp_abs)
    spec = DEFAULT_QOI["scalar_toy"] if qoi is None else qoi
    return Problem("scalar_toy", sys, hermite_space(), _qoi(spec, sys, None))


def build_problem(name: str, n_el: int = 8, qoi: Optional[QoISpec] = None,
                  mu: float = 1.0, sigma: float = 0.25, c: float = 2.0) -> Problem:
    if name in ("diffusion1", "diffusion2", "diffusion3"):
        return diffusion_problem(int(name[-1]), n_el, mu, sigma, c, qoi)
    if name == "convdiff":
        return convdiff_problem(n_el, mu, sigma, c, qoi=qoi)
    if name == "scalar_toy":
        return toy_problem(qoi=qoi)
    raise ValueError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}")
