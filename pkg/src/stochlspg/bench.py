"""Convergence and Pareto studies over polynomial degree and projection method."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analysis import ReferenceSolution, error_report, reference_solution
from .gpc import build_basis, default_quadrature_order, expectation, gauss_rule
from .problems import DEFAULT_QOI, PROBLEMS, Problem, QoISpec, build_problem
from .projection import (WeightingScheme, analytic_tensors, assemble_analytic_lspg_ata,
                         solve_analytic_sg, solve_lspg, solve_pseudospectral,
                         solve_stochastic_galerkin, solve_weighted_lspg)
from .sysmodel import expand_operator

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

METHODS = ("SG", "PS", "LSPG_energy", "LSPG_identity", "LSPG_goal")
MEASURES = ("eta_A", "eta_r", "eta_e", "eta_Q")
TARGET_MEASURE = {
    "SG": "eta_A",
    "LSPG_energy": "eta_A",
    "LSPG_identity": "eta_r",
    "PS": "eta_e",
    "LSPG_goal": "eta_Q",
}
ANALYTIC_METHODS = ("SG", "LSPG_identity")

# Forcing terms with a kink at xi = 1 converge slowly under Gauss-Hermite
# quadrature; these problems get a finer default rule.
KINKED_PROBLEMS = ("diffusion2", "scalar_toy")
KINKED_QUAD = 200

THREADS_ENV = "STOCHLSPG_THREADS"
TIMING_RULE = ("assembly_seconds covers sampling A and f at the quadrature nodes and "
               "forming the projected system; solve_seconds covers the linear solve(s); "
               "total_seconds is their sum; the shared reference solution is excluded")


class ConfigError(ValueError):
    pass


@dataclass
class StudyConfig:
    problem: str = "diffusion1"
    mesh: int = 8
    p_min: int = 0
    p_max: int = 8
    quad: int = 0
    methods: Optional[tuple] = None
    qoi: Optional[QoISpec] = None
    assembly: str = "quadrature"
    out: str = "study.csv"
    seed: int = 0
    solver: str = "cholesky"
    parallel: bool = False

    def __post_init__(self):
        if self.methods is None:
            spd = self.problem != "convdiff"
            self.methods = tuple(m for m in METHODS if spd or m != "LSPG_energy")
        else:
            self.methods = tuple(self.methods)
        if self.qoi is None and self.problem in DEFAULT_QOI:
            self.qoi = dataclasses.replace(DEFAULT_QOI[self.problem], seed=self.seed)
        self.validate()

    def validate(self) -> None:
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from "
                              f"{', '.join(PROBLEMS)}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown method(s) {', '.join(bad)}; choose from "
                              f"{', '.join(METHODS)}")
        if not self.methods:
            raise ConfigError("no methods selected")
        if "LSPG_energy" in self.methods and self.problem == "convdiff":
            raise ConfigError("LSPG_energy needs an SPD operator; convdiff is not symmetric")
        if not 0 <= self.p_min <= self.p_max:
            raise ConfigError(f"need 0 <= p_min <= p_max, got {self.p_min}, {self.p_max}")
        if self.mesh < 2:
            raise ConfigError("mesh needs at least 2 elements per side")
        if self.quad < 0:
            raise ConfigError("quad must be 0 (automatic) or a positive node count")
        if self.assembly not in ("quadrature", "analytic"):
            raise ConfigError(f"assembly must be 'quadrature' or 'analytic', "
                              f"got {self.assembly!r}")
        if self.solver not in ("cholesky", "cg"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.qoi is not None and self.qoi.kind not in ("F1", "F2"):
            raise ConfigError(f"unknown QoI kind {self.qoi.kind!r}")
        if self.qoi is not None and self.qoi.kind == "F2" and self.problem in ("convdiff",
                                                                               "scalar_toy"):
            raise ConfigError("F2 is defined for the diffusion problems only")
        if "LSPG_goal" in self.methods and self.qoi is None:
            raise ConfigError("LSPG_goal needs a QoI operator")

    @property
    def p_range(self) -> range:
        return range(self.p_min, self.p_max + 1)

    @property
    def n_q(self) -> int:
        """Solve-rule size, shared by every degree so the studies stay nested."""
        if self.quad:
            return self.quad
        base = default_quadrature_order(self.p_max)
        return max(base, KINKED_QUAD) if self.problem in KINKED_PROBLEMS else base

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        q = data.get("qoi")
        if isinstance(q, dict):
            q = dict(q)
            q.setdefault("seed", data.get("seed", 0))
            try:
                data["qoi"] = QoISpec(**q)
            except TypeError as exc:
                raise ConfigError(f"bad [qoi] table: {exc}") from None
        if "methods" in data and isinstance(data["methods"], str):
            data["methods"] = [m.strip() for m in data["methods"].split(",") if m.strip()]
        return cls(**data)

    @classmethod
    def load(cls, path) -> "StudyConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def with_overrides(self, **kw) -> "StudyConfig":
        """Copy with the non-``None`` overrides applied."""
        data = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        kw = {k: v for k, v in kw.items() if v is not None}
        if "problem" in kw and kw["problem"] != self.problem:
            # per-problem defaults follow the new problem unless given explicitly
            data["qoi"] = None
            if "methods" not in kw:
                data["methods"] = None
        data.update(kw)
        return StudyConfig(**data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["methods"] = list(self.methods)
        return d


@dataclass
class StudyRow:
    problem: str
    method: str
    p: int
    n_psi: int
    eta_A: Optional[float] = None
    eta_r: Optional[float] = None
    eta_e: Optional[float] = None
    eta_Q: Optional[float] = None
    assembly_seconds: Optional[float] = None
    solve_seconds: Optional[float] = None
    total_seconds: Optional[float] = None
    warnings: str = ""
    status: str = "ok"
    pareto: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.status != "ok"


@dataclass(eq=False)
class StudyContext:
    """Everything shared by the rows of one study."""

    config: StudyConfig
    problem: Problem
    rule: object
    reference: ReferenceSolution
    reference_seconds: float


def prepare_study(cfg: StudyConfig) -> StudyContext:
    prob = build_problem(cfg.problem, n_el=cfg.mesh, qoi=cfg.qoi)
    rule = gauss_rule(prob.space, cfg.n_q)
    # the integrand check catches forcing singularities at the nodes up front
    expectation(prob.system.f, rule)
    t0 = time.perf_counter()
    ref = reference_solution(prob.system, gauss_rule(prob.space, 2 * cfg.n_q), prob.qoi)
    return StudyContext(cfg, prob, rule, ref, time.perf_counter() - t0)


def _solve(ctx: StudyContext, method: str, p: int):
    cfg, prob = ctx.config, ctx.problem
    sys_, rule = prob.system, ctx.rule
    basis = build_basis(prob.space, p)
    if cfg.assembly == "analytic" and method in ANALYTIC_METHODS:
        t0 = time.perf_counter()
        exp = expand_operator(sys_, basis, rule)
        tensors = analytic_tensors(basis, exp, 3 if method == "SG" else 4)
        prep = time.perf_counter() - t0
        if method == "SG":
            sol = solve_analytic_sg(exp, tensors, basis, spd=sys_.spd)
        else:
            sol = solve_lspg(assemble_analytic_lspg_ata(exp, tensors, basis), cfg.solver)
        sol.timings["assembly"] += prep
        return sol
    if method == "SG":
        return solve_stochastic_galerkin(sys_, basis, rule)
    if method == "PS":
        return solve_pseudospectral(sys_, basis, rule)
    weighting = {
        "LSPG_energy": lambda: WeightingScheme.energy(sys_),
        "LSPG_identity": WeightingScheme.identity,
        "LSPG_goal": lambda: WeightingScheme.goal(prob.qoi),
    }[method]()
    return solve_weighted_lspg(sys_, basis, rule, weighting, cfg.solver)


def run_row(ctx: StudyContext, method: str, p: int) -> StudyRow:
    row = StudyRow(ctx.problem.name, method, p, p + 1)
    try:
        sol = _solve(ctx, method, p)
        rep = error_report(sol, ctx.reference)
    except (np.linalg.LinAlgError, ValueError, ArithmeticError) as exc:
        row.status = "failed"
        row.warnings = f"{type(exc).__name__}: {exc}"
        return row
    for m in MEASURES:
        setattr(row, m, rep.measure(m))
    row.assembly_seconds = rep.assembly_seconds
    row.solve_seconds = rep.solve_seconds
    row.total_seconds = rep.assembly_seconds + rep.solve_seconds
    notes = list(sol.warnings)
    if ctx.config.assembly == "analytic" and method not in ANALYTIC_METHODS:
        notes.append("analytic assembly not available; quadrature used")
    row.warnings = "; ".join(notes)
    return row


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def run_convergence_study(cfg: StudyConfig, ctx: Optional[StudyContext] = None) -> list:
    """One row per ``(method, p)``, ordered by method then degree."""
    ctx = prepare_study(cfg) if ctx is None else ctx
    order = [m for m in METHODS if m in cfg.methods]
    jobs = [(m, p) for m in order for p in cfg.p_range]
    if cfg.parallel and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=_threads()) as pool:
            return list(pool.map(lambda job: run_row(ctx, *job), jobs))
    return [run_row(ctx, m, p) for m, p in jobs]


def pareto_flags(times: Sequence[float], errors: Sequence[float],
                 degrees: Sequence[int]) -> list:
    """Non-dominated flags for points ``(time, error)``.

    A point is dominated when another has both coordinates no larger and one
    strictly smaller.  Of exact duplicates only the lowest degree is kept.
    """
    idx = sorted(range(len(times)), key=lambda i: (times[i], errors[i], degrees[i], i))
    flags = [False] * len(times)
    best = math.inf
    for i in idx:
        if errors[i] < best:
            flags[i] = True
            best = errors[i]
    return flags


def mark_pareto(rows: list) -> list:
    for m in MEASURES:
        cand = [r for r in rows if not r.failed and getattr(r, m) is not None
                and math.isfinite(getattr(r, m))]
        flags = pareto_flags([r.total_seconds for r in cand], [getattr(r, m) for r in cand],
                             [r.p for r in cand])
        for r in rows:
            r.pareto[m] = None
        for r, f in zip(cand, flags):
            r.pareto[m] = f
    return rows


def run_pareto_study(cfg: StudyConfig, ctx: Optional[StudyContext] = None) -> list:
    """Convergence rows with per-measure Pareto-front flags on ``(total_seconds, error)``."""
    return mark_pareto(run_convergence_study(cfg, ctx))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

FLOAT_FIELDS = MEASURES + ("assembly_seconds", "solve_seconds", "total_seconds")
COLUMNS = (("problem", "method", "p", "n_psi") + FLOAT_FIELDS + ("warnings", "status")
           + tuple(f"pareto_{m}" for m in MEASURES))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "%.12g" % v
    return str(v)


def emit_csv(rows: Sequence[StudyRow], path) -> Path:
    path = Path(path)
    try:
        if path.parent != Path(""):
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in rows:
                vals = [getattr(r, c) for c in COLUMNS[:-len(MEASURES)]]
                vals += [r.pareto.get(m) for m in MEASURES]
                w.writerow([_fmt(v) for v in vals])
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write CSV: {exc.strerror}", str(path)) from None
    return path


def read_csv(path) -> list:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            row = StudyRow(rec["problem"], rec["method"], int(rec["p"]), int(rec["n_psi"]))
            for c in FLOAT_FIELDS:
                setattr(row, c, float(rec[c]) if rec[c] != "" else None)
            row.warnings = rec["warnings"]
            row.status = rec["status"]
            row.pareto = {m: (None if rec[f"pareto_{m}"] == "" else rec[f"pareto_{m}"] == "1")
                          for m in MEASURES if f"pareto_{m}" in rec}
            if all(v is None for v in row.pareto.values()):
                row.pareto = {}
            rows.append(row)
    return rows


def write_metadata(ctx: StudyContext, csv_path, kind: str) -> Path:
    cfg = ctx.config
    meta = {
        "study": kind,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "n_q": ctx.rule.n_q,
        "n_q_reference": ctx.reference.rule.n_q,
        "n_x": ctx.problem.system.n_x,
        "reference_max_residual": ctx.reference.max_residual,
        "reference_seconds": ctx.reference_seconds,
        "timing": TIMING_RULE,
        "parallel": cfg.parallel,
        "threads": _threads() if cfg.parallel else 1,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    path = Path(str(csv_path) + ".meta.json")
    path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path
