"""``study`` command line: convergence and Pareto sweeps from a TOML config."""
from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .bench import (METHODS, ConfigError, StudyConfig, emit_csv, prepare_study,
                    run_convergence_study, run_pareto_study, write_metadata)
from .problems import PROBLEMS

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ROW_FAILED = 2


def _methods(text: str) -> list:
    return [m.strip() for m in text.split(",") if m.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="study",
        description="Sweep polynomial degree and projection method; write a CSV of errors "
                    "and wall times.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "convergence study"),
                        ("pareto", "convergence study plus Pareto-front flags")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="TOML study configuration")
        p.add_argument("--problem", choices=PROBLEMS)
        p.add_argument("--p-min", type=int, dest="p_min")
        p.add_argument("--p-max", type=int, dest="p_max")
        p.add_argument("--methods", type=_methods,
                       help=f"comma-separated subset of {','.join(METHODS)}")
        p.add_argument("--mesh", type=int, help="elements per side")
        p.add_argument("--quad", type=int, help="quadrature nodes (0 = automatic)")
        p.add_argument("--assembly", choices=("quadrature", "analytic"))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="CSV output path")
        p.add_argument("--parallel", action="store_true", default=None,
                       help="run rows concurrently (timings become less reliable)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = StudyConfig.load(args.config).with_overrides(
            problem=args.problem, p_min=args.p_min, p_max=args.p_max, methods=args.methods,
            mesh=args.mesh, quad=args.quad, assembly=args.assembly, seed=args.seed,
            out=args.out, parallel=args.parallel)
    except ConfigError as exc:
        print(f"study: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    ctx = prepare_study(cfg)
    runner = run_pareto_study if args.command == "pareto" else run_convergence_study
    rows = runner(cfg, ctx)
    path = emit_csv(rows, cfg.out)
    write_metadata(ctx, path, args.command)

    failed = [r for r in rows if r.failed]
    print(f"{len(rows)} rows ({len(failed)} failed) -> {path}")
    for r in failed:
        print(f"  failed {r.method} p={r.p}: {r.warnings}", file=sys.stderr)
    return EXIT_ROW_FAILED if failed else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
