"""Command-line entry point: ``fadbp --mode trfa fpa --antennas 64 --clusters 4 --out runs/``.

Grid flags take several values; every combination becomes one cell. On
failure a one-line JSON error record goes to stderr and the exit code is
nonzero.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path

from .harness import Cell, ExperimentSpec, cost_report, run_experiment
from .scenario import ConfigError, SystemConfig, load_config


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fadbp", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="YAML system configuration")
    p.add_argument("--mode", nargs="+", type=str.lower, choices=["fpa", "trfa"])
    p.add_argument("--antennas", nargs="+", type=int, metavar="M")
    p.add_argument("--clusters", nargs="+", type=int, metavar="C")
    p.add_argument("--pmax-dbm", nargs="+", type=float, metavar="X")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--realizations", type=int, metavar="S")
    p.add_argument("--out", type=Path, default=Path("runs"))
    p.add_argument("--emit-convergence", action="store_true",
                   help="also write convergence.json (traces are always written)")
    p.add_argument("--cost-report", action="store_true",
                   help="rerun the first realization on the other scheduler and write cost_report.json")
    p.add_argument("--scheduler", choices=["seq", "par"], default="seq")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def spec_from_args(args) -> ExperimentSpec:
    base = load_config(args.config) if args.config else SystemConfig()
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        base = base.with_(seed=args.seed)
    cells = [
        Cell(M, C, P, mode.upper())
        for M, C, P, mode in itertools.product(
            args.antennas or [base.M],
            args.clusters or [base.C],
            args.pmax_dbm or [base.pmax_dbm],
            args.mode or [base.mode.lower()],
        )
    ]
    return ExperimentSpec(
        cells=cells,
        realizations=args.realizations if args.realizations is not None else base.S,
        seed=base.seed,
        out_dir=args.out,
        base=base,
        scheduler=args.scheduler,
        max_iters=args.max_iters,
        tol=args.tol,
        emit_convergence=args.emit_convergence,
        cost_report=args.cost_report,
    ).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = spec_from_args(args)
        rows = run_experiment(spec)
    except Exception as exc:
        record = {"status": "error", "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 2
    for row in rows:
        print(json.dumps(row.record()))
    if spec.cost_report:
        print(json.dumps(cost_report(rows)["note"]))
    return 0 if all(row.wsr for row in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
