"""Monte-Carlo experiment driver: WSR tables, cost figures and convergence traces."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scenario import SystemConfig, build_scenario
from .solver import SolveOptions, SolveResult, run_bca

log = logging.getLogger(__name__)

RESULT_FIELDS = ("cell", "M", "C", "pmax_dbm", "mode", "mean_wsr_bps_hz", "std_wsr", "mean_iters",
                 "bytes_per_iter", "du_ops_max", "total_ops", "wall_seq_ms", "wall_par_ms")

WALL_NOTE = "wall-time figures are hardware-dependent; op counts are not"


@dataclass(frozen=True)
class Cell:
    M: int
    C: int
    pmax_dbm: float
    mode: str

    @property
    def id(self) -> str:
        return f"M{self.M}_C{self.C}_P{self.pmax_dbm:g}_{self.mode.upper()}"


@dataclass
class ExperimentSpec:
    cells: list[Cell]
    realizations: int = 20
    seed: int = 0
    out_dir: Path | None = None
    base: SystemConfig = field(default_factory=SystemConfig)
    scheduler: str = "seq"
    max_iters: int = 200
    tol: float = 1e-4
    emit_convergence: bool = False
    cost_report: bool = False

    def validate(self) -> "ExperimentSpec":
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if not self.cells:
            raise ValueError("no cells to run")
        for cell in self.cells:
            if cell.C < 1 or cell.M % cell.C:
                raise ValueError(f"cell {cell.id}: C must divide M")
            if cell.mode.upper() not in ("FPA", "TRFA"):
                raise ValueError(f"cell {cell.id}: unknown mode {cell.mode!r}")
        return self

    def config_for(self, cell: Cell, run: int) -> SystemConfig:
        return self.base.with_(M=cell.M, C=cell.C, pmax_dbm=cell.pmax_dbm,
                               mode=cell.mode.upper(), seed=realization_seed(self.seed, run))

    def options(self, scheduler: str | None = None) -> SolveOptions:
        return SolveOptions(max_outer_iters=self.max_iters, rel_tol=self.tol,
                            scheduler=scheduler or self.scheduler)


def realization_seed(master: int, run: int) -> int:
    return int(master) ^ int(run)


@dataclass
class ResultRow:
    cell: str
    M: int
    C: int
    pmax_dbm: float
    mode: str
    mean_wsr_bps_hz: float
    std_wsr: float
    mean_iters: float
    bytes_per_iter: float
    du_ops_max: float
    total_ops: float
    wall_seq_ms: float | None
    wall_par_ms: float | None
    # not serialized
    wsr: list[float] = field(default_factory=list, repr=False)
    converged: list[bool] = field(default_factory=list, repr=False)
    phase_du_ops: dict[str, float] = field(default_factory=dict, repr=False)
    failures: list[dict] = field(default_factory=list, repr=False)

    def record(self) -> dict:
        return {k: getattr(self, k) for k in RESULT_FIELDS}


def _phase_du_ops(result: SolveResult) -> dict[str, float]:
    """Busiest DU's op count per phase, per outer iteration."""
    n = max(result.iterations, 1)
    return {phase: float(ops.max()) / n for phase, ops in result.transcript.du_ops.items()}


def _write_trace(path: Path, result: SolveResult) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        values = [result.initial_wsr] + list(result.wsr_trace)
        for i, v in enumerate(values):
            fh.write(json.dumps({"iteration": i, "wsr_bps_hz": v}) + "\n")


def _write_transcript(path: Path, result: SolveResult) -> None:
    """Message records of the first outer iteration (the steady-state schedule)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in result.transcript.records():
            if rec["iteration"] == 1:
                fh.write(json.dumps(rec) + "\n")


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else float("nan")


def run_cell(spec: ExperimentSpec, cell: Cell) -> ResultRow:
    runs: list[SolveResult] = []
    failures = []
    for s in range(spec.realizations):
        try:
            result = run_bca(build_scenario(spec.config_for(cell, s)), spec.options())
        except Exception as exc:  # recorded, the cell goes on
            log.error("cell %s run %d failed: %s", cell.id, s, exc)
            failures.append({"cell": cell.id, "run": s, "error": type(exc).__name__,
                             "message": str(exc)})
            continue
        runs.append(result)
        if spec.out_dir is not None:
            _write_trace(spec.out_dir / "traces" / cell.id / f"{s}.jsonl", result)
            if len(runs) == 1:
                _write_transcript(spec.out_dir / "transcript" / f"{cell.id}.jsonl", result)

    wsr = [r.final_wsr for r in runs]
    walls = {"seq": None, "par": None}
    if runs:
        walls[spec.scheduler] = 1e3 * _mean([r.wall_seconds for r in runs])
    if spec.cost_report and runs:
        other = "par" if spec.scheduler == "seq" else "seq"
        try:
            first = next(s for s in range(spec.realizations)
                         if s not in {f["run"] for f in failures})
            rerun = run_bca(build_scenario(spec.config_for(cell, first)), spec.options(other))
            walls[other] = 1e3 * rerun.wall_seconds
            walls[spec.scheduler] = 1e3 * runs[0].wall_seconds
        except Exception as exc:
            failures.append({"cell": cell.id, "run": "wall-rerun", "error": type(exc).__name__,
                             "message": str(exc)})
    phase_ops: dict[str, float] = {}
    for r in runs:
        for phase, v in _phase_du_ops(r).items():
            phase_ops[phase] = phase_ops.get(phase, 0.0) + v / len(runs)
    return ResultRow(
        cell=cell.id, M=cell.M, C=cell.C, pmax_dbm=cell.pmax_dbm, mode=cell.mode.upper(),
        mean_wsr_bps_hz=_mean(wsr),
        std_wsr=float(np.std(wsr)) if wsr else float("nan"),
        mean_iters=_mean([r.iterations for r in runs]),
        bytes_per_iter=_mean([r.bytes_per_iteration() for r in runs]),
        du_ops_max=_mean([r.ops_per_iteration()["du_max"] for r in runs]),
        total_ops=_mean([r.ops_per_iteration()["total"] for r in runs]),
        wall_seq_ms=walls["seq"],
        wall_par_ms=walls["par"],
        wsr=wsr,
        converged=[r.converged for r in runs],
        phase_du_ops=phase_ops,
        failures=failures,
    )


def write_results(path: Path, rows: list[ResultRow]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                             for k, v in row.record().items()})


def read_trace(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def run_experiment(spec: ExperimentSpec) -> list[ResultRow]:
    spec.validate()
    rows = [run_cell(spec, cell) for cell in spec.cells]
    if spec.out_dir is not None:
        out = Path(spec.out_dir)
        write_results(out / "results.csv", rows)
        failures = [f for row in rows for f in row.failures]
        if failures:
            with open(out / "errors.jsonl", "w") as fh:
                for f in failures:
                    fh.write(json.dumps(f) + "\n")
        if spec.emit_convergence:
            (out / "convergence.json").write_text(json.dumps(convergence_summary(rows), indent=2))
        if spec.cost_report:
            (out / "cost_report.json").write_text(json.dumps(cost_report(rows), indent=2))
    return rows


def convergence_summary(rows: list[ResultRow]) -> dict:
    return {
        row.cell: {
            "runs": len(row.converged),
            "converged_fraction": _mean(row.converged),
            "mean_iters": row.mean_iters,
        }
        for row in rows
    }


def _baseline(rows: list[ResultRow], row: ResultRow) -> ResultRow | None:
    for other in rows:
        if (other.C == 1 and other.M == row.M and other.mode == row.mode
                and other.pmax_dbm == row.pmax_dbm):
            return other
    return None


def cost_report(rows: list[ResultRow]) -> dict:
    """Per-cell op-count scaling against the matching C=1 cell and wall-time ratios."""
    cells = {}
    for row in rows:
        entry = {
            "M": row.M,
            "C": row.C,
            "mode": row.mode,
            "du_ops_max_per_iter": row.du_ops_max,
            "total_ops_per_iter": row.total_ops,
            "phase_du_ops_per_iter": dict(row.phase_du_ops),
            "position_phase_du_ops": row.phase_du_ops.get("tx", 0.0),
            "bytes_per_iter": row.bytes_per_iter,
            "wall_seq_ms": row.wall_seq_ms,
            "wall_par_ms": row.wall_par_ms,
            "seq_over_par": (row.wall_seq_ms / row.wall_par_ms
                             if row.wall_seq_ms and row.wall_par_ms else None),
        }
        base = _baseline(rows, row)
        if base is not None and base.du_ops_max > 0:
            entry["du_ops_ratio_vs_C1"] = row.du_ops_max / base.du_ops_max
            entry["expected_ratio"] = 1.0 / row.C
            entry["phase_ratio_vs_C1"] = {
                p: v / base.phase_du_ops[p]
                for p, v in row.phase_du_ops.items()
                if base.phase_du_ops.get(p, 0) > 0
            }
        cells[row.cell] = {k: (None if isinstance(v, float) and math.isnan(v) else v)
                           for k, v in entry.items()}
    return {"note": WALL_NOTE, "cells": cells}
