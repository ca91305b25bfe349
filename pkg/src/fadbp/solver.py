"""Block-coordinate ascent driver: (Gamma, Phi) -> W -> T -> R until the WSR settles."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import objective
from .beamformer import update_w_round
from .fabric import Fabric, Transcript
from .position import update_r_round, update_t_round
from .scenario import Scenario
from .state import CuState, allowed_dims, ensure_gtilde, partition

log = logging.getLogger(__name__)

EPS = 1e-30


@dataclass(frozen=True)
class SolveOptions:
    max_outer_iters: int = 200
    rel_tol: float = 1e-4
    inner_mm_iters: int = 5  # transmit side, per outer iteration
    inner_mm_iters_rx: int = 5  # per user, per outer iteration
    mode: str | None = None  # None -> the scenario's mode
    clusters: int | None = None  # None -> the scenario's C
    extrapolation: bool = True
    scheduler: str = "seq"
    refresh_gtilde: bool = True
    local_rownorm: bool = False

    def __post_init__(self):
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.mode is not None and self.mode.upper() not in ("FPA", "TRFA"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class SolveResult:
    wsr_trace: list[float]  # bps/Hz after each outer iteration
    initial_wsr: float
    converged: bool
    iterations: int
    W: np.ndarray  # (K, M, d)
    T: np.ndarray  # (M, 3)
    R: np.ndarray  # (K, N, 3)
    gamma: np.ndarray
    phi: np.ndarray
    transcript: Transcript
    wall_seconds: float
    scheduler: str
    skipped_w_updates: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def final_wsr(self) -> float:
        return self.wsr_trace[-1]

    def bytes_per_iteration(self) -> float:
        per = self.transcript.bytes_per_iteration()
        steady = [v for i, v in per.items() if i >= 1]
        return float(np.mean(steady)) if steady else 0.0

    def ops_per_iteration(self) -> dict[str, float]:
        """Mean per-iteration op counts: busiest DU and grand total (DUs + CU)."""
        tr = self.transcript
        n = max(self.iterations, 1)
        return {"du_max": tr.max_du_ops() / n, "total": tr.total_ops() / n}


def check_convergence(trace, rel_tol: float) -> bool:
    if len(trace) < 2:
        return False
    cur, prev = trace[-1], trace[-2]
    return abs(cur - prev) / max(abs(cur), EPS) < rel_tol


def _evaluate(fabric: Fabric, cu: CuState) -> float:
    with fabric.phase("wsr"):
        gt = ensure_gtilde(fabric, cu, "wsr/G~")
        links = objective.effective_links(gt, cu.F, cu.prm)
        return float(objective.to_bits(objective.wsr(objective.user_rates(links, cu.noise), cu.alpha)))


def _update_auxiliary(fabric: Fabric, cu: CuState) -> None:
    with fabric.phase("aux"):
        gt = ensure_gtilde(fabric, cu, "aux/G~")
        links = objective.effective_links(gt, cu.F, cu.prm)
        cu.gamma, cu.phi = objective.update_auxiliary(links, cu.noise, cu.alpha)


def run_bca(scenario: Scenario, options: SolveOptions = SolveOptions()) -> SolveResult:
    mode = (options.mode or scenario.mode).upper()
    topo, dus, cu = partition(scenario, options.clusters)
    t0 = time.perf_counter()
    with Fabric(topo, dus, allowed_dims(scenario), options.scheduler) as fabric:
        initial = _evaluate(fabric, cu)
        trace: list[float] = []
        converged = False
        skipped = 0
        for i in range(1, options.max_outer_iters + 1):
            fabric.iteration = i
            _update_auxiliary(fabric, cu)
            info = update_w_round(fabric, cu, i, options.extrapolation)
            skipped += info["skipped"]
            if mode == "TRFA":
                update_t_round(fabric, cu, options.inner_mm_iters, options.refresh_gtilde,
                               options.local_rownorm)
                update_r_round(fabric, cu, options.inner_mm_iters_rx)
            trace.append(_evaluate(fabric, cu))
            if not np.isfinite(trace[-1]):
                raise FloatingPointError(f"non-finite WSR at iteration {i}")
            if check_convergence([initial] + trace, options.rel_tol):
                converged = True
                break
        snaps = fabric.snapshot()
        wall = time.perf_counter() - t0
        scheduler = fabric.scheduler
        transcript = fabric.transcript
    return SolveResult(
        wsr_trace=trace,
        initial_wsr=initial,
        converged=converged,
        iterations=len(trace),
        W=np.concatenate([s.W for s in snaps], axis=1),
        T=np.concatenate([s.T for s in snaps], axis=0),
        R=cu.R.copy(),
        gamma=cu.gamma,
        phi=cu.phi,
        transcript=transcript,
        wall_seconds=wall,
        scheduler=scheduler,
        skipped_w_updates=skipped,
    )
