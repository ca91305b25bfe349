"""Per-unit state: what each DU owns and what the CU keeps."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import frm, rx_frm
from .fabric import OpMeter, PhaseError, Topology
from .scenario import Scenario


@dataclass
class DuState:
    """Everything DU ``index`` holds: its antenna block, beamformer rows and local FRMs."""

    index: int
    T: np.ndarray  # (Mc, 3) current positions
    lower: np.ndarray  # (Mc, 3)
    upper: np.ndarray
    W: np.ndarray  # (K, Mc, d) current iterate
    W_prev: np.ndarray  # (K, Mc, d) iterate before that
    tx_dirs: np.ndarray  # (K, Lt, 3)
    wavelength: float
    alpha: np.ndarray  # (K,)
    pmax: float
    G: np.ndarray = field(default=None)  # (K, Lt, Mc) transmit FRM at T
    inbox: dict = field(default_factory=dict)
    scratch: dict = field(default_factory=dict)
    meter: OpMeter = field(default_factory=OpMeter)

    def __post_init__(self):
        if self.G is None:
            self.refresh_frm()

    def refresh_frm(self) -> None:
        self.G = frm(self.T, self.tx_dirs, self.wavelength)
        self.meter.add(self.G.size * 3)

    def received(self, tag: str):
        try:
            return self.inbox[tag]
        except KeyError:
            raise PhaseError(f"DU {self.index}: no broadcast {tag!r} received") from None


@dataclass
class CuState:
    """Receive positions, auxiliary variables and the M-independent aggregates."""

    R: np.ndarray  # (K, N, 3)
    rx_lower: np.ndarray
    rx_upper: np.ndarray
    rx_dirs: np.ndarray  # (K, Lr, 3)
    prm: np.ndarray  # (K, Lr, Lt)
    alpha: np.ndarray
    noise: float
    pmax: float
    wavelength: float
    d: int
    F: np.ndarray = field(default=None)  # (K, Lr, N)
    gamma: np.ndarray = field(default=None)  # (K, d, d)
    phi: np.ndarray = field(default=None)  # (K, N, d)
    gtilde: np.ndarray | None = None  # (K, K, Lt, d), sum_c G_k^c W_j^c
    gtilde_valid: bool = False

    def __post_init__(self):
        K, N = self.R.shape[:2]
        if self.F is None:
            self.refresh_frm()
        if self.gamma is None:
            self.gamma = np.zeros((K, self.d, self.d), dtype=complex)
        if self.phi is None:
            self.phi = np.zeros((K, N, self.d), dtype=complex)

    @property
    def K(self) -> int:
        return self.R.shape[0]

    @property
    def N(self) -> int:
        return self.R.shape[1]

    def refresh_frm(self) -> None:
        self.F = rx_frm(self.R, self.rx_dirs, self.wavelength)


def partition(scenario: Scenario, C: int | None = None) -> tuple[Topology, list[DuState], CuState]:
    """Split a scenario's transmit side into ``C`` contiguous antenna blocks."""
    cfg = scenario.config
    topo = Topology(cfg.M, cfg.C if C is None else C)
    dus = []
    for c in range(topo.C):
        rows = topo.rows(c)
        W = scenario.W0[:, rows, :].copy()
        dus.append(DuState(
            index=c,
            T=scenario.T0[rows].copy(),
            lower=scenario.regions.tx_lower[rows].copy(),
            upper=scenario.regions.tx_upper[rows].copy(),
            W=W,
            W_prev=W.copy(),
            tx_dirs=scenario.paths.tx_dirs,
            wavelength=scenario.wavelength,
            alpha=scenario.alpha,
            pmax=scenario.pmax,
        ))
        dus[-1].meter.count = 0
    cu = CuState(
        R=scenario.R0.copy(),
        rx_lower=scenario.regions.rx_lower,
        rx_upper=scenario.regions.rx_upper,
        rx_dirs=scenario.paths.rx_dirs,
        prm=scenario.paths.prm,
        alpha=scenario.alpha,
        noise=scenario.noise,
        pmax=scenario.pmax,
        wavelength=scenario.wavelength,
        d=cfg.d,
    )
    return topo, dus, cu


def allowed_dims(scenario: Scenario) -> set[int]:
    cfg = scenario.config
    return {cfg.K, cfg.N, cfg.d, cfg.L_tx, cfg.L_rx}


def gtilde_operands(du: DuState):
    """Operands whose Mul gives ``sum_c G_k^c W_j^c`` for every (k, j)."""
    A = np.conj(np.swapaxes(du.G, -1, -2))[:, None]  # (K, 1, Mc, Lt)
    return A, du.W[None]  # (1, K, Mc, d)


def ensure_gtilde(fabric, cu: CuState, tag: str) -> np.ndarray:
    """Aggregate ``gtilde`` at the CU unless the cached copy is still current."""
    if not cu.gtilde_valid:
        cu.gtilde = fabric.mul(tag, gtilde_operands)
        cu.gtilde_valid = True
    return cu.gtilde
