"""Problem instances: configuration, path statistics, movable regions and initial variables."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .channel import steering_vector

SPEED_OF_LIGHT = 299_792_458.0

MODES = ("FPA", "TRFA")


class ConfigError(ValueError):
    """Raised for configurations that violate the system invariants."""


def dbm_to_watts(level):
    """Convert a power level in dBm to watts."""
    return 10.0 ** ((level - 30.0) / 10.0)


def db_to_linear(level):
    return 10.0 ** (level / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Flat view of the experiment configuration (defaults are the reference system settings)."""

    K: int = 6
    N: int = 4
    M: int = 64
    C: int = 4
    d: int = 4
    fc_hz: float = 28e9
    pmax_dbm: float = 20.0
    noise_dbm: float = -80.0
    S: int = 20
    seed: int = 0
    mode: str = "TRFA"
    L_tx: int = 3
    L_rx: int = 3
    pathloss_exp: float = 3.67
    T0_db: float = -61.4
    d_min_m: float = 20.0
    d_max_m: float = 100.0
    # None -> one wavelength / half a wavelength
    region_side_m: float | None = None
    region_gap_m: float | None = None
    weights: tuple[float, ...] | None = None

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.fc_hz

    @property
    def side(self) -> float:
        return self.wavelength if self.region_side_m is None else float(self.region_side_m)

    @property
    def gap(self) -> float:
        return self.wavelength / 2 if self.region_gap_m is None else float(self.region_gap_m)

    @property
    def alpha(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.K)
        return np.asarray(self.weights, dtype=float)

    def validate(self) -> "SystemConfig":
        for name in ("K", "N", "M", "C", "d", "S", "L_tx", "L_rx"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.M % self.C:
            raise ConfigError(f"C={self.C} does not divide M={self.M}")
        if self.d > min(self.M, self.N):
            raise ConfigError(f"d={self.d} exceeds min(M, N)={min(self.M, self.N)}")
        if self.mode.upper() not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.fc_hz <= 0:
            raise ConfigError("carrier frequency must be positive")
        if self.side <= 0:
            raise ConfigError("region side must be positive")
        if self.gap < 0:
            raise ConfigError("region gap must be non-negative")
        if not 0 < self.d_min_m <= self.d_max_m:
            raise ConfigError("need 0 < d_min <= d_max")
        alpha = self.alpha
        if alpha.shape != (self.K,) or np.any(alpha <= 0):
            raise ConfigError("weights must be K positive numbers")
        return self

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "SystemConfig":
        """Build from the nested ``system`` / ``channel`` / ``regions`` / ``weights`` layout."""
        known = {
            "system": {"K", "N", "M", "C", "d", "fc_hz", "pmax_dbm", "noise_dbm", "S", "seed", "mode"},
            "channel": {"L_tx", "L_rx", "pathloss_exp", "T0_db", "d_min_m", "d_max_m"},
            "regions": {"side_m", "gap_m"},
        }
        kwargs: dict[str, Any] = {}
        for section, keys in known.items():
            block = data.get(section) or {}
            unknown = set(block) - keys
            if unknown:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
            for key, value in block.items():
                name = {"side_m": "region_side_m", "gap_m": "region_gap_m"}.get(key, key)
                kwargs[name] = value
        extra = set(data) - set(known) - {"weights"}
        if extra:
            raise ConfigError(f"unknown sections: {sorted(extra)}")
        if data.get("weights") is not None:
            kwargs["weights"] = tuple(float(w) for w in data["weights"])
        types = {f.name: f.type for f in fields(cls)}
        for name, value in list(kwargs.items()):
            if value is None:
                continue
            if types[name] == "int":
                kwargs[name] = int(value)
            elif types[name].startswith("float"):
                kwargs[name] = float(value)
        if "mode" in kwargs:
            kwargs["mode"] = str(kwargs["mode"]).upper()
        return cls(**kwargs).validate()

    def to_mapping(self) -> dict[str, Any]:
        flat = asdict(self)
        return {
            "system": {k: flat[k] for k in ("K", "N", "M", "C", "d", "fc_hz", "pmax_dbm",
                                            "noise_dbm", "S", "seed", "mode")},
            "channel": {k: flat[k] for k in ("L_tx", "L_rx", "pathloss_exp", "T0_db",
                                             "d_min_m", "d_max_m")},
            "regions": {"side_m": flat["region_side_m"], "gap_m": flat["region_gap_m"]},
            "weights": list(flat["weights"]) if flat["weights"] is not None else None,
        }


def load_config(path: str | Path) -> SystemConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return SystemConfig.from_mapping(data)


@dataclass(frozen=True)
class PathSet:
    """Angles (radians), unit directions, path-response matrices and user distances."""

    tx_angles: np.ndarray  # (K, L_tx, 2) elevation, azimuth
    rx_angles: np.ndarray  # (K, L_rx, 2)
    tx_dirs: np.ndarray  # (K, L_tx, 3)
    rx_dirs: np.ndarray  # (K, L_rx, 3)
    prm: np.ndarray  # (K, L_rx, L_tx) complex
    distances: np.ndarray  # (K,)


@dataclass(frozen=True)
class Regions:
    """Axis-aligned movable cuboids, one per antenna."""

    tx_lower: np.ndarray  # (M, 3)
    tx_upper: np.ndarray
    rx_lower: np.ndarray  # (K, N, 3)
    rx_upper: np.ndarray

    def contains(self, T: np.ndarray, R: np.ndarray) -> bool:
        return bool(np.all(T >= self.tx_lower) and np.all(T <= self.tx_upper)
                    and np.all(R >= self.rx_lower) and np.all(R <= self.rx_upper))


@dataclass(frozen=True)
class Scenario:
    config: SystemConfig
    wavelength: float
    pmax: float  # watts
    noise: float  # watts, shared by all users
    alpha: np.ndarray
    paths: PathSet
    regions: Regions
    T0: np.ndarray  # (M, 3)
    R0: np.ndarray  # (K, N, 3)
    W0: np.ndarray  # (K, M, d) complex

    @property
    def mode(self) -> str:
        return self.config.mode.upper()

    @property
    def dims(self) -> tuple[int, int, int, int]:
        c = self.config
        return c.K, c.N, c.M, c.d


def _grid(count: int, pitch: float) -> np.ndarray:
    """Planar rectangular grid in the x-y plane, filled along x first."""
    rows = max(r for r in range(1, math.isqrt(count) + 1) if count % r == 0)
    cols = count // rows
    idx = np.arange(count)
    pts = np.zeros((count, 3))
    pts[:, 0] = (idx % cols) * pitch
    pts[:, 1] = (idx // cols) * pitch
    return pts


def fpa_positions(config: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fixed half-wavelength grids at the BS and at every user."""
    pitch = config.wavelength / 2
    T = _grid(config.M, pitch)
    R = np.broadcast_to(_grid(config.N, pitch), (config.K, config.N, 3)).copy()
    return T, R


def cuboids_around(centers: np.ndarray, side: float) -> tuple[np.ndarray, np.ndarray]:
    half = side / 2
    return centers - half, centers + half


def grid_regions(config: SystemConfig) -> Regions:
    pitch = config.side + config.gap
    tx_lo, tx_hi = cuboids_around(_grid(config.M, pitch), config.side)
    rx_centers = np.broadcast_to(_grid(config.N, pitch), (config.K, config.N, 3))
    rx_lo, rx_hi = cuboids_around(rx_centers, config.side)
    return Regions(tx_lo, tx_hi, rx_lo.copy(), rx_hi.copy())


def min_separation(lower: np.ndarray, upper: np.ndarray) -> float:
    """Smallest l-infinity gap between any two of the given cuboids (negative if overlapping)."""
    lo = lower.reshape(-1, 3)
    hi = upper.reshape(-1, 3)
    gaps = np.maximum(lo[:, None, :] - hi[None, :, :], lo[None, :, :] - hi[:, None, :]).max(axis=-1)
    np.fill_diagonal(gaps, np.inf)
    return float(gaps.min()) if len(lo) > 1 else math.inf


def draw_paths(config: SystemConfig, rng: np.random.Generator) -> PathSet:
    K, Lt, Lr = config.K, config.L_tx, config.L_rx
    d2 = rng.uniform(config.d_min_m ** 2, config.d_max_m ** 2, size=K)
    distances = np.sqrt(d2)
    tx_angles = rng.uniform(0.0, np.pi, size=(K, Lt, 2))
    rx_angles = rng.uniform(0.0, np.pi, size=(K, Lr, 2))
    pathloss = db_to_linear(config.T0_db) * distances ** (-config.pathloss_exp)
    # diagonal PRM with CN(0, kappa/L) entries; L = number of paths on the diagonal
    ndiag = min(Lt, Lr)
    scale = np.sqrt(pathloss / ndiag / 2)[:, None]
    diag = scale * (rng.standard_normal((K, ndiag)) + 1j * rng.standard_normal((K, ndiag)))
    prm = np.zeros((K, Lr, Lt), dtype=complex)
    idx = np.arange(ndiag)
    prm[:, idx, idx] = diag
    return PathSet(
        tx_angles=tx_angles,
        rx_angles=rx_angles,
        tx_dirs=steering_vector(tx_angles[..., 0], tx_angles[..., 1]),
        rx_dirs=steering_vector(rx_angles[..., 0], rx_angles[..., 1]),
        prm=prm,
        distances=distances,
    )


def initial_beamformers(config: SystemConfig, pmax: float, rng: np.random.Generator) -> np.ndarray:
    shape = (config.K, config.M, config.d)
    W = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return W * np.sqrt(pmax / np.sum(np.abs(W) ** 2))


def build_scenario(config: SystemConfig) -> Scenario:
    """Draw one seeded realization.

    The random stream does not depend on ``mode`` or ``C``, so FPA/TRFA and
    centralized/decentralized runs with the same seed share channels and
    initial beamformers.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    paths = draw_paths(config, rng)
    pmax = dbm_to_watts(config.pmax_dbm)
    W0 = initial_beamformers(config, pmax, rng)
    if config.mode.upper() == "FPA":
        T0, R0 = fpa_positions(config)
        # degenerate regions pin the antennas
        regions = Regions(T0.copy(), T0.copy(), R0.copy(), R0.copy())
    else:
        regions = grid_regions(config)
        T0 = (regions.tx_lower + regions.tx_upper) / 2
        R0 = (regions.rx_lower + regions.rx_upper) / 2
    return Scenario(
        config=config,
        wavelength=config.wavelength,
        pmax=pmax,
        noise=dbm_to_watts(config.noise_dbm),
        alpha=config.alpha,
        paths=paths,
        regions=regions,
        T0=T0,
        R0=R0,
        W0=W0,
    )


def recentre(scenario: Scenario, T: np.ndarray, R: np.ndarray, side: float) -> Scenario:
    """Copy of ``scenario`` in TRFA mode with cuboids of ``side`` centred on the given positions."""
    tx_lo, tx_hi = cuboids_around(T, side)
    rx_lo, rx_hi = cuboids_around(R, side)
    cfg = scenario.config.with_(mode="TRFA", region_side_m=side)
    return replace(scenario, config=cfg, regions=Regions(tx_lo, tx_hi, rx_lo, rx_hi),
                   T0=T.copy(), R0=R.copy())
