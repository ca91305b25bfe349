"""Inverse-free beamformer update executed across the DUs.

The unconstrained step is a gradient move from the extrapolated point
``Upsilon`` with step ``1/eta``, where ``eta`` is the Frobenius norm of the
quadratic-term matrix ``A = sum_k H_k^H Phi_k (I + Gamma_k) Phi_k^H H_k``;
``eta >= lambda_max(A)`` makes the step an ascent step of the surrogate. The
result is then scaled back onto the power ball. ``A`` itself is M x M and is
never formed: ``eta`` comes from the d x d blocks ``P_k^H P_j`` and the step
from L x d and d x d factors broadcast by the CU.
"""
from __future__ import annotations

import logging

import numpy as np

from .objective import hermitian
from .state import CuState, DuState

log = logging.getLogger(__name__)

ETA_FLOOR = 1e-30


def extrapolation_weight(i: int) -> float:
    """Nesterov weight for outer iteration ``i`` (1-based)."""
    if i < 1:
        raise ValueError("iteration index starts at 1")
    return max((i - 2) / (i + 1), 0.0)


def extrapolate(W, W_prev, nu: float):
    return W + nu * (W - W_prev)


def power_scale(PQ: float, pmax: float) -> float:
    if PQ <= 0:
        return 1.0
    return min(np.sqrt(pmax / PQ), 1.0)


def power_projection(Q_blocks, pmax: float):
    """Scale a list of per-DU Q blocks jointly onto ``sum ||W||_F^2 <= pmax``."""
    PQ = sum(float(np.sum(np.abs(Q) ** 2)) for Q in Q_blocks)
    s = power_scale(PQ, pmax)
    return [Q * s for Q in Q_blocks]


def eta_from_blocks(Ptilde) -> float:
    """``sqrt(sum_{k,j} ||P_k^H P_j||_F^2)`` from the aggregated (K, K, d, d) blocks."""
    return float(np.sqrt(np.sum(np.abs(Ptilde) ** 2)))


# DU-local steps ---------------------------------------------------------------


def _p_operands(du: DuState):
    U = du.received("beam/P-factor")  # (K, Lt, d)
    P = du.meter.einsum("klm,kld->kmd", np.conj(du.G), U)
    return P[:, None], P[None]


def _upsilon_operands(du: DuState, nu: float):
    Y = extrapolate(du.W, du.W_prev, nu)
    du.scratch["Y"] = Y
    A = np.conj(np.swapaxes(du.G, -1, -2))[:, None]  # (K, 1, Mc, Lt)
    return A, Y[None]


def _q_block(du: DuState) -> float:
    eta = du.received("beam/eta")
    S = du.received("beam/S")  # (K, Lt, d)
    V = du.received("beam/PhiY")  # (K, K, d, d), [j, k] = Phi_j^H H_j Upsilon_k
    GS = du.meter.einsum("klm,kld->kmd", np.conj(du.G), S)
    quad = du.meter.einsum("jmd,jkde->kme", GS, V)
    Q = du.scratch["Y"] + (np.sqrt(du.alpha)[:, None, None] * GS - quad) / eta
    du.scratch["Q"] = Q
    return float(np.sum(Q.real ** 2 + Q.imag ** 2))


def _apply_scale(du: DuState) -> None:
    s = power_scale(du.received("beam/PQ"), du.pmax)
    du.W_prev = du.W
    du.W = du.scratch.pop("Q") * s
    du.scratch.pop("Y", None)


# CU orchestration ------------------------------------------------------------


def p_factor(cu: CuState) -> np.ndarray:
    """``Sigma_k^H F_k Phi_k Xi_k sqrt(Lambda_k)`` with ``Xi Lambda Xi^H = I + Gamma_k``."""
    d = cu.d
    lam, xi = np.linalg.eigh(hermitian(np.eye(d) + cu.gamma))
    root = xi * np.sqrt(np.clip(lam, 0.0, None))[:, None, :]
    return _sigma_h_f(cu) @ cu.phi @ root


def s_factor(cu: CuState) -> np.ndarray:
    """``Sigma_k^H F_k Phi_k (I + Gamma_k)``, shape (K, Lt, d)."""
    return _sigma_h_f(cu) @ cu.phi @ (np.eye(cu.d) + cu.gamma)


def _sigma_h_f(cu: CuState) -> np.ndarray:
    return np.conj(np.swapaxes(cu.prm, -1, -2)) @ cu.F  # (K, Lt, N)


def update_w_round(fabric, cu: CuState, iteration: int, extrapolation: bool = True) -> dict:
    """One decentralized beamformer update; needs fresh ``cu.gamma`` / ``cu.phi``.

    Returns diagnostics (``eta``, ``nu``, ``PQ``, ``skipped``).
    """
    with fabric.phase("beam"):
        fabric.broadcast("beam/P-factor", p_factor(cu))
        Ptilde = fabric.mul("beam/P~", _p_operands)
        eta = eta_from_blocks(Ptilde)
        fabric.cu_meter.add(Ptilde.size)
        if eta < ETA_FLOOR:
            log.warning("iteration %d: eta=%.3g, beamformer update skipped", iteration, eta)
            return {"eta": eta, "nu": 0.0, "PQ": float("nan"), "skipped": True}
        fabric.broadcast("beam/eta", eta)
        nu = extrapolation_weight(iteration) if extrapolation else 0.0
        Ut = fabric.mul("beam/Y~", _upsilon_operands, nu)  # [j, k] = sum_c G_j^c Upsilon_k^c
        S = s_factor(cu)
        left = np.conj(np.swapaxes(cu.F, -1, -2)) @ cu.prm  # (K, N, Lt)
        Ytilde = fabric.cu_meter.matmul(left[:, None], Ut)  # (K, K, N, d)
        V = fabric.cu_meter.matmul(np.conj(np.swapaxes(cu.phi, -1, -2))[:, None], Ytilde)
        fabric.broadcast("beam/S", S)
        fabric.broadcast("beam/PhiY", V)
        PQ = float(fabric.reduce("beam/trQ", _q_block, op="sum"))
        fabric.broadcast("beam/PQ", PQ)
        fabric.run(_apply_scale)
        cu.gtilde_valid = False
    return {"eta": eta, "nu": nu, "PQ": PQ, "skipped": False}
