"""Majorization-minimization updates of antenna positions.

For fixed beamformers and auxiliary variables, ``f_quad`` is maximized over
positions by repeatedly maximizing the concave quadratic minorizer

    h(x | x0) = f(x0) + grad f(x0) . (x - x0) - delta/2 ||x - x0||^2

whose maximizer over a cuboid is ``clip(x0 + grad/delta)``. ``delta`` is a
global bound on the Hessian's spectral norm assembled from M-independent
aggregates. Transmit positions are updated at the DUs, receive positions at
the CU (users decouple).

Gradients are written as ``-(4 pi / lambda) sum |D| sin(xi) dir`` where ``D``
is the derivative of ``f_quad`` w.r.t. the field-response entries. For the
receive side this carries the same leading minus sign as the transmit side;
central finite differences confirm it.
"""
from __future__ import annotations

import numpy as np

from .beamformer import s_factor
from .channel import frm
from .state import CuState, DuState, ensure_gtilde

DELTA_GUARD = 1e-18


def _kappa(wavelength: float) -> float:
    return 2 * np.pi / wavelength


def _curv_scale(wavelength: float) -> float:
    return 24 * np.pi ** 2 / wavelength ** 2


def e_factor(cu: CuState, S=None) -> np.ndarray:
    """``Sigma^H F Phi (I + Gamma) Phi^H F^H Sigma`` per user, (K, Lt, Lt)."""
    if S is None:
        S = s_factor(cu)
    right = np.conj(np.swapaxes(cu.phi, -1, -2)) @ np.conj(np.swapaxes(cu.F, -1, -2)) @ cu.prm
    return S @ right


# transmit side ---------------------------------------------------------------


def tx_gradient(T, G, W, S, E, gtilde, alpha, tx_dirs, wavelength, meter=None):
    """Gradient of ``f_quad`` w.r.t. one block of transmit positions.

    T (Mc, 3), G (K, Lt, Mc), W (K, Mc, d), S (K, Lt, d), E (K, Lt, Lt),
    gtilde (K, K, Lt, d). Returns (grad (Mc, 3), D (K, Mc, Lt)).
    """
    es = np.einsum if meter is None else meter.einsum
    kappa = _kappa(wavelength)
    lin = es("kmd,kld->kml", W, np.conj(S)) * np.sqrt(alpha)[:, None, None]
    X = es("jmd,kjld->kml", W, np.conj(gtilde))
    D = lin - es("kml,klp->kmp", X, E)
    xi = np.angle(D) + kappa * np.einsum("mx,klx->kml", T, tx_dirs)
    grad = -2 * kappa * es("kml,klx->mx", np.abs(D) * np.sin(xi), tx_dirs)
    return grad, D


def tx_curvature(W, Wtilde, rownorm_total, S, E, alpha, wavelength, meter=None):
    """Per-antenna curvature candidates for one block (max gives the DU's bid).

    ``rownorm_total[t]`` is the sum of beamformer row norms of user t over the
    antennas the bound is taken over (all M by default).
    """
    es = np.einsum if meter is None else meter.einsum
    K, Lt = S.shape[0], S.shape[1]
    rn = np.linalg.norm(W, axis=2)  # (K, Mc)
    a = rownorm_total @ rn  # sum_t ||w_tm|| * sum_j ||w_tj||
    WWt = es("tmd,tsde->sme", W, Wtilde)  # sum_t w_tm Wtilde_ts
    b = np.sum(WWt * np.conj(W), axis=(0, 2)).real
    spec = np.linalg.norm(E, ord=2, axis=(1, 2))  # (K,)
    c = np.linalg.norm(es("kmd,kld->kml", W, np.conj(S)), axis=2)  # (K, Mc)
    per_user = Lt * ((a + b)[None, :] * spec[:, None] + np.sqrt(alpha / Lt)[:, None] * c)
    return _curv_scale(wavelength) * per_user.sum(axis=0)


def _wtilde_operands(du: DuState):
    return du.W[:, None], du.W[None]


def _rownorm(du: DuState):
    return np.linalg.norm(du.W, axis=2).sum(axis=1)


def _tx_bid(du: DuState, local_rownorm: bool) -> float:
    S = du.received("tx/S")
    E = du.received("tx/E")
    gtilde = du.received("tx/G~")
    grad, _ = tx_gradient(du.T, du.G, du.W, S, E, gtilde, du.alpha, du.tx_dirs,
                          du.wavelength, du.meter)
    du.scratch["grad"] = grad
    if local_rownorm:
        totals = np.linalg.norm(du.W, axis=2).sum(axis=1)
    else:
        totals = du.received("tx/rownorm")
    delta = tx_curvature(du.W, du.received("tx/W~"), totals, S, E, du.alpha,
                         du.wavelength, du.meter)
    return float(delta.max())


def _tx_step(du: DuState) -> None:
    delta = du.received("tx/delta")
    grad = du.scratch.pop("grad")
    du.T = np.clip(du.T + grad / delta, du.lower, du.upper)
    du.refresh_frm()


def update_t_round(fabric, cu: CuState, inner_iters: int = 5, refresh: bool = True,
                   local_rownorm: bool = False) -> list[float]:
    """Decentralized MM update of every ``T^c``. Returns the delta used per inner step."""
    deltas = []
    with fabric.phase("tx"):
        S = s_factor(cu)
        fabric.broadcast("tx/S", S)
        fabric.broadcast("tx/E", e_factor(cu, S))
        fabric.broadcast("tx/W~", fabric.mul("tx/W~", _wtilde_operands))
        if not local_rownorm:
            fabric.broadcast("tx/rownorm", fabric.reduce("tx/rownorm", _rownorm, op="sum"))
        for inner in range(inner_iters):
            if refresh or inner == 0:
                fabric.broadcast("tx/G~", ensure_gtilde(fabric, cu, "tx/G~"))
            delta = float(fabric.reduce("tx/delta", _tx_bid, local_rownorm, op="max"))
            deltas.append(delta)
            if delta <= DELTA_GUARD:
                break
            fabric.broadcast("tx/delta", delta)
            fabric.run(_tx_step)
            cu.gtilde_valid = False
    return deltas


# receive side ----------------------------------------------------------------


def _rx_terms(phi_k, gamma_k, gtilde_row, k, prm_k, meter=None):
    mm = np.matmul if meter is None else meter.matmul
    d = gamma_k.shape[0]
    pg = mm(phi_k, np.eye(d) + gamma_k)  # (N, d)
    omega = mm(pg, phi_k.conj().T)  # (N, N)
    Y = mm(np.swapaxes(gtilde_row, 0, 1).reshape(gtilde_row.shape[1], -1),
           np.conj(np.swapaxes(gtilde_row, 0, 1).reshape(gtilde_row.shape[1], -1)).T)
    Z = mm(mm(prm_k, Y), prm_k.conj().T)  # sum_j Sigma Gt_kj Gt_kj^H Sigma^H, (Lr, Lr)
    lin = mm(mm(pg, gtilde_row[k].conj().T), prm_k.conj().T)  # (N, Lr)
    return omega, Z, lin


def rx_gradient(R_k, F_k, phi_k, gamma_k, gtilde_row, k, prm_k, alpha_k, rx_dirs_k, wavelength,
                meter=None):
    """Gradient of ``f_quad`` w.r.t. user ``k``'s receive positions, (N, 3).

    ``gtilde_row`` is ``gtilde[k]`` (K, Lt, d); ``F_k`` is (Lr, N).
    """
    mm = np.matmul if meter is None else meter.matmul
    kappa = _kappa(wavelength)
    omega, Z, lin = _rx_terms(phi_k, gamma_k, gtilde_row, k, prm_k, meter)
    D = np.sqrt(alpha_k) * lin - mm(mm(omega, F_k.conj().T), Z)
    xi = np.angle(D) + kappa * (R_k @ rx_dirs_k.T)
    return -2 * kappa * mm(np.abs(D) * np.sin(xi), rx_dirs_k)


def rx_curvature(phi_k, gamma_k, gtilde_row, k, prm_k, alpha_k, wavelength, meter=None) -> float:
    N = phi_k.shape[0]
    Lr = prm_k.shape[0]
    omega, Z, lin = _rx_terms(phi_k, gamma_k, gtilde_row, k, prm_k, meter)
    a = np.abs(omega).sum(axis=1) + np.sqrt(N) * np.linalg.norm(omega, axis=1)
    c = np.linalg.norm(lin, axis=1)
    per_antenna = Lr * (a * np.linalg.norm(Z, 2) + np.sqrt(alpha_k / Lr) * c)
    return float(_curv_scale(wavelength) * per_antenna.max())


def update_r_round(fabric, cu: CuState, inner_iters: int = 5) -> list[list[float]]:
    """MM update of every ``R_k`` at the CU. Needs ``gtilde`` at the current T and W."""
    with fabric.phase("rx"):
        gtilde = ensure_gtilde(fabric, cu, "rx/G~")
        deltas = []
        for k in range(cu.K):
            deltas.append(mm_step_rx(cu, k, gtilde, inner_iters, fabric.cu_meter))
    return deltas


def mm_step_rx(cu: CuState, k: int, gtilde, inner_iters: int, meter=None) -> list[float]:
    deltas = []
    R_k = cu.R[k]
    for _ in range(inner_iters):
        F_k = frm(R_k, cu.rx_dirs[k], cu.wavelength)
        delta = rx_curvature(cu.phi[k], cu.gamma[k], gtilde[k], k, cu.prm[k], cu.alpha[k],
                             cu.wavelength, meter)
        deltas.append(delta)
        if delta <= DELTA_GUARD:
            break
        grad = rx_gradient(R_k, F_k, cu.phi[k], cu.gamma[k], gtilde[k], k, cu.prm[k],
                           cu.alpha[k], cu.rx_dirs[k], cu.wavelength, meter)
        R_k = np.clip(R_k + grad / delta, cu.rx_lower[k], cu.rx_upper[k])
    cu.R[k] = R_k
    cu.F[k] = frm(R_k, cu.rx_dirs[k], cu.wavelength)
    return deltas
