"""Weighted sum rate, its quadratic-transform surrogate and the auxiliary-variable updates.

Everything here runs at the CU on M-independent arrays:

* ``gtilde[k, j] = sum_c G_k^c W_j^c``  (K, K, Lt, d)
* ``links[k, j] = F_k^H Sigma_k gtilde[k, j]``  (K, K, N, d), the effective channel
  from user j's beamformer to user k's antennas.

Rates are in nats; divide by ``ln 2`` (see :func:`to_bits`) for bps/Hz.
"""
from __future__ import annotations

import math

import numpy as np

LN2 = math.log(2.0)


def to_bits(nats):
    return np.asarray(nats) / LN2


def hermitian(A):
    return (A + np.conj(np.swapaxes(A, -1, -2))) / 2


def effective_links(gtilde, F, prm):
    """``F_k^H Sigma_k gtilde[k, j]`` for all pairs."""
    left = np.conj(np.swapaxes(F, -1, -2)) @ prm  # (K, N, Lt)
    return left[:, None] @ gtilde


def interference_matrix(k: int, links, noise: float):
    """Interference-plus-noise covariance seen by user ``k``."""
    if noise <= 0:
        raise ValueError("noise power must be positive")
    K, _, N, _ = links.shape
    Mk = noise * np.eye(N, dtype=complex)
    for j in range(K):
        if j != k:
            Mk += links[k, j] @ links[k, j].conj().T
    return hermitian(Mk)


def user_rate(k: int, links, Mk):
    """``ln det(I + H^H M^-1 H)`` with ``H = links[k, k]``."""
    H = links[k, k]
    inner = np.eye(H.shape[1]) + H.conj().T @ np.linalg.solve(Mk, H)
    sign, logdet = np.linalg.slogdet(hermitian(inner))
    if sign.real <= 0:
        raise np.linalg.LinAlgError("rate matrix is not positive definite")
    return float(logdet)


def user_rates(links, noise: float) -> np.ndarray:
    K = links.shape[0]
    return np.array([user_rate(k, links, interference_matrix(k, links, noise)) for k in range(K)])


def wsr(rates, alpha) -> float:
    return float(np.dot(alpha, rates))


def f_quad(links, gamma, phi, alpha, noise: float) -> float:
    """Quadratic-transform surrogate of the WSR (natural log).

    Equals the WSR when ``gamma`` and ``phi`` come from :func:`update_auxiliary`
    on the same ``links``.
    """
    K, _, N, d = links.shape
    eye_d = np.eye(d)
    total = 0.0
    for k in range(K):
        Hkk = links[k, k]
        B = noise * np.eye(N, dtype=complex)
        for j in range(K):
            B += links[k, j] @ links[k, j].conj().T
        P = phi[k]
        cross = Hkk.conj().T @ P
        inner = np.sqrt(alpha[k]) * (cross + cross.conj().T) - P.conj().T @ B @ P
        ig = eye_d + gamma[k]
        _, logdet = np.linalg.slogdet(ig)
        total += alpha[k] * (logdet - np.trace(gamma[k]).real) + np.trace(ig @ inner).real
    return float(total)


def update_gamma(k: int, links, noise: float):
    Hkk = links[k, k]
    Mk = interference_matrix(k, links, noise)
    return hermitian(Hkk.conj().T @ np.linalg.solve(Mk, Hkk))


def update_phi(k: int, links, noise: float, alpha):
    Hkk = links[k, k]
    Mk = interference_matrix(k, links, noise)
    return np.sqrt(alpha[k]) * np.linalg.solve(hermitian(Mk + Hkk @ Hkk.conj().T), Hkk)


def update_auxiliary(links, noise: float, alpha):
    """Closed-form maximizers of ``f_quad`` over every ``Gamma_k`` and ``Phi_k``."""
    K = links.shape[0]
    gamma = np.stack([update_gamma(k, links, noise) for k in range(K)])
    phi = np.stack([update_phi(k, links, noise, alpha) for k in range(K)])
    return gamma, phi
