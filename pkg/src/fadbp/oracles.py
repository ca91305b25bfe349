"""Reference computations for tests: dense, single-machine, slow on purpose.

Nothing here imports the production modules. Channels are rebuilt from
positions and path directions with full ``N x M`` matrices, the surrogate is
evaluated term by term, and derivatives come from central differences, so an
agreement with the decentralized code is a real cross-check.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class DenseSnapshot:
    """Full-array view of one iterate.

    T (M, 3), H (K, N, M), W (K, M, d), gamma (K, d, d), phi (K, N, d).
    """

    T: np.ndarray
    H: np.ndarray
    W: np.ndarray
    gamma: np.ndarray
    phi: np.ndarray


def field_response(positions, directions, wavelength):
    """``out[l, n] = exp(j 2 pi/lambda <directions[l], positions[n]>)``."""
    phase = 2 * np.pi / wavelength * (np.asarray(directions) @ np.asarray(positions).T)
    return np.cos(phase) + 1j * np.sin(phase)


def dense_channels(T, R, prm, tx_dirs, rx_dirs, wavelength):
    """Per-user ``F_k^H Sigma_k G_k`` over the whole array, (K, N, M)."""
    K = prm.shape[0]
    out = []
    for k in range(K):
        G = field_response(T, tx_dirs[k], wavelength)
        F = field_response(R[k], rx_dirs[k], wavelength)
        out.append(F.conj().T @ prm[k] @ G)
    return np.array(out)


def dense_snapshot(T, R, W, prm, tx_dirs, rx_dirs, wavelength, gamma=None, phi=None):
    H = dense_channels(T, R, prm, tx_dirs, rx_dirs, wavelength)
    K, N, _ = H.shape
    d = W.shape[2]
    if gamma is None:
        gamma = np.zeros((K, d, d), dtype=complex)
    if phi is None:
        phi = np.zeros((K, N, d), dtype=complex)
    return DenseSnapshot(np.asarray(T, float), H, np.asarray(W, complex), gamma, phi)


def _covariance(H, W, k, noise, skip=None):
    N = H.shape[1]
    out = noise * np.eye(N, dtype=complex)
    for j in range(W.shape[0]):
        if j == skip:
            continue
        link = H[k] @ W[j]
        out = out + link @ link.conj().T
    return out


def dense_f_quad(snap: DenseSnapshot, alpha, noise: float) -> float:
    """Matrix quadratic-transform surrogate in nats, written out in full."""
    H, W, gamma, phi = snap.H, snap.W, snap.gamma, snap.phi
    total = 0.0
    for k in range(H.shape[0]):
        own = H[k] @ W[k]
        d = own.shape[1]
        ig = np.eye(d) + gamma[k]
        logdet = np.log(np.linalg.det(ig).real)
        B = _covariance(H, W, k, noise)
        term = (np.sqrt(alpha[k]) * (own.conj().T @ phi[k] + phi[k].conj().T @ own)
                - phi[k].conj().T @ B @ phi[k])
        total += alpha[k] * (logdet - np.trace(gamma[k]).real) + np.trace(ig @ term).real
    return float(total)


def dense_rates(snap: DenseSnapshot, noise: float) -> np.ndarray:
    """Per-user rates in nats, ``ln det(I + H^H M^-1 H)``."""
    H, W = snap.H, snap.W
    rates = []
    for k in range(H.shape[0]):
        own = H[k] @ W[k]
        Mk = _covariance(H, W, k, noise, skip=k)
        inner = np.eye(own.shape[1]) + own.conj().T @ np.linalg.inv(Mk) @ own
        rates.append(np.log(np.linalg.det(inner).real))
    return np.array(rates)


def dense_auxiliary(snap: DenseSnapshot, alpha, noise: float):
    """Closed-form optimal ``(gamma, phi)`` via explicit inverses."""
    H, W = snap.H, snap.W
    gammas, phis = [], []
    for k in range(H.shape[0]):
        own = H[k] @ W[k]
        Mk = _covariance(H, W, k, noise, skip=k)
        gammas.append(own.conj().T @ np.linalg.inv(Mk) @ own)
        phis.append(np.sqrt(alpha[k]) * np.linalg.inv(Mk + own @ own.conj().T) @ own)
    return np.array(gammas), np.array(phis)


# finite differences -----------------------------------------------------------


def finite_diff(fun: Callable[[np.ndarray], float], point, step: float) -> np.ndarray:
    """Central-difference gradient of a real function of a real array."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(point, dtype=float)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = fun(x)
        flat[i] = keep - step
        down = fun(x)
        flat[i] = keep
        gflat[i] = (up - down) / (2 * step)
    return grad


def fd_hvp(fun, point, vector, step: float) -> np.ndarray:
    """Hessian-vector product from function values only.

    Uses ``v^T H e_i`` estimated by the four-point mixed difference along
    ``v`` and each coordinate.
    """
    x = np.array(point, dtype=float)
    v = np.asarray(vector, dtype=float).reshape(x.shape)
    out = np.zeros(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = 1.0
        e = e.reshape(x.shape)
        a = fun(x + step * (v + e))
        b = fun(x + step * (v - e))
        c = fun(x - step * (v - e))
        dd = fun(x - step * (v + e))
        out[i] = (a - b - c + dd) / (4 * step ** 2)
    return out


def grad_hvp(grad, point, vector, step: float) -> np.ndarray:
    """Hessian-vector product as a central difference of a gradient function."""
    x = np.array(point, dtype=float)
    v = np.asarray(vector, dtype=float).reshape(x.shape)
    return ((np.asarray(grad(x + step * v)) - np.asarray(grad(x - step * v))) / (2 * step)).ravel()


def fd_hessian(grad, point, step: float) -> np.ndarray:
    """Dense symmetrized Hessian, one gradient difference per coordinate."""
    x = np.array(point, dtype=float)
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        H[:, i] = grad_hvp(grad, x, e, step)
    return (H + H.T) / 2


def power_iteration(hvp: Callable[[np.ndarray], np.ndarray], n: int, iters: int = 300,
                    tol: float = 1e-10, seed: int = 0, shift: float = 0.0) -> float:
    """Dominant eigenvalue of ``H + shift I`` given ``v -> H v``, minus the shift.

    With ``shift = 0`` this is the eigenvalue of largest magnitude. A shift at
    least the spectral radius turns it into the algebraically largest one.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = np.asarray(hvp(v)) + shift * v
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            return -shift
        v = w / nw
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1.0):
            lam = lam_new
            break
        lam = lam_new
    return lam - shift


def hessian_lambda_max(point, *, fun=None, grad=None, step: float, iters: int = 300,
                       seed: int = 0) -> dict[str, float]:
    """Largest-magnitude and algebraically largest Hessian eigenvalues.

    Hessian-vector products use ``grad`` when given, otherwise four-point
    function differences.
    """
    if grad is None and fun is None:
        raise ValueError("need fun or grad")
    x = np.array(point, dtype=float)
    if grad is not None:
        def hvp(v):
            return grad_hvp(grad, x, v, step)
    else:
        def hvp(v):
            return fd_hvp(fun, x, v, step)
    radius_est = power_iteration(hvp, x.size, iters, seed=seed)
    shift = abs(radius_est)
    top = power_iteration(hvp, x.size, iters, seed=seed + 1, shift=shift)
    return {"radius": abs(radius_est), "max": top}


def grid_search_scalar(objective: Callable[[float], float], interval, points: int) -> float:
    """Grid point with the largest objective value (first one on ties)."""
    if points < 2:
        raise ValueError("need at least two grid points")
    lo, hi = interval
    grid = np.linspace(lo, hi, points)
    values = np.array([objective(x) for x in grid])
    return float(grid[int(np.argmax(values))])
