"""Far-field geometric channel built from field-response vectors."""
from __future__ import annotations

import numpy as np


def steering_vector(theta, phi):
    """Unit direction(s) for elevation ``theta`` and azimuth ``phi``; broadcasts, last axis is xyz."""
    theta, phi = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(phi, dtype=float))
    ct = np.cos(theta)
    return np.stack([ct * np.cos(phi), ct * np.sin(phi), np.sin(theta)], axis=-1)


def frv(position, directions, wavelength):
    """Field-response vector of one antenna: ``exp(j 2pi/lambda <dir_q, p>)`` for each path q."""
    directions = np.atleast_2d(directions)
    return np.exp(2j * np.pi / wavelength * (directions @ np.asarray(position, dtype=float)))


def frm(positions, directions, wavelength):
    """Field-response matrix, one column per antenna.

    ``positions`` is (n, 3) and ``directions`` (..., L, 3); the result is (..., L, n).
    """
    phase = np.einsum("...lx,nx->...ln", directions, positions)
    return np.exp(2j * np.pi / wavelength * phase)


def rx_frm(R, rx_dirs, wavelength):
    """Receive FRMs of all users: R (K, N, 3), rx_dirs (K, L, 3) -> (K, L, N)."""
    phase = np.einsum("klx,knx->kln", rx_dirs, R)
    return np.exp(2j * np.pi / wavelength * phase)


def assemble_channel(T, R, prm, tx_dirs, rx_dirs, wavelength):
    """Channel ``F(R)^H Sigma G(T)`` for one user and one block of transmit antennas.

    T: (Mc, 3), R: (N, 3), prm: (Lr, Lt), tx_dirs: (Lt, 3), rx_dirs: (Lr, 3). Returns (N, Mc).
    """
    T = np.atleast_2d(T)
    R = np.atleast_2d(R)
    prm = np.atleast_2d(prm)
    tx_dirs = np.atleast_2d(tx_dirs)
    rx_dirs = np.atleast_2d(rx_dirs)
    if prm.shape != (rx_dirs.shape[0], tx_dirs.shape[0]):
        raise ValueError(f"PRM shape {prm.shape} does not match paths "
                         f"({rx_dirs.shape[0]}, {tx_dirs.shape[0]})")
    if T.shape[-1] != 3 or R.shape[-1] != 3:
        raise ValueError("positions must have 3 coordinates")
    G = frm(T, tx_dirs, wavelength)
    F = frm(R, rx_dirs, wavelength)
    left = F.conj().T @ prm  # (N, Lt)
    # per-column reduction keeps each column independent of the block width
    return (left[:, :, None] * G[None]).sum(axis=1)
