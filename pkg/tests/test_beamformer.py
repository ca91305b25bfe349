import numpy as np
import pytest

from fadbp.beamformer import (
    eta_from_blocks,
    extrapolate,
    extrapolation_weight,
    power_projection,
    power_scale,
    update_w_round,
)
from fadbp.fabric import Fabric
from fadbp.oracles import dense_auxiliary, dense_channels, dense_snapshot
from fadbp.scenario import SystemConfig, build_scenario
from fadbp.solver import _update_auxiliary
from fadbp.state import allowed_dims, partition

from conftest import small_config


@pytest.mark.parametrize("i, nu", [(1, 0.0), (2, 0.0), (5, 0.5), (100, 98 / 101)])
def test_extrapolation_weight(i, nu):
    assert extrapolation_weight(i) == pytest.approx(nu)


def test_extrapolation_weight_rejects_zero():
    with pytest.raises(ValueError):
        extrapolation_weight(0)


def test_extrapolate():
    W = np.array([2.0 + 1j])
    assert extrapolate(W, np.array([5.0]), 0.0) == W
    assert extrapolate(W, W, 0.7) == W
    assert extrapolate(np.array([2.0]), np.array([0.0]), 0.5)[0] == 3.0


def test_power_projection():
    rng = np.random.default_rng(0)
    blocks = [rng.normal(size=(2, 3, 2)) + 1j * rng.normal(size=(2, 3, 2)) for _ in range(3)]
    PQ = sum(np.sum(np.abs(b) ** 2) for b in blocks)
    same = power_projection(blocks, PQ * 1.5)
    assert all(np.array_equal(a, b) for a, b in zip(same, blocks))
    assert power_scale(4.0, 1.0) == 0.5
    scaled = power_projection(blocks, PQ / 3)
    assert sum(np.sum(np.abs(b) ** 2) for b in scaled) <= PQ / 3 * (1 + 1e-12)


def _run_round(config, extrapolation=False, W=None, pmax=None, phi=None, gamma=None):
    sc = build_scenario(config)
    topo, dus, cu = partition(sc)
    if W is not None:
        for c, du in enumerate(dus):
            du.W = W[:, topo.rows(c)].copy()
            du.W_prev = du.W.copy()
    if pmax is not None:
        cu.pmax = pmax
        for du in dus:
            du.pmax = pmax
    with Fabric(topo, dus, allowed_dims(sc)) as fab:
        _update_auxiliary(fab, cu)
        if phi is not None:
            cu.phi, cu.gamma = phi, gamma
        info = update_w_round(fab, cu, 1, extrapolation)
        W_new = np.concatenate([s.W for s in fab.snapshot()], axis=1)
        transcript = fab.transcript
    return sc, cu, info, W_new, transcript


def _dense_q(sc, W, pmax=None):
    """Direct M x M evaluation of the beamformer step at nu = 0."""
    p = sc.paths
    H = dense_channels(sc.T0, sc.R0, p.prm, p.tx_dirs, p.rx_dirs, sc.wavelength)
    snap = dense_snapshot(sc.T0, sc.R0, W, p.prm, p.tx_dirs, p.rx_dirs, sc.wavelength)
    gamma, phi = dense_auxiliary(snap, sc.alpha, sc.noise)
    K, _, M = H.shape
    d = W.shape[2]
    A = np.zeros((M, M), dtype=complex)
    B = np.zeros((K, M, d), dtype=complex)
    for k in range(K):
        ig = np.eye(d) + gamma[k]
        A += H[k].conj().T @ phi[k] @ ig @ phi[k].conj().T @ H[k]
        B[k] = np.sqrt(sc.alpha[k]) * H[k].conj().T @ phi[k] @ ig
    eta = np.linalg.norm(A, "fro")
    Q = W + (B - np.einsum("mn,knd->kmd", A, W)) / eta
    PQ = np.sum(np.abs(Q) ** 2)
    W_new = Q * min(np.sqrt((pmax or sc.pmax) / PQ), 1.0)
    return eta, Q, W_new, A, B


@pytest.mark.parametrize("seed", range(4))
def test_round_matches_dense_evaluation(seed):
    cfg = small_config(seed=seed, C=4)
    sc, _, info, W_new, _ = _run_round(cfg)
    eta, _, W_ref, _, _ = _dense_q(sc, sc.W0)
    assert info["eta"] == pytest.approx(eta, rel=1e-10)
    np.testing.assert_allclose(W_new, W_ref, rtol=0, atol=1e-10 * np.abs(W_ref).max())


def test_eta_single_user_identity_factors():
    cfg = SystemConfig(K=1, N=2, M=4, C=1, d=2, L_tx=2, L_rx=2, seed=1)
    sc = build_scenario(cfg)
    phi = np.eye(2, dtype=complex)[None]
    gamma = np.zeros((1, 2, 2), dtype=complex)
    _, _, info, _, _ = _run_round(cfg, phi=phi, gamma=gamma)
    p = sc.paths
    H = dense_channels(sc.T0, sc.R0, p.prm, p.tx_dirs, p.rx_dirs, sc.wavelength)[0]
    assert info["eta"] == pytest.approx(np.linalg.norm(H.conj().T @ H, "fro"), rel=1e-10)


def test_eta_blocks():
    blocks = np.zeros((2, 2, 3, 3))
    blocks[0, 1, 0, 0] = 3.0
    blocks[1, 0, 2, 1] = 4.0
    assert eta_from_blocks(blocks) == 5.0


def test_zero_phi_skips_update():
    cfg = small_config(seed=2)
    K, N, d = 2, 2, 2
    sc, _, info, W_new, _ = _run_round(cfg, phi=np.zeros((K, N, d), complex),
                                       gamma=np.zeros((K, d, d), complex))
    assert info["skipped"] and info["eta"] == 0.0
    assert np.array_equal(W_new, sc.W0)


def test_stationary_point_is_fixed():
    cfg = small_config(seed=3, C=2)
    sc = build_scenario(cfg)
    _, _, _, A, B = _dense_q(sc, sc.W0)
    # auxiliaries are computed at W0; W is then moved to the stationary point of that quadratic
    Y = np.einsum("mn,knd->kmd", np.linalg.pinv(A), B)
    np.testing.assert_allclose(np.einsum("mn,knd->kmd", A, Y), B, atol=1e-8 * np.abs(B).max())

    topo, dus, cu = partition(sc)
    with Fabric(topo, dus, allowed_dims(sc)) as fab:
        _update_auxiliary(fab, cu)  # at W0
        for c, du in enumerate(dus):
            du.W = Y[:, topo.rows(c)].copy()
            du.W_prev = du.W.copy()
            du.pmax = 1e9
        cu.gtilde_valid = False
        update_w_round(fab, cu, 1, extrapolation=False)
        W_new = np.concatenate([s.W for s in fab.snapshot()], axis=1)
    np.testing.assert_allclose(W_new, Y, rtol=0, atol=1e-8 * np.abs(Y).max())


@pytest.mark.parametrize("seed", range(3))
def test_power_feasible_after_round(seed):
    _, cu, _, W_new, _ = _run_round(small_config(seed=seed), extrapolation=True)
    assert np.sum(np.abs(W_new) ** 2) <= cu.pmax * (1 + 1e-12)


def test_partition_invariance_of_round():
    out = [_run_round(small_config(seed=5, C=C))[3] for C in (1, 2, 4, 8)]
    for W in out[1:]:
        np.testing.assert_allclose(W, out[0], rtol=1e-9, atol=1e-9 * np.abs(out[0]).max())


BEAM_SCHEDULE = [
    ("beam", "CU->DU", "beam/P-factor"),
    ("beam", "DU->CU", "beam/P~"),
    ("beam", "CU->DU", "beam/eta"),
    ("beam", "DU->CU", "beam/Y~"),
    ("beam", "CU->DU", "beam/S"),
    ("beam", "CU->DU", "beam/PhiY"),
    ("beam", "DU->CU", "beam/trQ"),
    ("beam", "CU->DU", "beam/PQ"),
]


def test_round_schedule():
    *_, transcript = _run_round(small_config(seed=0, C=4))
    steps = [s for s in transcript.schedule() if s[0] == "beam"]
    assert steps == BEAM_SCHEDULE


def test_round_bytes_independent_of_m():
    totals = []
    for M in (16, 64):
        *_, tr = _run_round(SystemConfig(M=M, C=4, seed=1))
        totals.append(sum(m.bytes for m in tr.messages if m.phase == "beam"))
    assert totals[0] == totals[1]
