from dataclasses import dataclass, field

import numpy as np
import pytest

from fadbp.fabric import Fabric, MessageSizeError, OpMeter, PhaseError, Topology, payload_bytes
from fadbp.scenario import SystemConfig, build_scenario
from fadbp.solver import SolveOptions, run_bca
from fadbp.state import partition


@dataclass
class Block:
    A: np.ndarray
    B: np.ndarray
    value: float = 0.0
    inbox: dict = field(default_factory=dict)
    meter: OpMeter = field(default_factory=OpMeter)


def _blocks(A, B, C, values=None):
    topo = Topology(A.shape[0], C)
    states = [Block(A[topo.rows(c)], B[topo.rows(c)], 0.0 if values is None else values[c])
              for c in range(C)]
    return topo, states


def _ab(state):
    return state.A, state.B


def _value(state):
    return state.value


def _q_energy(state):
    return float(np.sum(np.abs(state.B) ** 2))


def _local_block(state):
    return state.A


def _explode(state):
    raise PhaseError("boom")


def _rand(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def test_topology():
    topo = Topology(12, 3)
    assert topo.Mc == 4
    assert topo.rows(2) == slice(8, 12)
    with pytest.raises(ValueError):
        Topology(10, 4)


def test_mul_single_du_is_plain_product():
    rng = np.random.default_rng(0)
    A, B = _rand(rng, 5, 3), _rand(rng, 5, 2)
    topo, states = _blocks(A, B, 1)
    with Fabric(topo, states, {2, 3}) as fab:
        np.testing.assert_allclose(fab.mul("t", _ab), A.conj().T @ B, atol=1e-13)


def test_mul_hand_sum_two_blocks():
    A = np.ones((2, 1), dtype=complex)
    B = np.array([[1.0], [2.0]], dtype=complex)
    topo, states = _blocks(A, B, 2)
    with Fabric(topo, states, {1}) as fab:
        assert fab.mul("t", _ab)[0, 0] == 3.0


def test_mul_matches_dense_stack():
    rng = np.random.default_rng(1)
    A, B = _rand(rng, 12, 4), _rand(rng, 12, 4)
    topo, states = _blocks(A, B, 3)
    with Fabric(topo, states, {4}) as fab:
        np.testing.assert_allclose(fab.mul("t", _ab), A.conj().T @ B, rtol=0, atol=1e-12)


def test_mul_linearity():
    rng = np.random.default_rng(2)
    A, B1, B2 = _rand(rng, 8, 3), _rand(rng, 8, 3), _rand(rng, 8, 3)
    out = []
    for B in (B1, B2, B1 + B2):
        topo, states = _blocks(A, B, 4)
        with Fabric(topo, states, {3}) as fab:
            out.append(fab.mul("t", _ab))
    np.testing.assert_allclose(out[2], out[0] + out[1], atol=1e-12)


def test_broadcast_bytes():
    d = 4
    A = np.zeros((8, 1))
    topo, states = _blocks(A, A, 4)
    with Fabric(topo, states, {d}) as fab:
        fab.broadcast("dd", np.zeros((d, d), dtype=complex))
        fab.broadcast("scalar", 1.5)
        msgs = fab.transcript.messages
    dd = [m for m in msgs if m.tag == "dd"]
    assert len(dd) == 4 and all(m.bytes == 16 * d * d for m in dd)
    assert sum(m.bytes for m in msgs if m.tag == "scalar") == 8 * 4
    assert [s.inbox["scalar"] for s in states] == [1.5] * 4


def test_broadcast_of_cluster_block_rejected():
    A = np.zeros((16, 2))
    topo, states = _blocks(A, A, 4)
    with Fabric(topo, states, {2, 6}) as fab:
        with pytest.raises(MessageSizeError):
            fab.broadcast("bad", np.zeros((topo.Mc, 2)))
        with pytest.raises(MessageSizeError):
            fab.gather("bad", _local_block)
        assert fab.transcript.messages == []


@pytest.mark.parametrize("op, expected", [("sum", 10), ("max", 4)])
def test_reduce(op, expected):
    A = np.zeros((4, 1))
    topo, states = _blocks(A, A, 4, values=[1.0, 2.0, 3.0, 4.0])
    with Fabric(topo, states, {1}) as fab:
        assert fab.reduce("r", _value, op=op) == expected
        with pytest.raises(ValueError):
            fab.reduce("r", _value, op="min")


def test_reduce_trace_matches_dense():
    rng = np.random.default_rng(3)
    Q = _rand(rng, 12, 3)
    topo, states = _blocks(Q, Q, 3)
    with Fabric(topo, states, {1}) as fab:
        total = fab.reduce("tr", _q_energy)
    assert total == pytest.approx(np.trace(Q.conj().T @ Q).real, rel=1e-12)


def test_payload_bytes():
    assert payload_bytes(np.zeros((3, 2), dtype=complex)) == 96
    assert payload_bytes(np.zeros(3)) == 24
    assert payload_bytes(2.0) == 8


def test_missing_broadcast_raises_phase_error():
    sc = build_scenario(SystemConfig(M=8, C=2, K=2, N=2, d=2))
    _, dus, _ = partition(sc)
    with pytest.raises(PhaseError):
        dus[0].received("beam/S")


def test_unknown_scheduler():
    A = np.zeros((4, 1))
    topo, states = _blocks(A, A, 2)
    with pytest.raises(ValueError):
        Fabric(topo, states, {1}, scheduler="gpu")


def test_op_meter_counts():
    m = OpMeter()
    m.einsum("ij,jk->ik", np.ones((2, 3)), np.ones((3, 4)))
    assert m.count == 24
    m.matmul_h(np.ones((5, 2)), np.ones((5, 3)))
    assert m.count == 24 + 30


def test_transcripts_identical_across_schedulers():
    cfg = SystemConfig(K=2, N=2, M=8, C=2, d=2, L_tx=2, L_rx=2, seed=4)
    sc = build_scenario(cfg)
    seq = run_bca(sc, SolveOptions(max_outer_iters=3, scheduler="seq"))
    par = run_bca(sc, SolveOptions(max_outer_iters=3, scheduler="par"))
    assert list(seq.transcript.records()) == list(par.transcript.records())
    assert seq.wsr_trace == par.wsr_trace
    assert par.scheduler == "par"


def test_worker_error_propagates():
    A = np.zeros((4, 1))
    topo, states = _blocks(A, A, 2)
    with Fabric(topo, states, {1}, scheduler="par") as fab:
        with pytest.raises(PhaseError):
            fab.run(_explode)
