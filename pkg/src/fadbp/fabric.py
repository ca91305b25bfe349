"""Simulated decentralized-baseband runtime.

One central unit (CU) drives ``C`` decentralized units (DUs). Each DU is an
isolated actor owning its state object; the CU talks to DUs only through
:class:`Fabric` calls, and every payload crossing the CU/DU boundary is
logged with its size. DU-local work is metered in complex multiply-adds.

Local operations are plain module-level functions ``fn(state, *args)``. The
sequential scheduler calls them in-process; the parallel one ships them to
one worker process per DU, so they must be picklable by reference.
"""
from __future__ import annotations

import copy
import json
import logging
import multiprocessing as mp
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

log = logging.getLogger(__name__)

CU_TO_DU = "CU->DU"
DU_TO_CU = "DU->CU"


class MessageSizeError(ValueError):
    """A payload would carry a dimension that scales with the number of BS antennas."""


class PhaseError(RuntimeError):
    """A DU was asked to use a broadcast it never received."""


@dataclass(frozen=True)
class Topology:
    M: int
    C: int

    def __post_init__(self):
        if self.C < 1 or self.M % self.C:
            raise ValueError(f"C={self.C} must divide M={self.M}")

    @property
    def Mc(self) -> int:
        return self.M // self.C

    def rows(self, c: int) -> slice:
        return slice(c * self.Mc, (c + 1) * self.Mc)


class OpMeter:
    """Counts complex multiply-adds of the products it evaluates."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)

    def einsum(self, subscripts: str, a, b):
        """Two-operand einsum; the cost is the product of all index extents."""
        inputs = subscripts.split("->")[0].split(",")
        sizes: dict[str, int] = {}
        for spec, arr in zip(inputs, (a, b)):
            shape = np.shape(arr)
            spec = spec.replace("...", "")
            # broadcast batch dims are not supported here; callers use explicit letters
            for letter, n in zip(spec, shape[len(shape) - len(spec):]):
                sizes[letter] = max(sizes.get(letter, 1), n)
        self.add(np.prod(list(sizes.values()), dtype=np.int64))
        return np.einsum(subscripts, a, b)

    def matmul_h(self, A, B):
        """Batched ``A^H B`` with numpy broadcasting over leading axes."""
        out = np.matmul(np.conj(np.swapaxes(A, -1, -2)), B)
        rows = A.shape[-2]
        self.add(int(np.prod(out.shape, dtype=np.int64)) * rows)
        return out

    def matmul(self, A, B):
        out = np.matmul(A, B)
        self.add(int(np.prod(out.shape, dtype=np.int64)) * A.shape[-1])
        return out


class _CuMeter(OpMeter):
    """Attributes CU-side products to the fabric's current phase."""

    def __init__(self, fabric: "Fabric"):
        super().__init__()
        self._fabric = fabric

    def add(self, n: int) -> None:
        self.count += int(n)
        self._fabric.transcript.cu_ops[self._fabric._phase] += int(n)


def payload_shape(payload) -> tuple[int, int]:
    shape = np.shape(payload)
    if len(shape) == 0:
        return 1, 1
    return int(np.prod(shape[:-1], dtype=np.int64)), int(shape[-1])


def payload_bytes(payload) -> int:
    arr = np.asarray(payload)
    per = 16 if np.iscomplexobj(arr) else 8
    return per * int(arr.size)


@dataclass(frozen=True)
class Message:
    phase: str
    direction: str
    tag: str
    rows: int
    cols: int
    bytes: int
    du_id: int
    iteration: int = 0

    def record(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class Transcript:
    """Ordered message log plus per-phase op counters and timings."""

    C: int
    messages: list[Message] = field(default_factory=list)
    du_ops: dict[str, np.ndarray] = field(default_factory=dict)
    cu_ops: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    du_seconds: dict[str, np.ndarray] = field(default_factory=dict)
    phase_seconds: dict[str, float] = field(default_factory=lambda: defaultdict(float))

    def _du_counter(self, table, phase, dtype):
        if phase not in table:
            table[phase] = np.zeros(self.C, dtype=dtype)
        return table[phase]

    def add_du(self, phase: str, c: int, ops: int, seconds: float) -> None:
        self._du_counter(self.du_ops, phase, np.int64)[c] += ops
        self._du_counter(self.du_seconds, phase, float)[c] += seconds

    def total_bytes(self, iteration: int | None = None) -> int:
        return sum(m.bytes for m in self.messages if iteration is None or m.iteration == iteration)

    def bytes_per_iteration(self) -> dict[int, int]:
        out: dict[int, int] = defaultdict(int)
        for m in self.messages:
            out[m.iteration] += m.bytes
        return dict(out)

    def schedule(self, iteration: int | None = None) -> list[tuple[str, str, str]]:
        """Distinct (phase, direction, tag) steps in order of first appearance."""
        seen: list[tuple[str, str, str]] = []
        for m in self.messages:
            if iteration is not None and m.iteration != iteration:
                continue
            key = (m.phase, m.direction, m.tag)
            if not seen or seen[-1] != key:
                seen.append(key)
        return seen

    def max_du_ops(self) -> int:
        if not self.du_ops:
            return 0
        return int(np.max(sum(self.du_ops.values())))

    def total_ops(self) -> int:
        du = sum(int(v.sum()) for v in self.du_ops.values())
        return du + sum(self.cu_ops.values())

    def summary(self) -> dict[str, Any]:
        by_tag: dict[str, dict[str, int]] = {}
        for m in self.messages:
            entry = by_tag.setdefault(m.tag, {"messages": 0, "bytes": 0})
            entry["messages"] += 1
            entry["bytes"] += m.bytes
        return {
            "C": self.C,
            "messages": len(self.messages),
            "bytes": self.total_bytes(),
            "by_tag": by_tag,
            "du_ops": {k: v.tolist() for k, v in self.du_ops.items()},
            "cu_ops": dict(self.cu_ops),
        }

    def records(self) -> Iterable[dict[str, Any]]:
        for m in self.messages:
            yield m.record()

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")


def _invoke(state, fn: Callable, args: tuple):
    state.meter.count = 0
    t0 = time.perf_counter()
    result = fn(state, *args)
    return result, state.meter.count, time.perf_counter() - t0


def _store(state, tag: str, payload) -> None:
    state.inbox[tag] = payload


def _mul_local(state, fn: Callable, args: tuple):
    A, B = fn(state, *args)
    return state.meter.matmul_h(A, B)


def _copy_state(state):
    return copy.deepcopy(state)


class SequentialScheduler:
    name = "seq"

    def __init__(self, states: list):
        self._states = states

    def map(self, fn: Callable, args: tuple) -> list:
        return [_invoke(s, fn, args) for s in self._states]

    def close(self) -> None:
        pass


def _worker(conn, state) -> None:
    while True:
        msg = conn.recv()
        if msg is None:
            conn.close()
            return
        fn, args = msg
        try:
            conn.send(("ok", _invoke(state, fn, args)))
        except BaseException as exc:  # forwarded to the CU
            conn.send(("err", exc))


class ProcessScheduler:
    """One long-lived worker process per DU; calls fan out then join (bulk-synchronous)."""

    name = "par"

    def __init__(self, states: list):
        methods = mp.get_all_start_methods()
        ctx = mp.get_context("fork" if "fork" in methods else "spawn")
        self._conns = []
        self._procs = []
        for state in states:
            parent, child = ctx.Pipe()
            proc = ctx.Process(target=_worker, args=(child, state), daemon=True)
            proc.start()
            child.close()
            self._conns.append(parent)
            self._procs.append(proc)

    def map(self, fn: Callable, args: tuple) -> list:
        for conn in self._conns:
            conn.send((fn, args))
        out = []
        error = None
        for conn in self._conns:
            status, value = conn.recv()
            if status == "err":
                error = error or value
            out.append(value)
        if error is not None:
            raise error
        return out

    def close(self) -> None:
        for conn in self._conns:
            try:
                conn.send(None)
                conn.close()
            except (BrokenPipeError, OSError):
                pass
        for proc in self._procs:
            proc.join(timeout=5)
        self._conns, self._procs = [], []


SCHEDULERS = {"seq": SequentialScheduler, "par": ProcessScheduler}


class Fabric:
    """CU-side handle on the DU actors.

    ``allowed_dims`` lists the only axis lengths a payload may have; anything
    else (in particular ``M`` or ``M/C``) is refused before it is sent.
    """

    def __init__(self, topology: Topology, states: list, allowed_dims: Iterable[int],
                 scheduler: str = "seq"):
        if len(states) != topology.C:
            raise ValueError("need one state per DU")
        self.topology = topology
        self.allowed_dims = frozenset(int(n) for n in allowed_dims) | {1}
        self.transcript = Transcript(topology.C)
        self.iteration = 0
        self._phase = "init"
        self.cu_meter = _CuMeter(self)
        try:
            self._scheduler = SCHEDULERS[scheduler](states)
        except KeyError:
            raise ValueError(f"unknown scheduler {scheduler!r}") from None

    @property
    def C(self) -> int:
        return self.topology.C

    @property
    def scheduler(self) -> str:
        return self._scheduler.name

    @contextmanager
    def phase(self, name: str):
        prev = self._phase
        self._phase = name
        t0 = time.perf_counter()
        try:
            yield self
        finally:
            self.transcript.phase_seconds[name] += time.perf_counter() - t0
            self._phase = prev

    def _check(self, tag: str, payload) -> None:
        shape = np.shape(payload)
        bad = [n for n in shape if n not in self.allowed_dims]
        if bad:
            raise MessageSizeError(f"{tag}: payload shape {shape} has M-dependent axes {bad}")

    def _log(self, direction: str, tag: str, payload, c: int) -> None:
        rows, cols = payload_shape(payload)
        self.transcript.messages.append(Message(self._phase, direction, tag, rows, cols,
                                                payload_bytes(payload), c, self.iteration))

    def _map(self, fn: Callable, args: tuple) -> list:
        results = self._scheduler.map(fn, args)
        values = []
        for c, (value, ops, seconds) in enumerate(results):
            self.transcript.add_du(self._phase, c, ops, seconds)
            values.append(value)
        return values

    def run(self, fn: Callable, *args) -> list:
        """Local DU computation, no traffic. Returns whatever each DU returns (not logged)."""
        return self._map(fn, args)

    def gather(self, tag: str, fn: Callable, *args) -> list:
        values = self._map(fn, args)
        for c, v in enumerate(values):
            self._check(tag, v)
            self._log(DU_TO_CU, tag, v, c)
        return values

    def mul(self, tag: str, fn: Callable, *args) -> np.ndarray:
        """Sum over DUs of ``A^H B`` where each DU's ``fn(state, *args)`` returns its (A, B).

        Products are formed locally; the CU adds them in ascending DU order.
        """
        parts = self.gather(tag, _mul_local, fn, args)
        shapes = {p.shape for p in parts}
        if len(shapes) != 1:
            raise ValueError(f"{tag}: DU blocks do not conform: {sorted(shapes)}")
        total = parts[0].copy()
        for p in parts[1:]:
            total += p
        self.cu_meter.add(total.size * (len(parts) - 1))
        return total

    def reduce(self, tag: str, fn: Callable, *args, op: str = "sum"):
        parts = self.gather(tag, fn, *args)
        if op == "sum":
            total = np.array(parts[0], dtype=np.result_type(parts[0]), copy=True)
            for p in parts[1:]:
                total = total + p
            return total
        if op == "max":
            return np.max(np.stack([np.asarray(p) for p in parts]), axis=0)
        raise ValueError(f"unknown reduction {op!r}")

    def broadcast(self, tag: str, payload) -> None:
        self._check(tag, payload)
        payload = np.array(payload, copy=True) if np.ndim(payload) else payload
        self._map(_store, (tag, payload))
        for c in range(self.C):
            self._log(CU_TO_DU, tag, payload, c)

    def snapshot(self) -> list:
        """Copies of every DU state for inspection; not part of the algorithm's traffic."""
        return [value for value, _, _ in self._scheduler.map(_copy_state, ())]

    def close(self) -> None:
        self._scheduler.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
