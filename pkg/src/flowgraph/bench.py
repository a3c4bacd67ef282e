"""Scaling micro-benchmarks for the constant-time engine operations.

Each kind builds one fixture per size outside the timed region, then times
batches of ``inner`` calls per sample, taking samples from the sizes in turn.
The reported figure is the median per-call latency in nanoseconds over
``iterations`` samples.
"""

from __future__ import annotations

import gc
import statistics
import time
from collections.abc import Callable, Sequence

from .engine import Flow, Node, RunLimits, next_node, run_flow

KINDS = ("branch_lookup", "flow_creation", "step_transition")


class _Noop(Node):
    def __init__(self, id: str | None = None, action: str = "default") -> None:
        super().__init__(id)
        self.action = action

    def post(self, shared, prep_res, exec_res):
        return self.action


def _fan_out(k: int, action: str) -> Node:
    """A node with ``k`` labelled successors ``a0 .. a{k-1}``."""
    hub = _Noop("hub", action)
    for i in range(k):
        hub - f"a{i}" >> _Noop(f"leaf{i}", f"end{i}")
    return hub


def _branch_lookup(size: int) -> Callable[[], object]:
    hub = _fan_out(size, "unused")
    label = f"a{size - 1}"
    return lambda: next_node(hub, label)


def _flow_creation(size: int) -> Callable[[], object]:
    nodes = [_Noop(f"n{i}") for i in range(size)]
    for a, b in zip(nodes, nodes[1:]):
        a >> b
    first = nodes[0]
    return lambda: Flow(start=first)


def _step_transition(size: int) -> Callable[[], object]:
    # Two steps: the hub, then the leaf selected by its action.
    hub = _fan_out(size, f"a{size - 1}")
    flow = Flow(start=hub, id="bench")
    flow.index()
    limits = RunLimits(max_steps=4)
    return lambda: run_flow(flow, {}, limits)


_FIXTURES: dict[str, Callable[[int], Callable[[], object]]] = {
    "branch_lookup": _branch_lookup,
    "flow_creation": _flow_creation,
    "step_transition": _step_transition,
}

_DEFAULT_INNER = {"branch_lookup": 200, "flow_creation": 100, "step_transition": 10}


def _sample_ns(op: Callable[[], object], loop: range) -> float:
    clock = time.perf_counter_ns
    t0 = clock()
    for _ in loop:
        op()
    return (clock() - t0) / len(loop)


def _interleaved_medians(ops: Sequence[Callable[[], object]], iterations: int, inner: int) -> list[float]:
    # Samples rotate across sizes so slow drifts in machine speed hit every size alike.
    for op in ops:
        for _ in range(max(10, iterations // 10)):
            op()
    samples: list[list[float]] = [[] for _ in ops]
    loop = range(inner)
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for i in range(iterations):
            for j in range(len(ops)):
                k = (i + j) % len(ops)
                samples[k].append(_sample_ns(ops[k], loop))
    finally:
        if gc_was_enabled:
            gc.enable()
    return [statistics.median(s) for s in samples]


def bench_scaling(
    kind: str,
    sizes: Sequence[int],
    iterations: int = 1000,
    inner: int | None = None,
) -> list[tuple[int, float]]:
    """``[(size, median ns per operation), ...]`` in the order of ``sizes``."""
    if kind not in _FIXTURES:
        raise ValueError(f"unknown benchmark kind {kind!r}; expected one of {', '.join(KINDS)}")
    sizes = list(sizes)
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError("sizes must be positive integers")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly increasing")
    if iterations < 1:
        raise ValueError("iterations must be positive")
    inner = inner or _DEFAULT_INNER[kind]
    ops = [_FIXTURES[kind](size) for size in sizes]
    return list(zip(sizes, _interleaved_medians(ops, iterations, inner)))


def spread(table: Sequence[tuple[int, float]]) -> float:
    """max/min of the medians; 1.0 means perfectly flat."""
    medians = [m for _, m in table]
    return max(medians) / min(medians)


def format_table(table: Sequence[tuple[int, float]]) -> str:
    return "".join(f"{size}\t{median:.1f}\n" for size, median in table)
