"""Nodes, action-labelled wiring and the flow execution loop.

A node runs ``prep(shared) -> exec(prep_res) -> post(shared, prep_res, exec_res)``
and ``post`` returns the action label that picks the next node. A :class:`Flow`
is itself a node, so flows nest: a sub-flow runs on the parent's store and
reports its terminal action (the one that found no successor) back to the
parent for the parent's own successor lookup.

Wiring::

    greet >> ask_mood                 # "default" transition
    review - "approved" >> ship       # labelled transition
    flow = Flow(start=greet)
    outcome = flow.run({"name": "Alice"})
"""

from __future__ import annotations

import threading
from collections import deque
from collections.abc import Awaitable, Callable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, NamedTuple

from .errors import (
    DuplicateBinding,
    DuplicateNodeId,
    EmptyLabel,
    FlowError,
    InvalidAction,
    InvalidNodeId,
    MissingStart,
    NestingCycle,
    NodeError,
    NonBlockingNodeInBlockingRun,
    PostFailed,
    PrepFailed,
    RunCancelled,
    StepLimitExceeded,
)
from .reliability import (
    REAL_CLOCK,
    RetryPolicy,
    WaitProvider,
    exec_with_retry,
    exec_with_retry_async,
)
from .store import SharedStore

DEFAULT = "default"

# Bumped on every wiring change; flows cache their id index against it.
_wiring_epoch = 0


def _bump_epoch() -> None:
    global _wiring_epoch
    _wiring_epoch += 1


def _check_label(action: object) -> None:
    if not isinstance(action, str) or not action:
        raise EmptyLabel()


def _check_node_id(node_id: object) -> None:
    if not isinstance(node_id, str) or not node_id:
        raise InvalidNodeId(f"node ids must be non-empty text, got {node_id!r}")
    if "/" in node_id:
        raise InvalidNodeId(f"node id {node_id!r} must not contain '/'")


class BaseNode:
    """Anything that can sit in a flow graph and be wired to successors."""

    def __init__(self, id: str | None = None) -> None:
        if id is not None:
            _check_node_id(id)
        self.id = id
        self.successors: dict[str, BaseNode] = {}

    def __rshift__(self, other: BaseNode) -> BaseNode:
        connect_default(self, other)
        return other

    def __sub__(self, action: str) -> _PendingTransition:
        _check_label(action)
        return _PendingTransition(self, action)

    def on(self, action: str, to: BaseNode) -> BaseNode:
        connect_on(self, action, to)
        return to

    def describe(self) -> str:
        return self.id or type(self).__name__

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.id or hex(id(self))}>"

    def _invoke(self, run: _Run, shared: SharedStore, path: str) -> str:
        raise NotImplementedError

    async def _invoke_async(self, run: _Run, shared: SharedStore, path: str) -> str:
        return self._invoke(run, shared, path)


class _PendingTransition:
    __slots__ = ("source", "action")

    def __init__(self, source: BaseNode, action: str) -> None:
        self.source = source
        self.action = action

    def __rshift__(self, other: BaseNode) -> BaseNode:
        connect_on(self.source, self.action, other)
        return other


def connect_on(source: BaseNode, action: str, target: BaseNode) -> None:
    """Bind ``action`` on ``source`` to ``target``. Labels are write-once."""
    _check_label(action)
    if not isinstance(target, BaseNode):
        raise TypeError(f"successor must be a node, got {type(target).__name__}")
    if action in source.successors:
        raise DuplicateBinding(action, source.id)
    source.successors[action] = target
    _bump_epoch()


def connect_default(source: BaseNode, target: BaseNode) -> None:
    connect_on(source, DEFAULT, target)


def next_node(current: BaseNode, action: str) -> BaseNode | None:
    """Successor for ``action``: exact label, else ``"default"``, else None (terminal)."""
    succ = current.successors
    nxt = succ.get(action)
    if nxt is None:
        nxt = succ.get(DEFAULT)
    return nxt


def _as_action(result: object) -> str:
    if result is None:
        return DEFAULT
    if isinstance(result, str) and result:
        return result
    raise InvalidAction(ValueError(f"post must return a non-empty action label, got {result!r}"))


class Node(BaseNode):
    """Atomic unit of work. Subclasses override ``prep``, ``exec`` and ``post``.

    ``exec`` never sees the shared store; it receives only what ``prep``
    returned, which is what makes retrying it safe.
    """

    def __init__(self, id: str | None = None, *, max_retries: int = 1, wait: float = 0.0) -> None:
        super().__init__(id)
        self.retry = RetryPolicy(max_retries, wait)

    @property
    def max_retries(self) -> int:
        return self.retry.max_retries

    @property
    def wait(self) -> float:
        return self.retry.wait

    def prep(self, shared: SharedStore) -> Any:
        return None

    def exec(self, prep_res: Any) -> Any:
        return None

    def post(self, shared: SharedStore, prep_res: Any, exec_res: Any) -> str | None:
        return DEFAULT

    def exec_fallback(self, prep_res: Any, exc: BaseException) -> Any:
        """Called once every exec attempt has failed. Override to recover."""
        raise exc

    def _exec_phase(self, prep_res: Any, clock: WaitProvider) -> Any:
        return exec_with_retry(self, prep_res, clock)

    def _lifecycle(self, shared: SharedStore, clock: WaitProvider) -> str:
        try:
            prep_res = self.prep(shared)
        except Exception as exc:
            raise PrepFailed(exc) from exc
        exec_res = self._exec_phase(prep_res, clock)
        try:
            result = self.post(shared, prep_res, exec_res)
        except Exception as exc:
            raise PostFailed(exc) from exc
        return _as_action(result)

    def _invoke(self, run: _Run, shared: SharedStore, path: str) -> str:
        return run.leaf(path, lambda: self._lifecycle(shared, run.clock))

    def run(self, shared: SharedStore | dict[str, Any] | None = None) -> str:
        """Run this node alone and return its action."""
        return execute_node(self, shared)


class AsyncNode(Node):
    """Node whose lifecycle may suspend (``prep_async``/``exec_async``/``post_async``).

    The async hooks default to the blocking ones, so a subclass only overrides
    the phases that actually wait on something.
    """

    async def prep_async(self, shared: SharedStore) -> Any:
        return self.prep(shared)

    async def exec_async(self, prep_res: Any) -> Any:
        return self.exec(prep_res)

    async def post_async(self, shared: SharedStore, prep_res: Any, exec_res: Any) -> str | None:
        return self.post(shared, prep_res, exec_res)

    async def exec_fallback_async(self, prep_res: Any, exc: BaseException) -> Any:
        return self.exec_fallback(prep_res, exc)

    async def _exec_phase_async(self, prep_res: Any, clock: WaitProvider) -> Any:
        return await exec_with_retry_async(self, prep_res, clock)

    async def _lifecycle_async(self, shared: SharedStore, clock: WaitProvider) -> str:
        try:
            prep_res = await self.prep_async(shared)
        except Exception as exc:
            raise PrepFailed(exc) from exc
        exec_res = await self._exec_phase_async(prep_res, clock)
        try:
            result = await self.post_async(shared, prep_res, exec_res)
        except Exception as exc:
            raise PostFailed(exc) from exc
        return _as_action(result)

    def _invoke(self, run: _Run, shared: SharedStore, path: str) -> str:
        raise NonBlockingNodeInBlockingRun(path)

    async def _invoke_async(self, run: _Run, shared: SharedStore, path: str) -> str:
        return await run.leaf_async(path, lambda: self._lifecycle_async(shared, run.clock))


@dataclass(frozen=True)
class FlowIndex:
    """Stable id assignment for the nodes of one flow level.

    Unnamed nodes get ``<flow id>.<ordinal>`` where the ordinal is the node's
    breadth-first position from the start (successors in wiring order).
    """

    ids: dict[BaseNode, str]
    nodes: dict[str, BaseNode]
    order: tuple[BaseNode, ...]


class Flow(BaseNode):
    """A graph of nodes with a start node; usable as a node in another flow.

    Creating a flow only stores the start reference. The id index is built
    lazily on first use and rebuilt if wiring changes afterwards.
    """

    def __init__(self, start: BaseNode | None = None, id: str | None = None) -> None:
        super().__init__(id)
        self._start = start
        self._index: FlowIndex | None = None
        self._index_epoch = -1

    @property
    def start(self) -> BaseNode | None:
        return self._start

    @start.setter
    def start(self, node: BaseNode) -> None:
        self._start = node
        _bump_epoch()

    def require_start(self) -> BaseNode:
        if self._start is None:
            raise MissingStart(self.id or "flow")
        return self._start

    def index(self) -> FlowIndex:
        if self._index is None or self._index_epoch != _wiring_epoch:
            self._index = self._build_index()
            self._index_epoch = _wiring_epoch
        return self._index

    def _build_index(self) -> FlowIndex:
        start = self.require_start()
        order: list[BaseNode] = []
        seen = {start}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            order.append(node)
            for succ in node.successors.values():
                if succ not in seen:
                    seen.add(succ)
                    queue.append(succ)
        label = self.id or "flow"
        ids: dict[BaseNode, str] = {}
        nodes: dict[str, BaseNode] = {}
        for ordinal, node in enumerate(order):
            node_id = node.id if node.id is not None else f"{label}.{ordinal}"
            if node_id in nodes:
                raise DuplicateNodeId(node_id)
            ids[node] = node_id
            nodes[node_id] = node
        return FlowIndex(ids, nodes, tuple(order))

    def run(
        self,
        shared: SharedStore | dict[str, Any] | None = None,
        limits: RunLimits | None = None,
        *,
        clock: WaitProvider | None = None,
    ) -> FlowOutcome:
        return run_flow(self, shared, limits, clock=clock)

    async def run_async(
        self,
        shared: SharedStore | dict[str, Any] | None = None,
        limits: RunLimits | None = None,
        *,
        clock: WaitProvider | None = None,
    ) -> FlowOutcome:
        return await run_flow_nonblocking(self, shared, limits, clock=clock)

    def _run_body(self, run: _Run, shared: SharedStore, prefix: str) -> str:
        with run.entering(self):
            return _orchestrate(self, shared, run, prefix, self.require_start())

    async def _run_body_async(self, run: _Run, shared: SharedStore, prefix: str) -> str:
        with run.entering(self):
            return await _orchestrate_async(self, shared, run, prefix, self.require_start())

    def _invoke(self, run: _Run, shared: SharedStore, path: str) -> str:
        return self._run_body(run, shared, path + "/")

    async def _invoke_async(self, run: _Run, shared: SharedStore, path: str) -> str:
        return await self._run_body_async(run, shared, path + "/")


@dataclass(frozen=True)
class RunLimits:
    max_steps: int = 10_000

    def __post_init__(self) -> None:
        if isinstance(self.max_steps, bool) or not isinstance(self.max_steps, int) or self.max_steps < 1:
            raise ValueError(f"max_steps must be a positive integer, got {self.max_steps!r}")


class TraceStep(NamedTuple):
    step: int
    node_id: str
    action: str


@dataclass
class FlowOutcome:
    store: SharedStore
    terminal_action: str
    trace: list[TraceStep] = field(default_factory=list)

    @property
    def final_store(self) -> SharedStore:
        return self.store


def format_trace(trace: list[TraceStep]) -> str:
    """One ``step<TAB>node_id<TAB>action`` line per step."""
    return "".join(f"{s.step}\t{s.node_id}\t{s.action}\n" for s in trace)


StepHook = Callable[[int, str, str, SharedStore], None]


class _Run:
    """Bookkeeping shared by every level of one run: step budget, trace, hooks."""

    def __init__(
        self,
        limits: RunLimits,
        clock: WaitProvider,
        *,
        shared: SharedStore,
        on_step: StepHook | None = None,
        first_step: int = 0,
        cancel: threading.Event | None = None,
    ) -> None:
        self.limits = limits
        self.clock = clock
        self.shared = shared
        self.on_step = on_step
        self.step = first_step
        self.trace: list[TraceStep] = []
        self.cancel = cancel
        self._active: set[int] = set()

    @contextmanager
    def entering(self, flow: Flow) -> Iterator[None]:
        key = id(flow)
        if key in self._active:
            raise NestingCycle(flow.id or "flow")
        self._active.add(key)
        try:
            yield
        finally:
            self._active.discard(key)

    def _begin(self) -> None:
        if self.cancel is not None and self.cancel.is_set():
            raise RunCancelled()
        if self.step >= self.limits.max_steps:
            raise StepLimitExceeded(self.limits.max_steps)

    def _finish(self, path: str, action: str) -> None:
        step = self.step
        self.trace.append(TraceStep(step, path, action))
        self.step += 1
        if self.on_step is not None:
            self.on_step(step, path, action, self.shared)

    def leaf(self, path: str, body: Callable[[], str]) -> str:
        self._begin()
        try:
            action = body()
        except NodeError as exc:
            if exc.node_id is None:
                exc.node_id = path
            raise
        self._finish(path, action)
        return action

    async def leaf_async(self, path: str, body: Callable[[], Awaitable[str]]) -> str:
        self._begin()
        try:
            action = await body()
        except NodeError as exc:
            if exc.node_id is None:
                exc.node_id = path
            raise
        self._finish(path, action)
        return action


def _orchestrate(flow: Flow, shared: SharedStore, run: _Run, prefix: str, node: BaseNode) -> str:
    ids = flow.index().ids
    while True:
        action = node._invoke(run, shared, prefix + ids[node])
        nxt = next_node(node, action)
        if nxt is None:
            return action
        node = nxt


async def _orchestrate_async(flow: Flow, shared: SharedStore, run: _Run, prefix: str, node: BaseNode) -> str:
    ids = flow.index().ids
    while True:
        action = await node._invoke_async(run, shared, prefix + ids[node])
        nxt = next_node(node, action)
        if nxt is None:
            return action
        node = nxt


def _resume_within(
    flow: Flow,
    shared: SharedStore,
    run: _Run,
    prefix: str,
    segments: list[str],
    action: str,
) -> str:
    """Continue ``flow`` after the node at ``segments`` returned ``action``.

    Walks down into nested flows along the path, then unwinds: each level looks
    up the successor of the completed child and keeps orchestrating from there.
    """
    node = flow.index().nodes.get(segments[0])
    if node is None:
        raise KeyError("/".join(segments))
    if len(segments) > 1:
        if type(node) is not Flow:
            raise KeyError("/".join(segments))
        with run.entering(node):
            action = _resume_within(node, shared, run, prefix + segments[0] + "/", segments[1:], action)
    nxt = next_node(node, action)
    if nxt is None:
        return action
    return _orchestrate(flow, shared, run, prefix, nxt)


def _check_flow(flow: object) -> Flow:
    if not isinstance(flow, Flow):
        raise TypeError(f"expected a Flow, got {type(flow).__name__}")
    return flow


def _drive(run: _Run, body: Callable[[], str]) -> FlowOutcome:
    try:
        action = body()
    except FlowError as exc:
        exc.trace = list(run.trace)
        raise
    return FlowOutcome(run.shared, action, run.trace)


def run_flow(
    flow: Flow,
    store: SharedStore | dict[str, Any] | None = None,
    limits: RunLimits | None = None,
    *,
    clock: WaitProvider | None = None,
    on_step: StepHook | None = None,
    cancel: threading.Event | None = None,
) -> FlowOutcome:
    """Run ``flow`` to completion on ``store`` (mutated in place).

    Raises :class:`StepLimitExceeded` once ``limits.max_steps`` node executions
    (nested ones included) have happened; phase errors carry the trace so far.
    """
    flow = _check_flow(flow)
    shared = SharedStore.coerce(store)
    run = _Run(limits or RunLimits(), clock or REAL_CLOCK, shared=shared, on_step=on_step, cancel=cancel)

    return _drive(run, lambda: flow._run_body(run, shared, ""))


def continue_flow(
    flow: Flow,
    store: SharedStore,
    node_path: str,
    action: str,
    limits: RunLimits | None = None,
    *,
    first_step: int = 0,
    clock: WaitProvider | None = None,
    on_step: StepHook | None = None,
    cancel: threading.Event | None = None,
) -> FlowOutcome:
    """Pick up a run as if the node at ``node_path`` had just returned ``action``.

    ``node_path`` is a hierarchical id such as ``"payment/validate"``. Raises
    KeyError if the path does not name a node reachable in ``flow``.
    """
    flow = _check_flow(flow)
    run = _Run(
        limits or RunLimits(),
        clock or REAL_CLOCK,
        shared=store,
        on_step=on_step,
        first_step=first_step,
        cancel=cancel,
    )

    def body() -> str:
        with run.entering(flow):
            return _resume_within(flow, store, run, "", node_path.split("/"), action)

    return _drive(run, body)


async def run_flow_nonblocking(
    flow: Flow,
    store: SharedStore | dict[str, Any] | None = None,
    limits: RunLimits | None = None,
    *,
    clock: WaitProvider | None = None,
) -> FlowOutcome:
    """Awaitable run that lets :class:`AsyncNode` phases suspend.

    Blocking nodes are called inline, so for a flow without async nodes the
    outcome is identical to :func:`run_flow`.
    """
    flow = _check_flow(flow)
    shared = SharedStore.coerce(store)
    run = _Run(limits or RunLimits(), clock or REAL_CLOCK, shared=shared)
    try:
        action = await flow._run_body_async(run, shared, "")
    except FlowError as exc:
        exc.trace = list(run.trace)
        raise
    return FlowOutcome(shared, action, run.trace)


def execute_node(
    node: BaseNode,
    store: SharedStore | dict[str, Any] | None = None,
    *,
    clock: WaitProvider | None = None,
    limits: RunLimits | None = None,
) -> str:
    """Run one node (or a flow, as a node) on ``store`` and return its action."""
    shared = SharedStore.coerce(store)
    run = _Run(limits or RunLimits(), clock or REAL_CLOCK, shared=shared)
    try:
        return node._invoke(run, shared, node.id or type(node).__name__)
    except FlowError as exc:
        exc.trace = list(run.trace)
        raise


def run_nested(
    flow: Flow,
    store: SharedStore | dict[str, Any] | None = None,
    limits: RunLimits | None = None,
) -> str:
    """Run ``flow`` the way a parent flow would and return its terminal action."""
    return execute_node(_check_flow(flow), store, limits=limits)
