"""Batch, parameter-sweep and parallel-batch variants, plus the async channel.

* :class:`BatchNode` - ``prep`` returns a list; ``exec`` runs per element, in
  order, each element under its own retry budget.
* :class:`BatchFlow` - runs its graph once per parameter set. Each set is a
  temporary overlay on the store that is undone after its iteration.
* :class:`AsyncParallelBatchNode` - like ``BatchNode`` but the per-element
  ``exec_async`` calls run concurrently (bounded by ``max_concurrency``) and
  results still reach ``post`` in input order. The first element failure
  cancels the rest.
"""

from __future__ import annotations

import asyncio
from collections.abc import Iterator, Mapping
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any

from .engine import (
    DEFAULT,
    AsyncNode,
    Flow,
    Node,
    RunLimits,
    _as_action,
    _orchestrate,
    _orchestrate_async,
    _Run,
    execute_node,
)
from .errors import (
    FlowError,
    NodeError,
    NotCheckpointable,
    PostFailed,
    PrepFailed,
    PrepNotAList,
)
from .reliability import REAL_CLOCK, WaitProvider, exec_with_retry, exec_with_retry_async
from .store import ABSENT, OpaqueHandle, SharedStore


def _require_list(prep_res: Any) -> list[Any]:
    if not isinstance(prep_res, list):
        raise PrepNotAList(prep_res)
    return prep_res


class BatchNode(Node):
    def _exec_phase(self, prep_res: Any, clock: WaitProvider) -> list[Any]:
        items = _require_list(prep_res)
        return [exec_with_retry(self, item, clock, index=i) for i, item in enumerate(items)]


def run_batch_node(node: BatchNode, store: SharedStore | dict[str, Any] | None = None, **kwargs: Any) -> str:
    return execute_node(node, store, **kwargs)


@dataclass
class ParamSet:
    overlay: dict[str, Any] = field(default_factory=dict)


def _overlay_of(params: ParamSet | Mapping[str, Any]) -> Mapping[str, Any]:
    if isinstance(params, ParamSet):
        return params.overlay
    if isinstance(params, Mapping):
        return params
    raise TypeError(f"parameter sets must be mappings, got {type(params).__name__}")


@contextmanager
def param_overlay(shared: SharedStore, params: ParamSet | Mapping[str, Any]) -> Iterator[None]:
    """Bind ``params`` over ``shared`` for the duration of the block, then restore."""
    overlay = _overlay_of(params)
    prior = {key: shared.get(key, ABSENT) for key in overlay}
    for key, value in overlay.items():
        shared[key] = value
    try:
        yield
    finally:
        for key, old in prior.items():
            if old is ABSENT:
                shared.pop(key, None)
            else:
                shared[key] = old


class BatchFlow(Flow):
    """Runs the wrapped graph once per parameter set returned by ``prep``.

    ``post`` receives the list of per-iteration terminal actions.
    """

    def prep(self, shared: SharedStore) -> list[ParamSet | Mapping[str, Any]]:
        return []

    def post(self, shared: SharedStore, prep_res: list[Any], exec_res: list[str]) -> str | None:
        return DEFAULT

    def _params(self, shared: SharedStore, prefix: str) -> list[Any]:
        where = prefix.rstrip("/") or self.describe()
        try:
            params = self.prep(shared)
        except Exception as exc:
            raise PrepFailed(exc, where) from exc
        if not isinstance(params, list):
            raise PrepNotAList(params, where)
        return params

    def _collect(self, shared: SharedStore, params: list[Any], actions: list[str], prefix: str) -> str:
        try:
            result = self.post(shared, params, actions)
        except Exception as exc:
            raise PostFailed(exc, prefix.rstrip("/") or self.describe()) from exc
        try:
            return _as_action(result)
        except NodeError as exc:
            exc.node_id = prefix.rstrip("/") or self.describe()
            raise

    def _run_body(self, run: _Run, shared: SharedStore, prefix: str) -> str:
        if run.on_step is not None:
            raise NotCheckpointable(f"batch flow {self.describe()!r} cannot run under checkpointing")
        with run.entering(self):
            params = self._params(shared, prefix)
            actions: list[str] = []
            for i, p in enumerate(params):
                with param_overlay(shared, p):
                    try:
                        actions.append(_orchestrate(self, shared, run, prefix, self.require_start()))
                    except FlowError as exc:
                        if exc.iteration is None:
                            exc.iteration = i
                        raise
            return self._collect(shared, params, actions, prefix)

    async def _run_body_async(self, run: _Run, shared: SharedStore, prefix: str) -> str:
        with run.entering(self):
            params = self._params(shared, prefix)
            actions: list[str] = []
            for i, p in enumerate(params):
                with param_overlay(shared, p):
                    try:
                        actions.append(await _orchestrate_async(self, shared, run, prefix, self.require_start()))
                    except FlowError as exc:
                        if exc.iteration is None:
                            exc.iteration = i
                        raise
            return self._collect(shared, params, actions, prefix)


def run_batch_flow(
    bflow: BatchFlow,
    store: SharedStore | dict[str, Any] | None = None,
    limits: RunLimits | None = None,
) -> str:
    return execute_node(bflow, store, limits=limits)


def _check_concurrency(max_concurrency: int | None) -> None:
    if max_concurrency is not None and (
        isinstance(max_concurrency, bool) or not isinstance(max_concurrency, int) or max_concurrency < 1
    ):
        raise ValueError(f"max_concurrency must be a positive integer, got {max_concurrency!r}")


async def gather_ordered(
    node: Node,
    items: list[Any],
    max_concurrency: int | None = None,
    clock: WaitProvider = REAL_CLOCK,
) -> list[Any]:
    """Run ``node``'s exec on every item concurrently; results in input order.

    Blocking ``exec`` implementations are pushed to worker threads. The first
    element to fail (after its retries) cancels the outstanding ones and its
    error is raised.
    """
    _check_concurrency(max_concurrency)
    if not items:
        return []
    sem = asyncio.Semaphore(max_concurrency or len(items))
    non_blocking = isinstance(node, AsyncNode)

    async def one(i: int, item: Any) -> Any:
        async with sem:
            if non_blocking:
                return await exec_with_retry_async(node, item, clock, index=i)
            return await asyncio.to_thread(exec_with_retry, node, item, clock, index=i)

    tasks = [asyncio.ensure_future(one(i, item)) for i, item in enumerate(items)]
    position = {task: i for i, task in enumerate(tasks)}
    try:
        done, pending = await asyncio.wait(tasks, return_when=asyncio.FIRST_EXCEPTION)
        failed = sorted(
            (t for t in done if not t.cancelled() and t.exception() is not None),
            key=position.__getitem__,
        )
        if failed:
            raise failed[0].exception()  # type: ignore[misc]
        return [t.result() for t in tasks]
    finally:
        leftovers = [t for t in tasks if not t.done()]
        for t in leftovers:
            t.cancel()
        if leftovers:
            await asyncio.gather(*leftovers, return_exceptions=True)


class AsyncParallelBatchNode(AsyncNode):
    def __init__(
        self,
        id: str | None = None,
        *,
        max_retries: int = 1,
        wait: float = 0.0,
        max_concurrency: int | None = None,
    ) -> None:
        super().__init__(id, max_retries=max_retries, wait=wait)
        _check_concurrency(max_concurrency)
        self.max_concurrency = max_concurrency

    async def _exec_phase_async(self, prep_res: Any, clock: WaitProvider) -> list[Any]:
        return await gather_ordered(self, _require_list(prep_res), self.max_concurrency, clock)


async def run_parallel_batch_node_async(
    node: Node,
    store: SharedStore | dict[str, Any] | None = None,
    max_concurrency: int | None = None,
    *,
    clock: WaitProvider | None = None,
) -> str:
    """Run a batch node's lifecycle with its per-element execs in parallel.

    Works for :class:`BatchNode` (blocking execs go to threads) as well as
    :class:`AsyncParallelBatchNode`, overriding its own ``max_concurrency``.
    """
    _check_concurrency(max_concurrency)
    shared = SharedStore.coerce(store)
    clock = clock or REAL_CLOCK
    run = _Run(RunLimits(), clock, shared=shared)
    non_blocking = isinstance(node, AsyncNode)

    async def lifecycle() -> str:
        try:
            prep_res = await node.prep_async(shared) if non_blocking else node.prep(shared)  # type: ignore[attr-defined]
        except Exception as exc:
            raise PrepFailed(exc) from exc
        exec_res = await gather_ordered(node, _require_list(prep_res), max_concurrency, clock)
        try:
            if non_blocking:
                result = await node.post_async(shared, prep_res, exec_res)  # type: ignore[attr-defined]
            else:
                result = node.post(shared, prep_res, exec_res)
        except Exception as exc:
            raise PostFailed(exc) from exc
        return _as_action(result)

    return await run.leaf_async(node.describe(), lifecycle)


def run_parallel_batch_node(
    node: Node,
    store: SharedStore | dict[str, Any] | None = None,
    max_concurrency: int | None = None,
    *,
    clock: WaitProvider | None = None,
) -> str:
    """Blocking entry point for :func:`run_parallel_batch_node_async`."""
    return asyncio.run(run_parallel_batch_node_async(node, store, max_concurrency, clock=clock))


class Channel(OpaqueHandle):
    """FIFO queue stored in the shared store for cross-flow rendezvous."""

    def __init__(self, name: str = "queue") -> None:
        super().__init__("queue")
        self.name = name
        self.obj = asyncio.Queue()

    async def put(self, item: Any) -> None:
        await self.obj.put(item)

    async def get(self) -> Any:
        return await self.obj.get()

    def task_done(self) -> None:
        self.obj.task_done()

    def qsize(self) -> int:
        return self.obj.qsize()

    def __repr__(self) -> str:
        return f"<Channel {self.name}#{self.handle_id}>"


__all__ = [
    "AsyncParallelBatchNode",
    "BatchFlow",
    "BatchNode",
    "Channel",
    "ParamSet",
    "gather_ordered",
    "param_overlay",
    "run_batch_flow",
    "run_batch_node",
    "run_parallel_batch_node",
    "run_parallel_batch_node_async",
]
