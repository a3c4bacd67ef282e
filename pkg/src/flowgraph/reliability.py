"""Retry, wait and fallback around a node's exec phase.

``max_retries`` is the total number of attempts, so ``1`` means "try once".
The wait happens only between attempts and never before the fallback.
"""

from __future__ import annotations

import asyncio
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable

from .errors import ExecExhausted, FallbackFailed

if TYPE_CHECKING:
    from .engine import Node


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 1
    wait: float = 0.0

    def __post_init__(self) -> None:
        if isinstance(self.max_retries, bool) or not isinstance(self.max_retries, int) or self.max_retries < 1:
            raise ValueError(f"max_retries must be an integer >= 1, got {self.max_retries!r}")
        if self.wait < 0:
            raise ValueError(f"wait must be non-negative, got {self.wait!r}")


class WaitProvider:
    """Real clock: blocks the thread, or suspends the coroutine."""

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    async def sleep_async(self, seconds: float) -> None:
        if seconds > 0:
            await asyncio.sleep(seconds)


@dataclass
class RecordingWaitProvider(WaitProvider):
    """Records requested waits without sleeping. Meant for tests."""

    waits: list[float] = field(default_factory=list)

    def sleep(self, seconds: float) -> None:
        self.waits.append(seconds)

    async def sleep_async(self, seconds: float) -> None:
        self.waits.append(seconds)


REAL_CLOCK = WaitProvider()


def has_fallback(node: Node) -> bool:
    from .engine import AsyncNode, Node

    cls = type(node)
    if cls.exec_fallback is not Node.exec_fallback:
        return True
    return isinstance(node, AsyncNode) and cls.exec_fallback_async is not AsyncNode.exec_fallback_async


def _attempt_loop(
    call: Callable[[], Any],
    policy: RetryPolicy,
    clock: WaitProvider,
) -> tuple[bool, Any, int]:
    last: BaseException | None = None
    for attempt in range(1, policy.max_retries + 1):
        try:
            return True, call(), attempt
        except Exception as exc:  # retry any ordinary failure
            last = exc
            if attempt < policy.max_retries:
                clock.sleep(policy.wait)
    return False, last, policy.max_retries


def exec_with_retry(
    node: Node,
    prep_res: Any,
    clock: WaitProvider = REAL_CLOCK,
    *,
    index: int | None = None,
) -> Any:
    """Run ``node.exec(prep_res)`` under the node's retry policy.

    On exhaustion the node's ``exec_fallback`` is used if the node overrides it;
    otherwise :class:`ExecExhausted` is raised. ``index`` tags the error with a
    batch element position.
    """
    ok, value, attempts = _attempt_loop(lambda: node.exec(prep_res), node.retry, clock)
    if ok:
        return value
    if not has_fallback(node):
        raise ExecExhausted(value, attempts, index=index)
    try:
        return node.exec_fallback(prep_res, value)
    except Exception as exc:
        raise FallbackFailed(exc, index=index) from exc


async def exec_with_retry_async(
    node: Node,
    prep_res: Any,
    clock: WaitProvider = REAL_CLOCK,
    *,
    index: int | None = None,
) -> Any:
    """Awaitable counterpart of :func:`exec_with_retry` for non-blocking nodes."""
    policy = node.retry
    last: BaseException | None = None
    for attempt in range(1, policy.max_retries + 1):
        try:
            return await node.exec_async(prep_res)
        except Exception as exc:
            last = exc
            if attempt < policy.max_retries:
                await clock.sleep_async(policy.wait)
    assert last is not None
    if not has_fallback(node):
        raise ExecExhausted(last, policy.max_retries, index=index)
    try:
        return await node.exec_fallback_async(prep_res, last)
    except Exception as exc:
        raise FallbackFailed(exc, index=index) from exc
