"""Exception hierarchy shared across the engine, store and tooling."""

from __future__ import annotations

from typing import Any


class FlowGraphError(Exception):
    """Root of every error raised by this package."""


# -- store ------------------------------------------------------------------


class StoreError(FlowGraphError):
    pass


class EmptyKey(StoreError):
    def __init__(self) -> None:
        super().__init__("store keys must be non-empty text")


class SerializationError(StoreError):
    """A value tree cannot be written in canonical form.

    ``path`` is the slash-joined key path to the offending value.
    """

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        super().__init__(f"{message} at {path!r}")


class UnserializableHandle(SerializationError):
    def __init__(self, path: str) -> None:
        super().__init__(path, "opaque handle cannot be serialized")


class NonFiniteFloat(SerializationError):
    def __init__(self, path: str) -> None:
        super().__init__(path, "non-finite float cannot be serialized")


class UnsupportedValue(SerializationError):
    def __init__(self, path: str, what: str) -> None:
        super().__init__(path, f"unsupported value ({what})")


class MalformedDocument(StoreError):
    def __init__(self, offset: int, description: str) -> None:
        self.offset = offset
        self.description = description
        super().__init__(f"malformed document at offset {offset}: {description}")


# -- wiring -----------------------------------------------------------------


class WiringError(FlowGraphError):
    pass


class DuplicateBinding(WiringError):
    def __init__(self, action: str, node_id: str | None = None) -> None:
        self.action = action
        self.node_id = node_id
        where = f" on {node_id!r}" if node_id else ""
        super().__init__(f"action {action!r} is already bound{where}")


class EmptyLabel(WiringError):
    def __init__(self) -> None:
        super().__init__("action labels must be non-empty text")


class InvalidNodeId(WiringError):
    pass


class DuplicateNodeId(WiringError):
    def __init__(self, node_id: str) -> None:
        self.node_id = node_id
        super().__init__(f"node id {node_id!r} is used by more than one node in the same flow")


class NestingCycle(WiringError):
    def __init__(self, flow_id: str) -> None:
        self.flow_id = flow_id
        super().__init__(f"flow {flow_id!r} contains itself")


class MissingStart(WiringError):
    def __init__(self, flow_id: str) -> None:
        super().__init__(f"flow {flow_id!r} has no start node")


# -- runs -------------------------------------------------------------------


class FlowError(FlowGraphError):
    """An error raised while a flow is running.

    ``trace`` holds the steps completed before the failure and ``iteration`` the
    batch-flow iteration, when the failure happened inside one.
    """

    def __init__(self, *args: Any) -> None:
        super().__init__(*args)
        self.trace: list = []
        self.iteration: int | None = None


class StepLimitExceeded(FlowError):
    def __init__(self, max_steps: int) -> None:
        self.max_steps = max_steps
        super().__init__(f"step limit of {max_steps} exceeded")


class RunCancelled(FlowError):
    def __init__(self) -> None:
        super().__init__("run cancelled")


class NonBlockingNodeInBlockingRun(FlowError):
    def __init__(self, node_id: str) -> None:
        self.node_id = node_id
        super().__init__(f"node {node_id!r} is non-blocking; run the flow with run_flow_nonblocking")


class NodeError(FlowError):
    """A node failed in one of its lifecycle phases.

    ``node_id`` is filled in by the engine once the failing node is known.
    """

    phase = "?"

    def __init__(self, cause: BaseException | None = None, node_id: str | None = None) -> None:
        self.cause = cause
        self.node_id = node_id
        super().__init__()
        if cause is not None:
            self.__cause__ = cause

    def __str__(self) -> str:
        where = self.node_id or "<node>"
        return f"{where}: {self.phase} failed: {self.cause!r}"


class PrepFailed(NodeError):
    phase = "prep"


class PostFailed(NodeError):
    phase = "post"


class PrepNotAList(NodeError):
    phase = "prep"

    def __init__(self, got: Any, node_id: str | None = None) -> None:
        super().__init__(TypeError(f"batch prep must return a list, got {type(got).__name__}"), node_id)


class InvalidAction(NodeError):
    phase = "post"


class ExecExhausted(NodeError):
    """Every exec attempt failed and no fallback was defined.

    ``index`` is the batch element index for batch nodes, otherwise None.
    """

    phase = "exec"

    def __init__(
        self,
        last_error: BaseException,
        attempts: int,
        index: int | None = None,
        node_id: str | None = None,
    ) -> None:
        self.last_error = last_error
        self.attempts = attempts
        self.index = index
        super().__init__(last_error, node_id)

    def __str__(self) -> str:
        where = self.node_id or "<node>"
        elem = f" (element {self.index})" if self.index is not None else ""
        return f"{where}: exec failed after {self.attempts} attempt(s){elem}: {self.last_error!r}"


class FallbackFailed(NodeError):
    phase = "exec_fallback"

    def __init__(self, error: BaseException, index: int | None = None, node_id: str | None = None) -> None:
        self.error = error
        self.index = index
        super().__init__(error, node_id)


# -- durability -------------------------------------------------------------


class DurabilityError(FlowGraphError):
    pass


class FingerprintMismatch(DurabilityError):
    def __init__(self, expected: str, actual: str) -> None:
        self.expected = expected
        self.actual = actual
        super().__init__(f"checkpoint fingerprint {expected[:12]} does not match flow fingerprint {actual[:12]}")


class CheckpointWriteFailed(DurabilityError):
    pass


class NotCheckpointable(DurabilityError):
    pass


class NoCheckpoint(DurabilityError):
    pass


# -- analysis ---------------------------------------------------------------


class UnknownNode(FlowGraphError):
    def __init__(self, node_id: str) -> None:
        self.node_id = node_id
        super().__init__(f"unknown node {node_id!r}")


# -- workflow documents -----------------------------------------------------


class DocumentError(FlowGraphError):
    """A workflow document that cannot be turned into a flow."""


class ParseError(DocumentError):
    def __init__(self, location: str, message: str) -> None:
        self.location = location
        self.message = message
        super().__init__(f"{location}: {message}")


class UnknownKind(DocumentError):
    def __init__(self, kind: str, location: str) -> None:
        self.kind = kind
        self.location = location
        super().__init__(f"{location}: unknown node kind {kind!r}")


class UnresolvedId(DocumentError):
    def __init__(self, node_id: str, location: str) -> None:
        self.node_id = node_id
        self.location = location
        super().__init__(f"{location}: no node or flow with id {node_id!r}")
