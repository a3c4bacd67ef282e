"""Per-step checkpoints and resume-after-crash.

A checkpoint is written after every node's ``post`` completes, on the run's own
thread, before the next node starts. Nodes inside nested flows checkpoint with
hierarchical ids such as ``"payment/validate"``; resuming from one walks back
out through the enclosing flows.

File format: one canonical JSON object per line with keys ``action``,
``fingerprint``, ``node``, ``run``, ``step`` and ``store`` (the canonical
store document, embedded as a string).
"""

from __future__ import annotations

import os
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

from .engine import Flow, FlowOutcome, RunLimits, continue_flow, run_flow
from .errors import (
    CheckpointWriteFailed,
    FingerprintMismatch,
    MalformedDocument,
    NoCheckpoint,
)
from .graph import flow_fingerprint
from .reliability import WaitProvider
from .store import SharedStore, canonical_dumps, canonical_serialize, deserialize, loads_value


@dataclass(frozen=True)
class Checkpoint:
    run_id: str
    step: int
    node: str
    action: str
    store: bytes
    fingerprint: str

    def to_line(self) -> bytes:
        doc = {
            "action": self.action,
            "fingerprint": self.fingerprint,
            "node": self.node,
            "run": self.run_id,
            "step": self.step,
            "store": self.store.decode("utf-8"),
        }
        return canonical_dumps(doc).encode("utf-8") + b"\n"

    @classmethod
    def from_line(cls, line: bytes | str) -> Checkpoint:
        doc = loads_value(line)
        expected = {"action", "fingerprint", "node", "run", "step", "store"}
        if not isinstance(doc, dict) or set(doc) != expected:
            raise MalformedDocument(0, "checkpoint line must have exactly the checkpoint keys")
        step = doc["step"]
        if isinstance(step, bool) or not isinstance(step, int) or step < 0:
            raise MalformedDocument(0, "checkpoint step must be a non-negative integer")
        for key in ("action", "fingerprint", "node", "run", "store"):
            if not isinstance(doc[key], str):
                raise MalformedDocument(0, f"checkpoint {key} must be text")
        store = doc["store"].encode("utf-8")
        deserialize(store)
        return cls(doc["run"], step, doc["node"], doc["action"], store, doc["fingerprint"])

    def restore_store(self) -> SharedStore:
        return deserialize(self.store)


class CheckpointSink(Protocol):
    def write(self, checkpoint: Checkpoint) -> None: ...


class MemorySink:
    def __init__(self) -> None:
        self.checkpoints: list[Checkpoint] = []

    def write(self, checkpoint: Checkpoint) -> None:
        self.checkpoints.append(checkpoint)

    @property
    def last(self) -> Checkpoint:
        if not self.checkpoints:
            raise NoCheckpoint("no checkpoint written")
        return self.checkpoints[-1]


class FileSink:
    """Appends one line per checkpoint and fsyncs before returning."""

    def __init__(self, path: str | os.PathLike[str], *, fsync: bool = True) -> None:
        self.path = Path(path)
        self.fsync = fsync

    def write(self, checkpoint: Checkpoint) -> None:
        with open(self.path, "ab") as fh:
            fh.write(checkpoint.to_line())
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())


def read_checkpoints(path: str | os.PathLike[str]) -> list[Checkpoint]:
    """Every well-formed checkpoint line in file order; torn lines are skipped."""
    out = []
    with open(path, "rb") as fh:
        for line in fh:
            if not line.endswith(b"\n"):
                continue
            try:
                out.append(Checkpoint.from_line(line))
            except MalformedDocument:
                continue
    return out


def load_last_checkpoint(path: str | os.PathLike[str]) -> Checkpoint:
    checkpoints = read_checkpoints(path)
    if not checkpoints:
        raise NoCheckpoint(f"no well-formed checkpoint in {path}")
    return checkpoints[-1]


def _hook(run_id: str, fingerprint: str, sink: CheckpointSink, cancel: threading.Event | None):
    def on_step(step: int, node: str, action: str, shared: SharedStore) -> None:
        payload = canonical_serialize(shared)
        if cancel is not None and cancel.is_set():
            return
        checkpoint = Checkpoint(run_id, step, node, action, payload, fingerprint)
        try:
            sink.write(checkpoint)
        except Exception as exc:
            raise CheckpointWriteFailed(f"checkpoint sink failed at step {step}: {exc}") from exc

    return on_step


def checkpointed_run(
    flow: Flow,
    store: SharedStore | dict[str, Any] | None,
    limits: RunLimits | None,
    sink: CheckpointSink,
    *,
    run_id: str | None = None,
    clock: WaitProvider | None = None,
    cancel: threading.Event | None = None,
) -> FlowOutcome:
    """:func:`run_flow` plus one checkpoint per completed node.

    Raises :class:`UnserializableHandle` at the first step boundary where the
    store holds an opaque handle, and :class:`CheckpointWriteFailed` if the sink
    fails; either way the run stops there.
    """
    fingerprint = flow_fingerprint(flow)
    hook = _hook(run_id or uuid.uuid4().hex, fingerprint, sink, cancel)
    return run_flow(flow, store, limits, clock=clock, on_step=hook, cancel=cancel)


def resume(
    flow: Flow,
    checkpoint: Checkpoint,
    limits: RunLimits | None,
    sink: CheckpointSink,
    *,
    clock: WaitProvider | None = None,
    cancel: threading.Event | None = None,
) -> FlowOutcome:
    """Continue a run from ``checkpoint`` as if it had never stopped.

    The restored store is the checkpoint's; step numbering continues after the
    checkpoint's step and new checkpoints go to ``sink`` under the same run id.
    """
    fingerprint = flow_fingerprint(flow)
    if fingerprint != checkpoint.fingerprint:
        raise FingerprintMismatch(checkpoint.fingerprint, fingerprint)
    shared = checkpoint.restore_store()
    hook = _hook(checkpoint.run_id, fingerprint, sink, cancel)
    try:
        return continue_flow(
            flow,
            shared,
            checkpoint.node,
            checkpoint.action,
            limits,
            first_step=checkpoint.step + 1,
            clock=clock,
            on_step=hook,
            cancel=cancel,
        )
    except KeyError as exc:
        # Unreachable when the fingerprints agree; kept for hand-made checkpoints.
        raise MalformedDocument(0, f"checkpoint node {checkpoint.node!r} not found in flow") from exc


__all__ = [
    "Checkpoint",
    "CheckpointSink",
    "FileSink",
    "MemorySink",
    "checkpointed_run",
    "flow_fingerprint",
    "load_last_checkpoint",
    "read_checkpoints",
    "resume",
]
