"""Minimal graph workflow engine: nodes, action-labelled edges and a shared store."""

from __future__ import annotations

from .durability import (
    Checkpoint,
    FileSink,
    MemorySink,
    checkpointed_run,
    load_last_checkpoint,
    read_checkpoints,
    resume,
)
from .engine import (
    DEFAULT,
    AsyncNode,
    BaseNode,
    Flow,
    FlowOutcome,
    Node,
    RunLimits,
    TraceStep,
    connect_default,
    connect_on,
    execute_node,
    format_trace,
    next_node,
    run_flow,
    run_flow_nonblocking,
    run_nested,
)
from .errors import *  # noqa: F403
from .graph import NDG, Diagnostic, extract_ndg, flow_fingerprint, reachable, to_dot, validate
from .reliability import RecordingWaitProvider, RetryPolicy, WaitProvider, exec_with_retry
from .store import ABSENT, OpaqueHandle, SharedStore, canonical_serialize, deserialize
from .variants import (
    AsyncParallelBatchNode,
    BatchFlow,
    BatchNode,
    Channel,
    ParamSet,
    run_batch_flow,
    run_batch_node,
    run_parallel_batch_node,
)

__version__ = "0.1.0"
