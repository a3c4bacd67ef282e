"""``flowgraph`` command line: run, resume, validate, tm and bench.

Exit codes:

====  ==========================================================
0     success
1     invalid document or machine, validation errors, tm mismatch
2     step limit exceeded
3     node error
4     wall-clock timeout
5     checkpoint fingerprint does not match the workflow
6     checkpoint could not be written or read
64    usage error
====  ==========================================================
"""

from __future__ import annotations

import argparse
import os
import random
import sys
import threading
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, NoReturn

from .bench import KINDS as BENCH_KINDS
from .bench import bench_scaling, format_table
from .durability import FileSink, checkpointed_run, load_last_checkpoint, resume
from .engine import FlowOutcome, RunLimits, format_trace, run_flow
from .errors import (
    DurabilityError,
    FingerprintMismatch,
    FlowError,
    FlowGraphError,
    NoCheckpoint,
    NodeError,
    RunCancelled,
    SerializationError,
    StepLimitExceeded,
    StoreError,
)
from .graph import has_errors, to_dot, validate
from .store import canonical_serialize, loads_value
from .tm import TMSpec, random_tape, tape_from_text, verify_equivalence
from .workflow import build_flow, parse_document, unknown_kinds

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_STEP_LIMIT = 2
EXIT_NODE_ERROR = 3
EXIT_TIMEOUT = 4
EXIT_FINGERPRINT = 5
EXIT_CHECKPOINT = 6
EXIT_USAGE = 64

ENV_MAX_STEPS = "FLOW_MAX_STEPS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def exit_code_for(exc: BaseException) -> int:
    """Map an outcome class to its exit code."""
    if isinstance(exc, StepLimitExceeded):
        return EXIT_STEP_LIMIT
    if isinstance(exc, (RunCancelled, TimeoutError)):
        return EXIT_TIMEOUT
    if isinstance(exc, FingerprintMismatch):
        return EXIT_FINGERPRINT
    if isinstance(exc, (DurabilityError, SerializationError)):
        return EXIT_CHECKPOINT
    if isinstance(exc, (NodeError, FlowError)):
        return EXIT_NODE_ERROR
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    return EXIT_INVALID


def _parse_input(items: Sequence[str]) -> dict[str, Any]:
    store: dict[str, Any] = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--input expects key=json-value, got {item!r}")
        try:
            store[key] = loads_value(raw)
        except StoreError as exc:
            raise UsageError(f"--input {key}: value is not valid JSON ({exc})") from exc
    return store


def _max_steps(arg: int | None) -> RunLimits:
    if arg is None:
        env = os.environ.get(ENV_MAX_STEPS)
        if env is None:
            return RunLimits()
        try:
            arg = int(env)
        except ValueError:
            raise UsageError(f"{ENV_MAX_STEPS} must be an integer, got {env!r}") from None
    if arg < 1:
        raise UsageError("--max-steps must be positive")
    return RunLimits(arg)


def _supervised(body: Callable[[threading.Event], FlowOutcome], timeout_ms: int | None) -> FlowOutcome:
    """Run ``body`` on a worker thread, cancelling it after ``timeout_ms``."""
    cancel = threading.Event()
    if timeout_ms is None:
        return body(cancel)
    box: dict[str, Any] = {}

    def target() -> None:
        try:
            box["outcome"] = body(cancel)
        except BaseException as exc:  # noqa: BLE001 - re-raised on the main thread
            box["error"] = exc

    worker = threading.Thread(target=target, name="flow-run", daemon=True)
    worker.start()
    worker.join(timeout_ms / 1000)
    if worker.is_alive():
        cancel.set()
        raise TimeoutError(f"run exceeded {timeout_ms} ms")
    if "error" in box:
        raise box["error"]
    return box["outcome"]


def _report_failure(exc: BaseException) -> int:
    trace = getattr(exc, "trace", None)
    if trace:
        sys.stderr.write(format_trace(trace))
    sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
    return exit_code_for(exc)


def _emit_outcome(outcome: FlowOutcome) -> int:
    sys.stdout.buffer.write(canonical_serialize(outcome.store) + b"\n")
    sys.stdout.flush()
    sys.stderr.write(format_trace(outcome.trace))
    sys.stderr.write(f"terminal\t{outcome.terminal_action}\n")
    return EXIT_OK


def _load_flow(path: str):
    return build_flow(parse_document(Path(path).read_bytes()))


def cmd_run(args: argparse.Namespace) -> int:
    flow = _load_flow(args.file)
    store = _parse_input(args.input)
    limits = _max_steps(args.max_steps)
    if args.checkpoint:
        Path(args.checkpoint).write_bytes(b"")
        sink = FileSink(args.checkpoint)

        def body(cancel: threading.Event) -> FlowOutcome:
            return checkpointed_run(flow, store, limits, sink, cancel=cancel)

    else:

        def body(cancel: threading.Event) -> FlowOutcome:
            return run_flow(flow, store, limits, cancel=cancel)

    return _emit_outcome(_supervised(body, args.timeout_ms))


def cmd_resume(args: argparse.Namespace) -> int:
    flow = _load_flow(args.file)
    limits = _max_steps(args.max_steps)
    try:
        checkpoint = load_last_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise NoCheckpoint(f"no checkpoint file at {args.checkpoint}") from None
    sink = FileSink(args.checkpoint)
    return _emit_outcome(
        _supervised(lambda cancel: resume(flow, checkpoint, limits, sink, cancel=cancel), args.timeout_ms)
    )


def cmd_validate(args: argparse.Namespace) -> int:
    doc = parse_document(Path(args.file).read_bytes())
    ndg = doc.ndg()
    diags = validate(ndg)
    lines = [d.format() for d in diags]
    lines += [f"ERROR\tUnknownKind\t{where}\tunknown node kind {kind!r}" for where, kind in unknown_kinds(doc)]
    for line in lines:
        print(line)
    if args.dot:
        sys.stdout.write(to_dot(ndg))
    failed = has_errors(diags) or any(line.startswith("ERROR") for line in lines)
    return EXIT_INVALID if failed else EXIT_OK


def cmd_tm(args: argparse.Namespace) -> int:
    spec = TMSpec.loads(Path(args.spec).read_bytes())
    tapes = [tape_from_text(t) for t in (args.tape or [])]
    if args.random:
        rng = random.Random(args.seed)
        symbols = (spec.blank, *sorted(spec.alphabet - {spec.blank}))
        tapes += [random_tape(rng, symbols) for _ in range(args.random)]
    if not tapes:
        tapes = [{}]
    report = verify_equivalence(spec, tapes, args.max_steps)
    for given, final in report.results:
        print(f"{given}\t{'TIMEOUT' if final is None else final}")
    sys.stdout.write(report.format())
    return EXIT_OK if report.ok else EXIT_INVALID


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not sizes:
        raise argparse.ArgumentTypeError("at least one size is required")
    return sizes


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        table = bench_scaling(args.kind, args.sizes, args.iterations)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    sys.stdout.write(format_table(table))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowgraph", description="Run and inspect graph workflows.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a workflow document")
    run.add_argument("file")
    run.add_argument("--input", action="append", default=[], metavar="KEY=JSON", help="initial store entry")
    run.add_argument("--max-steps", type=int, help=f"step budget (default ${ENV_MAX_STEPS} or 10000)")
    run.add_argument("--checkpoint", metavar="PATH", help="write one checkpoint line per completed node")
    run.add_argument("--timeout-ms", type=int, help="cancel the run after this many milliseconds")
    run.set_defaults(handler=cmd_run)

    res = sub.add_parser("resume", help="continue a run from its last checkpoint")
    res.add_argument("file")
    res.add_argument("checkpoint")
    res.add_argument("--max-steps", type=int)
    res.add_argument("--timeout-ms", type=int)
    res.set_defaults(handler=cmd_resume)

    val = sub.add_parser("validate", help="lint a workflow document")
    val.add_argument("file")
    val.add_argument("--dot", action="store_true", help="also print the graph in dot format")
    val.set_defaults(handler=cmd_validate)

    tm = sub.add_parser("tm", help="compile a Turing machine and check it against the interpreter")
    tm.add_argument("spec")
    tm.add_argument("--tape", action="append", help="initial tape, one symbol per character (repeatable)")
    tm.add_argument("--max-steps", type=int, default=500)
    tm.add_argument("--random", type=int, default=0, metavar="M", help="add M random tapes")
    tm.add_argument("--seed", type=int, default=0)
    tm.set_defaults(handler=cmd_tm)

    bench = sub.add_parser("bench", help="scaling micro-benchmarks")
    bench.add_argument("--kind", required=True, choices=BENCH_KINDS)
    bench.add_argument("--sizes", required=True, type=_sizes)
    bench.add_argument("--iterations", type=int, default=1000)
    bench.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except UsageError as exc:
        sys.stderr.write(f"flowgraph: error: {exc}\n")
        return EXIT_USAGE
    except (FlowGraphError, TimeoutError) as exc:
        return _report_failure(exc)
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
