"""Compile Turing machines to flows and check them against a direct interpreter.

The compiled flow has one node per non-halting state. The node's ``prep``
reads the symbol under the head from the store, ``exec`` looks up the
transition, and ``post`` writes the cell, moves the head and returns the next
state's name as its action. Transitions into halting states are left unbound,
so the flow terminates exactly when the machine halts and the engine's trace
length equals the machine's step count.

Store layout: ``tape`` maps decimal cell positions (as text) to symbols, with
absent cells reading as blank; ``head`` is an integer.
"""

from __future__ import annotations

import json
import random
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any

from .engine import DEFAULT, Flow, Node, RunLimits, run_flow
from .errors import FlowGraphError, StepLimitExceeded

LEFT = "L"
RIGHT = "R"

Transition = tuple[str, str, str]  # (write, move, next state)


class TMSpecError(FlowGraphError):
    pass


class IncompleteDelta(TMSpecError):
    def __init__(self, state: str, symbol: str) -> None:
        self.state = state
        self.symbol = symbol
        super().__init__(f"no transition for state {state!r} reading {symbol!r}")


@dataclass(frozen=True)
class TMSpec:
    states: frozenset[str]
    alphabet: frozenset[str]
    blank: str
    delta: Mapping[tuple[str, str], Transition]
    start: str
    halting: frozenset[str]

    def check(self) -> None:
        if self.start not in self.states:
            raise TMSpecError(f"start state {self.start!r} is not a state")
        if not self.halting <= self.states:
            raise TMSpecError(f"halting states {sorted(self.halting - self.states)} are not states")
        if self.blank not in self.alphabet:
            raise TMSpecError(f"blank {self.blank!r} is not in the alphabet")
        for (state, symbol), (write, move, nxt) in self.delta.items():
            if state not in self.states or symbol not in self.alphabet:
                raise TMSpecError(f"transition on unknown state/symbol ({state!r}, {symbol!r})")
            if write not in self.alphabet or nxt not in self.states or move not in (LEFT, RIGHT):
                raise TMSpecError(f"bad transition ({state!r}, {symbol!r}) -> {(write, move, nxt)!r}")
        for state in sorted(self.states - self.halting):
            for symbol in sorted(self.alphabet):
                if (state, symbol) not in self.delta:
                    raise IncompleteDelta(state, symbol)

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> TMSpec:
        """Build from the JSON layout: states, alphabet, blank, delta (5-tuples), start, halting."""
        try:
            delta: dict[tuple[str, str], Transition] = {}
            for entry in doc["delta"]:
                state, read, write, move, nxt = entry
                if (state, read) in delta:
                    raise TMSpecError(f"duplicate transition for ({state!r}, {read!r})")
                delta[(state, read)] = (write, move, nxt)
            spec = cls(
                states=frozenset(doc["states"]),
                alphabet=frozenset(doc["alphabet"]),
                blank=doc["blank"],
                delta=delta,
                start=doc["start"],
                halting=frozenset(doc["halting"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TMSpecError(f"malformed machine document: {exc}") from exc
        spec.check()
        return spec

    @classmethod
    def loads(cls, text: str | bytes) -> TMSpec:
        try:
            doc = json.loads(text)
        except ValueError as exc:
            raise TMSpecError(f"machine document is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise TMSpecError("machine document must be a JSON object")
        return cls.from_document(doc)

    def to_document(self) -> dict[str, Any]:
        return {
            "states": sorted(self.states),
            "alphabet": sorted(self.alphabet),
            "blank": self.blank,
            "delta": [[s, r, *self.delta[(s, r)]] for s, r in sorted(self.delta)],
            "start": self.start,
            "halting": sorted(self.halting),
        }


Tape = dict[int, str]


def tape_from_text(text: str, origin: int = 0) -> Tape:
    """One symbol per character, starting at ``origin``."""
    return {origin + i: ch for i, ch in enumerate(text)}


def normalize_tape(tape: Mapping[int, str], blank: str) -> Tape:
    return {pos: sym for pos, sym in tape.items() if sym != blank}


def tape_to_text(tape: Mapping[int, str], blank: str) -> str:
    cells = normalize_tape(tape, blank)
    if not cells:
        return ""
    lo, hi = min(cells), max(cells)
    return "".join(cells.get(i, blank) for i in range(lo, hi + 1))


class StateNode(Node):
    def __init__(self, state: str, spec: TMSpec) -> None:
        super().__init__(state)
        self.state = state
        self.spec = spec

    def prep(self, shared):
        return shared["tape"].get(str(shared["head"]), self.spec.blank)

    def exec(self, symbol):
        return self.spec.delta[(self.state, symbol)]

    def post(self, shared, symbol, transition):
        write, move, nxt = transition
        head = shared["head"]
        shared["tape"][str(head)] = write
        shared["head"] = head + (1 if move == RIGHT else -1)
        return nxt


def compile_tm(spec: TMSpec, node_factory: Callable[[str, TMSpec], Node] = StateNode) -> Flow:
    """Flow simulating ``spec``; node ids are the state names."""
    spec.check()
    if spec.start in spec.halting:
        raise TMSpecError("start state is halting; there is nothing to compile")
    if DEFAULT in spec.states - spec.halting:
        # an unbound halting action would fall back to a "default" edge
        raise TMSpecError(f"a working state may not be named {DEFAULT!r}")
    nodes = {s: node_factory(s, spec) for s in sorted(spec.states - spec.halting)}
    for state, node in nodes.items():
        targets = sorted({spec.delta[(state, sym)][2] for sym in spec.alphabet})
        for nxt in targets:
            if nxt in nodes:
                node - nxt >> nodes[nxt]
    return Flow(start=nodes[spec.start], id="tm")


def tm_store(tape: Mapping[int, str], head: int = 0) -> dict[str, Any]:
    return {"tape": {str(pos): sym for pos, sym in tape.items()}, "head": head}


@dataclass(frozen=True)
class TMResult:
    tape: Tape
    halted: bool
    steps: int
    head: int = 0


def interpret_tm(spec: TMSpec, tape: Mapping[int, str], max_steps: int, head: int = 0) -> TMResult:
    """Small-step reference interpreter. Raises StepLimitExceeded past ``max_steps``."""
    cells = dict(tape)
    state = spec.start
    steps = 0
    while state not in spec.halting:
        if steps >= max_steps:
            raise StepLimitExceeded(max_steps)
        symbol = cells.get(head, spec.blank)
        try:
            write, move, state = spec.delta[(state, symbol)]
        except KeyError:
            raise IncompleteDelta(state, symbol) from None
        cells[head] = write
        head += 1 if move == RIGHT else -1
        steps += 1
    return TMResult(cells, True, steps, head)


def run_compiled(
    spec: TMSpec,
    tape: Mapping[int, str],
    max_steps: int,
    compiler: Callable[[TMSpec], Flow] = compile_tm,
) -> TMResult:
    """Run the compiled flow. A halting start state counts as zero steps."""
    if spec.start in spec.halting:
        return TMResult(dict(tape), True, 0, 0)
    outcome = run_flow(compiler(spec), tm_store(tape), RunLimits(max_steps))
    cells = {int(pos): sym for pos, sym in outcome.store["tape"].items()}
    return TMResult(cells, True, len(outcome.trace), outcome.store["head"])


@dataclass
class Mismatch:
    tape: str
    field: str
    engine: Any
    oracle: Any


@dataclass
class EquivalenceReport:
    cases: int = 0
    halted: int = 0
    timeouts: int = 0
    mismatches: list[Mismatch] = field(default_factory=list)
    results: list[tuple[str, str | None]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def format(self) -> str:
        lines = [
            f"cases\t{self.cases}",
            f"halted\t{self.halted}",
            f"timeouts\t{self.timeouts}",
            f"mismatches\t{len(self.mismatches)}",
        ]
        for m in self.mismatches:
            lines.append(f"MISMATCH\t{m.tape!r}\t{m.field}\tengine={m.engine!r}\toracle={m.oracle!r}")
        return "\n".join(lines) + "\n"


def verify_equivalence(
    spec: TMSpec,
    tapes: Iterable[Mapping[int, str]],
    max_steps: int,
    *,
    compiler: Callable[[TMSpec], Flow] = compile_tm,
) -> EquivalenceReport:
    """Run every tape through the compiled flow and the interpreter and compare.

    Compared: halting status, step count, non-blank tape contents and head.
    Hitting the step limit on both sides counts as agreement.
    """
    report = EquivalenceReport()
    for tape in tapes:
        unknown = set(tape.values()) - spec.alphabet
        if unknown:
            raise TMSpecError(f"tape symbols {sorted(unknown)} are not in the alphabet")
        label = "".join(tape.get(i, spec.blank) for i in range(min(tape, default=0), max(tape, default=-1) + 1))
        report.cases += 1
        try:
            oracle: TMResult | None = interpret_tm(spec, tape, max_steps)
        except StepLimitExceeded:
            oracle = None
        try:
            engine: TMResult | None = run_compiled(spec, tape, max_steps, compiler)
        except StepLimitExceeded:
            engine = None
        if oracle is None and engine is None:
            report.timeouts += 1
            report.results.append((label, None))
            continue
        if oracle is None or engine is None:
            report.mismatches.append(
                Mismatch(label, "halted", engine is not None, oracle is not None)
            )
            continue
        report.halted += 1
        report.results.append((label, tape_to_text(engine.tape, spec.blank)))
        if engine.steps != oracle.steps:
            report.mismatches.append(Mismatch(label, "steps", engine.steps, oracle.steps))
        e_tape = normalize_tape(engine.tape, spec.blank)
        o_tape = normalize_tape(oracle.tape, spec.blank)
        if e_tape != o_tape:
            report.mismatches.append(
                Mismatch(label, "tape", tape_to_text(e_tape, spec.blank), tape_to_text(o_tape, spec.blank))
            )
        if engine.head != oracle.head:
            report.mismatches.append(Mismatch(label, "head", engine.head, oracle.head))
    return report


def random_machine(rng: random.Random, n_states: int = 3, symbols: tuple[str, ...] = ("0", "1")) -> TMSpec:
    """Total machine with ``n_states`` working states plus one halting state.

    ``symbols[0]`` is the blank.
    """
    states = [f"q{i}" for i in range(n_states)]
    targets = [*states, "halt"]
    delta = {
        (s, sym): (rng.choice(symbols), rng.choice((LEFT, RIGHT)), rng.choice(targets))
        for s in states
        for sym in symbols
    }
    return TMSpec(
        states=frozenset(targets),
        alphabet=frozenset(symbols),
        blank=symbols[0],
        delta=delta,
        start=states[0],
        halting=frozenset({"halt"}),
    )


def random_tape(rng: random.Random, symbols: tuple[str, ...] = ("0", "1"), max_len: int = 8) -> Tape:
    return {i: rng.choice(symbols) for i in range(rng.randint(0, max_len))}


def random_trials(
    n_machines: int,
    tapes_per_machine: int,
    max_steps: int,
    seed: int = 0,
    *,
    compiler: Callable[[TMSpec], Flow] = compile_tm,
) -> list[tuple[TMSpec, EquivalenceReport]]:
    rng = random.Random(seed)
    out = []
    for _ in range(n_machines):
        spec = random_machine(rng)
        tapes = [random_tape(rng) for _ in range(tapes_per_machine)]
        out.append((spec, verify_equivalence(spec, tapes, max_steps, compiler=compiler)))
    return out


UNARY_APPEND = TMSpec(
    states=frozenset({"scan", "halt"}),
    alphabet=frozenset({"1", "_"}),
    blank="_",
    delta={("scan", "1"): ("1", RIGHT, "scan"), ("scan", "_"): ("1", RIGHT, "halt")},
    start="scan",
    halting=frozenset({"halt"}),
)

BINARY_FLIP = TMSpec(
    states=frozenset({"flip", "halt"}),
    alphabet=frozenset({"0", "1", "_"}),
    blank="_",
    delta={
        ("flip", "0"): ("1", RIGHT, "flip"),
        ("flip", "1"): ("0", RIGHT, "flip"),
        ("flip", "_"): ("_", LEFT, "halt"),
    },
    start="flip",
    halting=frozenset({"halt"}),
)
