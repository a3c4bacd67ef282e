from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowgraph import Flow, Node, RunLimits, extract_ndg, run_flow
from flowgraph.errors import StepLimitExceeded
from flowgraph.tm import (
    BINARY_FLIP,
    LEFT,
    RIGHT,
    UNARY_APPEND,
    IncompleteDelta,
    StateNode,
    TMSpec,
    TMSpecError,
    compile_tm,
    interpret_tm,
    random_machine,
    random_tape,
    random_trials,
    run_compiled,
    tape_from_text,
    tape_to_text,
    tm_store,
    verify_equivalence,
)

IMMEDIATE = TMSpec(
    states=frozenset({"q", "halt"}),
    alphabet=frozenset({"0", "1"}),
    blank="0",
    delta={("q", "0"): ("1", RIGHT, "halt"), ("q", "1"): ("1", RIGHT, "halt")},
    start="q",
    halting=frozenset({"halt"}),
)

LOOP = TMSpec(
    states=frozenset({"spin", "halt"}),
    alphabet=frozenset({"0"}),
    blank="0",
    delta={("spin", "0"): ("0", RIGHT, "spin")},
    start="spin",
    halting=frozenset({"halt"}),
)


def hand_simulate(delta, start, halting, cells, blank, limit):
    """Second, deliberately naive simulator over a Python list tape."""
    offset = limit + 16
    tape = [blank] * (2 * offset + 16)
    for pos, sym in cells.items():
        tape[pos + offset] = sym
    head, state, steps = offset, start, 0
    while state not in halting and steps < limit:
        write, move, state = delta[(state, tape[head])]
        tape[head] = write
        head += 1 if move == "R" else -1
        steps += 1
    text = "".join(tape).strip(blank)
    return text, state in halting, steps


class TestCompile:
    def test_node_per_working_state(self):
        flow = compile_tm(BINARY_FLIP)
        ndg = extract_ndg(flow)
        assert ndg.V == {"flip"}
        assert ndg.L == {("flip", "flip"): {"flip"}}

    def test_immediate_halt_has_no_successors(self):
        flow = compile_tm(IMMEDIATE)
        assert flow.start.id == "q" and flow.start.successors == {}

    def test_totality(self):
        rng = random.Random(3)
        for _ in range(20):
            spec = random_machine(rng)
            flow = compile_tm(spec)
            nodes = flow.index().nodes
            for (state, symbol), (_, _, nxt) in spec.delta.items():
                if state not in nodes:
                    continue  # unreachable from the start state
                if nxt in spec.halting:
                    assert nxt not in nodes[state].successors
                else:
                    assert nodes[state].successors[nxt] is nodes[nxt]

    def test_incomplete_delta(self):
        broken = TMSpec(
            states=UNARY_APPEND.states,
            alphabet=UNARY_APPEND.alphabet,
            blank="_",
            delta={("scan", "1"): ("1", RIGHT, "scan")},
            start="scan",
            halting=UNARY_APPEND.halting,
        )
        with pytest.raises(IncompleteDelta) as info:
            compile_tm(broken)
        assert (info.value.state, info.value.symbol) == ("scan", "_")

    def test_halting_start_not_compiled(self):
        spec = TMSpec(frozenset({"h"}), frozenset({"0"}), "0", {}, "h", frozenset({"h"}))
        with pytest.raises(TMSpecError):
            compile_tm(spec)
        assert run_compiled(spec, {}, 10).steps == 0

    def test_store_layout(self):
        outcome = run_flow(compile_tm(UNARY_APPEND), tm_store(tape_from_text("11")))
        assert set(outcome.store) == {"tape", "head"}
        assert outcome.store["tape"] == {"0": "1", "1": "1", "2": "1"}
        assert outcome.store["head"] == 3


class TestInterpreter:
    def test_unary_append(self):
        result = interpret_tm(UNARY_APPEND, tape_from_text("111"), 100)
        assert tape_to_text(result.tape, "_") == "1111"
        assert result.halted and result.steps == 4

    def test_binary_flip(self):
        result = interpret_tm(BINARY_FLIP, tape_from_text("0110"), 100)
        assert tape_to_text(result.tape, "_") == "1001" and result.steps == 5

    def test_immediate_halt_machine(self):
        spec = TMSpec(frozenset({"h"}), frozenset({"0"}), "0", {}, "h", frozenset({"h"}))
        result = interpret_tm(spec, {}, 10)
        assert result.tape == {} and result.halted and result.steps == 0

    def test_step_limit(self):
        with pytest.raises(StepLimitExceeded):
            interpret_tm(LOOP, {}, 100)

    def test_left_moves_and_negative_cells(self):
        spec = TMSpec(
            states=frozenset({"a", "b", "h"}),
            alphabet=frozenset({"0", "1"}),
            blank="0",
            delta={
                ("a", "0"): ("1", LEFT, "b"),
                ("a", "1"): ("1", LEFT, "b"),
                ("b", "0"): ("1", LEFT, "h"),
                ("b", "1"): ("0", RIGHT, "h"),
            },
            start="a",
            halting=frozenset({"h"}),
        )
        result = interpret_tm(spec, {}, 10)
        assert result.tape == {0: "1", -1: "1"} and result.head == -2
        assert run_compiled(spec, {}, 10) == result


class TestEquivalence:
    def test_unary_append_tapes(self):
        tapes = [tape_from_text(t) for t in ("", "1", "111")]
        report = verify_equivalence(UNARY_APPEND, tapes, 100)
        assert report.ok and report.halted == 3
        assert report.results == [("", "1"), ("1", "11"), ("111", "1111")]

    def test_both_time_out(self):
        report = verify_equivalence(LOOP, [{}], 50)
        assert report.ok and report.timeouts == 1

    def test_corrupted_compiler_detected(self):
        class NoMove(StateNode):
            def post(self, shared, symbol, transition):
                write, _, nxt = transition
                shared["tape"][str(shared["head"])] = write
                return nxt

        report = verify_equivalence(
            UNARY_APPEND, [tape_from_text("111")], 50, compiler=lambda s: compile_tm(s, NoMove)
        )
        assert not report.ok
        assert "MISMATCH" in report.format()

    def test_off_by_one_step_detected(self):
        class Extra(Node):
            def post(self, shared, p, e):
                return "default"

        def compiler(spec):
            flow = compile_tm(spec)
            pre = Extra("pre")
            pre >> flow.start
            return Flow(pre, id="tm")

        report = verify_equivalence(BINARY_FLIP, [tape_from_text("01")], 50, compiler=compiler)
        assert [m.field for m in report.mismatches] == ["steps"]

    def test_foreign_tape_symbol(self):
        with pytest.raises(TMSpecError):
            verify_equivalence(UNARY_APPEND, [tape_from_text("2")], 10)

    def test_spec_documents(self):
        assert TMSpec.from_document(UNARY_APPEND.to_document()) == UNARY_APPEND
        with pytest.raises(TMSpecError):
            TMSpec.loads("{")
        with pytest.raises(TMSpecError):
            TMSpec.loads('{"states": []}')


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32))
def test_random_machine_alignment(seed):
    rng = random.Random(seed)
    spec = random_machine(rng)
    tape = random_tape(rng)
    limit = 200
    try:
        oracle = interpret_tm(spec, tape, limit)
    except StepLimitExceeded:
        with pytest.raises(StepLimitExceeded):
            run_flow(compile_tm(spec), tm_store(tape), RunLimits(limit))
        return
    outcome = run_flow(compile_tm(spec), tm_store(tape), RunLimits(limit))
    assert len(outcome.trace) == oracle.steps
    naive = hand_simulate(spec.delta, spec.start, spec.halting, tape, spec.blank, limit)
    assert naive == (tape_to_text(oracle.tape, spec.blank), True, oracle.steps)
    engine_tape = {int(k): v for k, v in outcome.store["tape"].items()}
    assert tape_to_text(engine_tape, spec.blank) == naive[0]


def test_random_trials_small():
    results = random_trials(5, 3, 200, seed=11)
    assert len(results) == 5
    assert all(report.ok and report.cases == 3 for _, report in results)
