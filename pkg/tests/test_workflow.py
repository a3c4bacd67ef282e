from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowgraph import RunLimits, extract_ndg, run_flow
from flowgraph.errors import (
    DuplicateBinding,
    DuplicateNodeId,
    ExecExhausted,
    ParseError,
    PrepFailed,
    StepLimitExceeded,
    UnknownKind,
    UnresolvedId,
)
from flowgraph.workflow import build_flow, parse_document, parse_workflow, render_template, unknown_kinds


def doc(nodes, edges, start="a", flows=None, **extra):
    body = {"id": "w", "start": start, "nodes": nodes, "edges": edges, **extra}
    if flows is not None:
        body["flows"] = flows
    return json.dumps(body)


def set_node(id, key="k", value=1, **params):
    return {"id": id, "kind": "set", "params": {"key": key, "value": value, **params}}


def edge(a, b, action="default"):
    return {"from": a, "action": action, "to": b}


class TestKinds:
    def test_set_then_template(self):
        flow = parse_workflow(
            doc(
                [set_node("a", "name", "Bo"), {"id": "b", "kind": "template", "params": {"template": "hi {name}", "target": "out"}}],
                [edge("a", "b")],
            )
        )
        assert run_flow(flow).store["out"] == "hi Bo"

    @pytest.mark.parametrize(
        "template,values,expected",
        [
            ("{a}-{b}", {"a": "x", "b": "y"}, "x-y"),
            ("{{a}} {a}", {"a": "x"}, "{a} x"),
            ("n={n}", {"n": [1, {"z": 2.5}]}, 'n=[1,{"z":2.5}]'),
            ("plain", {}, "plain"),
        ],
    )
    def test_render(self, template, values, expected):
        assert render_template(template, values) == expected

    def test_template_missing_key(self):
        flow = parse_workflow(doc([{"id": "a", "kind": "template", "params": {"template": "{nope}", "target": "t"}}], []))
        with pytest.raises(PrepFailed) as info:
            run_flow(flow)
        assert info.value.cause.key == "nope"

    @pytest.mark.parametrize("value,expected", [(3, "small"), (10, "big"), (None, "other")])
    def test_branch(self, value, expected):
        branch = {
            "id": "a",
            "kind": "branch",
            "params": {
                "key": "x",
                "cases": [{"op": "lt", "value": 5, "action": "small"}, {"op": "ge", "value": 10, "action": "big"}],
                "otherwise": "other",
            },
        }
        store = {} if value is None else {"x": value}
        assert run_flow(parse_workflow(doc([branch], [])), store).terminal_action == expected

    def test_counter_loop(self):
        flow = parse_workflow(
            doc(
                [{"id": "a", "kind": "counter", "params": {"key": "i", "limit": 4}}, {"id": "log", "kind": "append", "params": {"key": "seen", "value": 1}}],
                [edge("a", "log", "continue"), edge("log", "a")],
            )
        )
        outcome = run_flow(flow)
        assert outcome.store["i"] == 4 and outcome.store["seen"] == [1, 1, 1]
        assert outcome.terminal_action == "done"

    def test_fail_n_with_retry(self):
        node = {"id": "a", "kind": "fail_n", "params": {"n": 2}, "retry": {"max_retries": 3, "wait_ms": 0}}
        assert run_flow(parse_workflow(doc([node], []))).store["result"] is True

    def test_fail_n_without_enough_retries(self):
        node = {"id": "a", "kind": "fail_n", "params": {"n": 2}, "retry": {"max_retries": 2}}
        with pytest.raises(ExecExhausted):
            run_flow(parse_workflow(doc([node], [])))

    def test_fresh_nodes_per_build(self):
        parsed = parse_document(doc([{"id": "a", "kind": "fail_n", "params": {"n": 1}, "retry": {"max_retries": 2}}], []))
        for _ in range(2):
            assert run_flow(build_flow(parsed)).store["result"] is True

    def test_order_pipeline_kind(self, workflows_dir):
        flow = parse_workflow((workflows_dir / "order.json").read_bytes())
        store = {"order": {"id": "Z9", "amount": 5, "items": {"widget": 1}}, "stock": {"widget": 3}}
        assert run_flow(flow, store).store["shipping_label"] == "LABEL-Z9-1"


class TestErrors:
    def test_unresolved_edge(self):
        with pytest.raises(UnresolvedId) as info:
            parse_workflow(doc([set_node("a")], [edge("a", "ghost")]))
        assert info.value.node_id == "ghost" and info.value.location == "edges[0].to"

    def test_unresolved_start(self):
        with pytest.raises(UnresolvedId):
            parse_workflow(doc([set_node("a")], [], start="b"))

    def test_unknown_kind(self):
        text = doc([set_node("a"), {"id": "b", "kind": "teleport"}], [edge("a", "b")])
        with pytest.raises(UnknownKind) as info:
            parse_workflow(text)
        assert info.value.kind == "teleport"
        assert unknown_kinds(parse_document(text)) == [("nodes[1]", "teleport")]

    def test_duplicate_binding(self):
        with pytest.raises(DuplicateBinding):
            parse_workflow(doc([set_node("a"), set_node("b"), set_node("c")], [edge("a", "b", "x"), edge("a", "c", "x")]))

    def test_duplicate_id(self):
        with pytest.raises(DuplicateNodeId):
            parse_document(doc([set_node("a"), set_node("a")], []))

    def test_syntax_error_location(self):
        with pytest.raises(ParseError) as info:
            parse_document('{"start": "a",\n  "nodes": [}')
        assert info.value.location.startswith("line 2, column ")

    @pytest.mark.parametrize(
        "body,where",
        [
            ({"nodes": []}, "document"),
            ({"start": "a", "nodes": [{"id": "a"}]}, "nodes[0]"),
            ({"start": "a", "nodes": [{"id": "a", "kind": "set", "params": []}]}, "nodes[0].params"),
            ({"start": "a", "edges": [{"from": "a", "to": "b", "action": ""}]}, "edges[0].action"),
            ({"start": "a", "nodes": [{"id": "a/b", "kind": "set"}]}, "nodes[0].id"),
            ({"start": "a", "flows": [{"start": "x"}]}, "flows[0]"),
            ({"start": "a", "nodes": [{"id": "a", "kind": "set", "retry": {"max_retries": 0}}]}, "nodes[0].retry.max_retries"),
            ({"start": "a", "extra": 1}, "document"),
        ],
    )
    def test_structural_errors(self, body, where):
        with pytest.raises(ParseError) as info:
            parse_document(json.dumps(body))
        assert info.value.location == where

    def test_bad_params(self):
        with pytest.raises(ParseError) as info:
            parse_workflow(doc([{"id": "a", "kind": "set", "params": {"key": "k"}}], []))
        assert info.value.location == "nodes[0].params"

    def test_retry_on_pattern_kind(self):
        node = {"id": "a", "kind": "order_pipeline", "retry": {"max_retries": 2}}
        with pytest.raises(ParseError):
            parse_workflow(doc([node], []))


class TestNesting:
    def test_nested_flow_in_graph(self, workflows_dir):
        parsed = parse_document((workflows_dir / "nested_pipeline.json").read_bytes())
        ndg = extract_ndg(build_flow(parsed))
        assert ndg.H == {"ingest"} and ndg.phi["ingest"].V == {"fetch", "measure", "stamp"}
        outcome = run_flow(build_flow(parsed))
        assert outcome.store["report"] == "sensor-7: small batch of 4"
        assert [s.node_id for s in outcome.trace][:3] == ["ingest/fetch", "ingest/measure", "ingest/stamp"]


@st.composite
def documents(draw, depth=0):
    n = draw(st.integers(1, 6))
    n_flows = draw(st.integers(0, 2)) if depth < 2 else 0
    ids = [f"n{i}" for i in range(n)] + [f"f{i}" for i in range(n_flows)]
    ids = draw(st.permutations(ids))
    labels = st.sampled_from(["default", "x", "y", "z"])
    bound: set[tuple[str, str]] = set()
    edges = []
    # Spanning edges keep every node reachable from the start.
    for i in range(1, len(ids)):
        source = ids[draw(st.integers(0, i - 1))]
        free = [lab for lab in ["default", "x", "y", "z", "w"] if (source, lab) not in bound]
        if not free:
            source = ids[0]
            free = [f"e{i}"]
        label = draw(st.sampled_from(free))
        bound.add((source, label))
        edges.append({"from": source, "action": label, "to": ids[i]})
    for _ in range(draw(st.integers(0, 4))):
        source, target, label = draw(st.sampled_from(ids)), draw(st.sampled_from(ids)), draw(labels)
        if (source, label) not in bound:
            bound.add((source, label))
            edges.append({"from": source, "action": label, "to": target})
    nodes = []
    for node_id in ids:
        if node_id.startswith("n"):
            entry = {"id": node_id, "kind": "set", "params": {"key": node_id, "value": draw(st.integers(-5, 5))}}
            if draw(st.booleans()):
                entry["retry"] = {"max_retries": draw(st.integers(1, 3)), "wait_ms": draw(st.sampled_from([0, 1.5]))}
            nodes.append(entry)
    flows = []
    for node_id in ids:
        if node_id.startswith("f"):
            inner = draw(documents(depth + 1))
            inner["id"] = node_id
            flows.append(inner)
    return {"id": f"d{depth}", "start": ids[0], "nodes": nodes, "edges": edges, "flows": flows}


class TestRoundTrip:
    @settings(max_examples=100, deadline=None)
    @given(documents())
    def test_emit_parse_preserves_graph(self, raw):
        first = parse_document(json.dumps(raw))
        second = parse_document(first.emit())
        assert second == first
        assert second.emit() == first.emit()
        assert extract_ndg(build_flow(second)) == first.ndg()

    @settings(max_examples=50, deadline=None)
    @given(documents())
    def test_built_flow_runs(self, raw):
        parsed = parse_document(json.dumps(raw))
        try:
            trace = run_flow(build_flow(parsed), limits=RunLimits(60)).trace
        except StepLimitExceeded as exc:
            trace = exc.trace
        ndg = parsed.ndg()
        for step in trace:
            level = ndg
            *outer, leaf = step.node_id.split("/")
            for name in outer:
                assert name in level.H
                level = level.phi[name]
            assert leaf in level.V and leaf not in level.H
