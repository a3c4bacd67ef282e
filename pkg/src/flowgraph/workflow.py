"""Declarative JSON workflow documents over a closed registry of node kinds.

A document looks like::

    {
      "id": "greeting",
      "start": "greet",
      "nodes": [
        {"id": "greet", "kind": "template",
         "params": {"template": "Hello, {name}!", "target": "greeting"}},
        {"id": "ask_mood", "kind": "set", "params": {"key": "mood", "value": "Happy"},
         "retry": {"max_retries": 3, "wait_ms": 100}}
      ],
      "edges": [{"from": "greet", "action": "default", "to": "ask_mood"}],
      "flows": []
    }

``flows`` holds nested documents (each with its own ``id``) that can be used
as node ids in the enclosing document's ``start`` and ``edges``.

Built-in kinds and their actions:

``set``        ``key``, ``value``: stores ``value``; returns ``action`` (default "default").
``template``   ``template``, ``target``: substitutes ``{key}`` from the store; ``{{``/``}}`` escape braces.
``branch``     ``key``, ``cases`` (list of ``{op, value, action}``), ``otherwise``:
               first matching case's action, else ``otherwise`` (default "default").
``append``     ``key``, ``value``: appends to the list at ``key`` (created if unbound).
``counter``    ``key``, ``limit``, ``step`` (1), ``start`` (0): increments;
               "continue" while below ``limit``, then "done".
``fail_n``     ``n``, ``key`` ("result"), ``value`` (true): exec raises on its first
               ``n`` attempts in this process, then stores ``value``.
``sleep``      ``ms``: exec sleeps; returns ``action``.
``rag_offline``, ``rag_online``, ``agent_loop`` (``max_tool_calls``),
``order_pipeline``: the reference pattern flows, used as nested flows.
"""

from __future__ import annotations

import operator
import re
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Any

from .engine import DEFAULT, BaseNode, Flow, Node, _check_label, _check_node_id, connect_on
from .errors import DuplicateNodeId, InvalidNodeId, MalformedDocument, ParseError, UnknownKind, UnresolvedId, WiringError
from .graph import NDG, build_ndg
from .patterns import (
    CharCountEmbedder,
    MissingKey,
    MockEmbedder,
    build_agent_loop,
    build_order_pipeline,
    build_rag_offline,
    build_rag_online,
)
from .store import ABSENT, canonical_dumps, check_serializable, loads_value

_REQUIRED = object()


# -- document model ---------------------------------------------------------


@dataclass(frozen=True)
class RetrySpec:
    max_retries: int = 1
    wait_ms: float = 0


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    retry: RetrySpec | None = None


@dataclass(frozen=True)
class EdgeSpec:
    source: str
    action: str
    target: str


@dataclass
class WorkflowDocument:
    id: str
    start: str
    nodes: list[NodeSpec] = field(default_factory=list)
    edges: list[EdgeSpec] = field(default_factory=list)
    flows: list[WorkflowDocument] = field(default_factory=list)

    def ids(self) -> list[str]:
        return [n.id for n in self.nodes] + [f.id for f in self.flows]

    def to_document(self) -> dict[str, Any]:
        nodes = []
        for n in self.nodes:
            entry: dict[str, Any] = {"id": n.id, "kind": n.kind, "params": n.params}
            if n.retry is not None:
                entry["retry"] = {"max_retries": n.retry.max_retries, "wait_ms": n.retry.wait_ms}
            nodes.append(entry)
        return {
            "edges": [{"action": e.action, "from": e.source, "to": e.target} for e in self.edges],
            "flows": [f.to_document() for f in self.flows],
            "id": self.id,
            "nodes": nodes,
            "start": self.start,
        }

    def emit(self) -> bytes:
        """Canonical JSON encoding of the document."""
        return canonical_dumps(self.to_document()).encode("utf-8") + b"\n"

    def ndg(self) -> NDG:
        """The document's graph as written, including dangling edges."""
        return build_ndg(
            self.id,
            self.start,
            self.ids(),
            [(e.source, e.action, e.target) for e in self.edges],
            {f.id: f.ndg() for f in self.flows},
        )


def _line_col(text: str, offset: int) -> str:
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return f"line {line}, column {col}"


def _expect(value: Any, types: type | tuple[type, ...], where: str, what: str) -> Any:
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ParseError(where, f"expected {what}")
    if not isinstance(value, types):
        raise ParseError(where, f"expected {what}, got {type(value).__name__}")
    return value


def _check_keys(obj: Mapping[str, Any], allowed: set[str], required: set[str], where: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ParseError(where, f"unexpected key(s): {', '.join(extra)}")
    missing = sorted(required - set(obj))
    if missing:
        raise ParseError(where, f"missing key(s): {', '.join(missing)}")


def _parse_id(value: Any, where: str) -> str:
    _expect(value, str, where, "a node id")
    try:
        _check_node_id(value)
    except InvalidNodeId as exc:
        raise ParseError(where, str(exc)) from exc
    return value


def _parse_retry(raw: Any, where: str) -> RetrySpec:
    _expect(raw, dict, where, "an object")
    _check_keys(raw, {"max_retries", "wait_ms"}, set(), where)
    max_retries = _expect(raw.get("max_retries", 1), int, f"{where}.max_retries", "an integer")
    wait_ms = _expect(raw.get("wait_ms", 0), (int, float), f"{where}.wait_ms", "a number")
    if max_retries < 1:
        raise ParseError(f"{where}.max_retries", "must be at least 1")
    if wait_ms < 0:
        raise ParseError(f"{where}.wait_ms", "must not be negative")
    return RetrySpec(max_retries, wait_ms)


def _parse_level(raw: Any, where: str, default_id: str | None) -> WorkflowDocument:
    _expect(raw, dict, where or "document", "an object")
    _check_keys(raw, {"id", "start", "nodes", "edges", "flows"}, {"start"}, where or "document")
    prefix = f"{where}." if where else ""
    if "id" in raw:
        doc_id = _parse_id(raw["id"], f"{prefix}id")
    elif default_id is not None:
        doc_id = default_id
    else:
        raise ParseError(where, "nested flows need an id")
    start = _parse_id(raw["start"], f"{prefix}start")

    nodes = []
    for i, n in enumerate(_expect(raw.get("nodes", []), list, f"{prefix}nodes", "a list")):
        at = f"{prefix}nodes[{i}]"
        _expect(n, dict, at, "an object")
        _check_keys(n, {"id", "kind", "params", "retry"}, {"id", "kind"}, at)
        params = _expect(n.get("params", {}), dict, f"{at}.params", "an object")
        retry = _parse_retry(n["retry"], f"{at}.retry") if "retry" in n else None
        nodes.append(NodeSpec(_parse_id(n["id"], f"{at}.id"), _expect(n["kind"], str, f"{at}.kind", "text"), params, retry))

    edges = []
    for i, e in enumerate(_expect(raw.get("edges", []), list, f"{prefix}edges", "a list")):
        at = f"{prefix}edges[{i}]"
        _expect(e, dict, at, "an object")
        _check_keys(e, {"from", "action", "to"}, {"from", "to"}, at)
        action = _expect(e.get("action", DEFAULT), str, f"{at}.action", "text")
        if not action:
            raise ParseError(f"{at}.action", "action labels must be non-empty")
        edges.append(EdgeSpec(_parse_id(e["from"], f"{at}.from"), action, _parse_id(e["to"], f"{at}.to")))

    flows = [
        _parse_level(f, f"{prefix}flows[{i}]", None)
        for i, f in enumerate(_expect(raw.get("flows", []), list, f"{prefix}flows", "a list"))
    ]
    doc = WorkflowDocument(doc_id, start, nodes, edges, flows)
    seen: set[str] = set()
    for node_id in doc.ids():
        if node_id in seen:
            raise DuplicateNodeId(node_id)
        seen.add(node_id)
    return doc


def parse_document(data: bytes | str) -> WorkflowDocument:
    """Decode and structurally check a document. Ids are not resolved here."""
    text = data.decode("utf-8", errors="replace") if isinstance(data, bytes) else data
    try:
        raw = loads_value(data)
    except MalformedDocument as exc:
        raise ParseError(_line_col(text, exc.offset), exc.description) from exc
    return _parse_level(raw, "", "workflow")


# -- built-in node kinds ----------------------------------------------------


def _param(params: Mapping[str, Any], name: str, where: str, types: Any = object, default: Any = _REQUIRED) -> Any:
    if name not in params:
        if default is _REQUIRED:
            raise ParseError(f"{where}.params", f"missing parameter {name!r}")
        return default
    value = params[name]
    if types is not object:
        _expect(value, types, f"{where}.params.{name}", getattr(types, "__name__", "a valid value"))
    return value


def _action_param(params: Mapping[str, Any], where: str, name: str = "action") -> str:
    action = _param(params, name, where, str, DEFAULT)
    try:
        _check_label(action)
    except WiringError as exc:
        raise ParseError(f"{where}.params.{name}", str(exc)) from exc
    return action


def _json_param(params: Mapping[str, Any], name: str, where: str, default: Any = _REQUIRED) -> Any:
    value = _param(params, name, where, object, default)
    check_serializable(value, name)
    return value


class SetNode(Node):
    def __init__(self, id: str, key: str, value: Any, action: str = DEFAULT, **kw: Any) -> None:
        super().__init__(id, **kw)
        self.key, self.value, self.action = key, value, action

    def exec(self, prep_res):
        return self.value

    def post(self, shared, prep_res, value):
        shared[self.key] = value
        return self.action


_PLACEHOLDER = re.compile(r"\{\{|\}\}|\{([^{}]+)\}")


def _placeholders(template: str) -> list[str]:
    return [m.group(1) for m in _PLACEHOLDER.finditer(template) if m.group(1) is not None]


def render_template(template: str, values: Mapping[str, Any]) -> str:
    def sub(m: re.Match[str]) -> str:
        if m.group(1) is None:
            return m.group(0)[0]
        value = values[m.group(1)]
        return value if isinstance(value, str) else canonical_dumps(value)

    return _PLACEHOLDER.sub(sub, template)


class TemplateNode(Node):
    def __init__(self, id: str, template: str, target: str, action: str = DEFAULT, **kw: Any) -> None:
        super().__init__(id, **kw)
        self.template, self.target, self.action = template, target, action

    def prep(self, shared):
        values = {}
        for key in _placeholders(self.template):
            if key not in shared:
                raise MissingKey(key)
            values[key] = shared[key]
        return values

    def exec(self, values):
        return render_template(self.template, values)

    def post(self, shared, values, text):
        shared[self.target] = text
        return self.action


_OPS: dict[str, Callable[[Any, Any], bool]] = {
    "eq": operator.eq,
    "ne": operator.ne,
    "lt": operator.lt,
    "le": operator.le,
    "gt": operator.gt,
    "ge": operator.ge,
}


@dataclass(frozen=True)
class BranchCase:
    op: str
    value: Any
    action: str


class BranchNode(Node):
    def __init__(self, id: str, key: str, cases: list[BranchCase], otherwise: str = DEFAULT, **kw: Any) -> None:
        super().__init__(id, **kw)
        self.key, self.cases, self.otherwise = key, cases, otherwise

    def prep(self, shared):
        return shared.get(self.key, ABSENT)

    def exec(self, value):
        if value is ABSENT:
            return self.otherwise
        for case in self.cases:
            if _OPS[case.op](value, case.value):
                return case.action
        return self.otherwise

    def post(self, shared, value, action):
        return action


class AppendNode(Node):
    def __init__(self, id: str, key: str, value: Any, action: str = DEFAULT, **kw: Any) -> None:
        super().__init__(id, **kw)
        self.key, self.value, self.action = key, value, action

    def prep(self, shared):
        current = shared.get(self.key, [])
        if not isinstance(current, list):
            raise TypeError(f"{self.key!r} holds {type(current).__name__}, not a list")
        return list(current)

    def exec(self, current):
        return current + [self.value]

    def post(self, shared, prep_res, updated):
        shared[self.key] = updated
        return self.action


class CounterNode(Node):
    def __init__(self, id: str, key: str, limit: int, step: int = 1, start: int = 0, **kw: Any) -> None:
        super().__init__(id, **kw)
        self.key, self.limit, self.step, self.start = key, limit, step, start

    def prep(self, shared):
        return shared.get(self.key, self.start)

    def exec(self, current):
        return current + self.step

    def post(self, shared, prep_res, value):
        shared[self.key] = value
        return "continue" if value < self.limit else "done"


class FailNNode(Node):
    """Raises on its first ``n`` exec attempts (counted per instance), then succeeds."""

    def __init__(self, id: str, n: int, key: str = "result", value: Any = True, **kw: Any) -> None:
        super().__init__(id, **kw)
        self.n, self.key, self.value = n, key, value
        self.attempts = 0

    def exec(self, prep_res):
        self.attempts += 1
        if self.attempts <= self.n:
            raise RuntimeError(f"{self.describe()}: injected failure {self.attempts} of {self.n}")
        return self.value

    def post(self, shared, prep_res, value):
        shared[self.key] = value
        return DEFAULT


class SleepNode(Node):
    def __init__(self, id: str, ms: float, action: str = DEFAULT, **kw: Any) -> None:
        super().__init__(id, **kw)
        self.ms, self.action = ms, action

    def exec(self, prep_res):
        time.sleep(self.ms / 1000)

    def post(self, shared, prep_res, exec_res):
        return self.action


def _non_negative(value: Any, where: str, name: str) -> Any:
    if value < 0:
        raise ParseError(f"{where}.params.{name}", "must not be negative")
    return value


def _make_set(spec: NodeSpec, where: str, kw: dict[str, Any]) -> BaseNode:
    p = spec.params
    return SetNode(spec.id, _param(p, "key", where, str), _json_param(p, "value", where), _action_param(p, where), **kw)


def _make_template(spec: NodeSpec, where: str, kw: dict[str, Any]) -> BaseNode:
    p = spec.params
    return TemplateNode(
        spec.id, _param(p, "template", where, str), _param(p, "target", where, str), _action_param(p, where), **kw
    )


def _make_branch(spec: NodeSpec, where: str, kw: dict[str, Any]) -> BaseNode:
    p = spec.params
    cases = []
    for i, raw in enumerate(_param(p, "cases", where, list)):
        at = f"{where}.params.cases[{i}]"
        _expect(raw, dict, at, "an object")
        _check_keys(raw, {"op", "value", "action"}, {"value", "action"}, at)
        op = _expect(raw.get("op", "eq"), str, f"{at}.op", "text")
        if op not in _OPS:
            raise ParseError(f"{at}.op", f"unknown comparison {op!r}; expected one of {', '.join(_OPS)}")
        action = _expect(raw["action"], str, f"{at}.action", "text")
        if not action:
            raise ParseError(f"{at}.action", "action labels must be non-empty")
        cases.append(BranchCase(op, raw["value"], action))
    return BranchNode(spec.id, _param(p, "key", where, str), cases, _action_param(p, where, "otherwise"), **kw)


def _make_append(spec: NodeSpec, where: str, kw: dict[str, Any]) -> BaseNode:
    p = spec.params
    return AppendNode(spec.id, _param(p, "key", where, str), _json_param(p, "value", where), _action_param(p, where), **kw)


def _make_counter(spec: NodeSpec, where: str, kw: dict[str, Any]) -> BaseNode:
    p = spec.params
    return CounterNode(
        spec.id,
        _param(p, "key", where, str),
        _param(p, "limit", where, int),
        _param(p, "step", where, int, 1),
        _param(p, "start", where, int, 0),
        **kw,
    )


def _make_fail_n(spec: NodeSpec, where: str, kw: dict[str, Any]) -> BaseNode:
    p = spec.params
    n = _non_negative(_param(p, "n", where, int), where, "n")
    return FailNNode(spec.id, n, _param(p, "key", where, str, "result"), _json_param(p, "value", where, True), **kw)


def _make_sleep(spec: NodeSpec, where: str, kw: dict[str, Any]) -> BaseNode:
    p = spec.params
    ms = _non_negative(_param(p, "ms", where, (int, float)), where, "ms")
    return SleepNode(spec.id, ms, _action_param(p, where), **kw)


_EMBEDDERS = {"bigram": MockEmbedder, "letters": CharCountEmbedder}


def _embedder(spec: NodeSpec, where: str) -> Any:
    name = _param(spec.params, "embedder", where, str, "bigram")
    if name not in _EMBEDDERS:
        raise ParseError(f"{where}.params.embedder", f"expected one of {', '.join(_EMBEDDERS)}")
    return _EMBEDDERS[name]()


def _pattern(builder: Callable[[NodeSpec, str], Flow]) -> Callable[[NodeSpec, str, dict[str, Any]], BaseNode]:
    def make(spec: NodeSpec, where: str, kw: dict[str, Any]) -> BaseNode:
        if spec.retry is not None:
            raise ParseError(f"{where}.retry", f"kind {spec.kind!r} is a flow and takes no retry policy")
        flow = builder(spec, where)
        flow.id = spec.id
        return flow

    return make


KINDS: dict[str, Callable[[NodeSpec, str, dict[str, Any]], BaseNode]] = {
    "set": _make_set,
    "template": _make_template,
    "branch": _make_branch,
    "append": _make_append,
    "counter": _make_counter,
    "fail_n": _make_fail_n,
    "sleep": _make_sleep,
    "rag_offline": _pattern(lambda s, w: build_rag_offline(_embedder(s, w))),
    "rag_online": _pattern(lambda s, w: build_rag_online(_embedder(s, w))),
    "agent_loop": _pattern(lambda s, w: build_agent_loop(_param(s.params, "max_tool_calls", w, int, 10))),
    "order_pipeline": _pattern(lambda s, w: build_order_pipeline()),
}


# -- building ---------------------------------------------------------------


def _build_level(doc: WorkflowDocument, where: str) -> Flow:
    prefix = f"{where}." if where else ""
    by_id: dict[str, BaseNode] = {}
    for i, spec in enumerate(doc.nodes):
        at = f"{prefix}nodes[{i}]"
        make = KINDS.get(spec.kind)
        if make is None:
            raise UnknownKind(spec.kind, f"{at}.kind")
        kw: dict[str, Any] = {}
        if spec.retry is not None:
            kw = {"max_retries": spec.retry.max_retries, "wait": spec.retry.wait_ms / 1000}
        by_id[spec.id] = make(spec, at, kw)
    for i, sub in enumerate(doc.flows):
        by_id[sub.id] = _build_level(sub, f"{prefix}flows[{i}]")
    for i, edge in enumerate(doc.edges):
        at = f"{prefix}edges[{i}]"
        for end, name in ((edge.source, "from"), (edge.target, "to")):
            if end not in by_id:
                raise UnresolvedId(end, f"{at}.{name}")
        connect_on(by_id[edge.source], edge.action, by_id[edge.target])
    if doc.start not in by_id:
        raise UnresolvedId(doc.start, f"{prefix}start")
    return Flow(start=by_id[doc.start], id=doc.id)


def build_flow(doc: WorkflowDocument) -> Flow:
    """Instantiate fresh nodes for ``doc`` and wire them."""
    return _build_level(doc, "")


def parse_workflow(data: bytes | str) -> Flow:
    return build_flow(parse_document(data))


def unknown_kinds(doc: WorkflowDocument, where: str = "") -> list[tuple[str, str]]:
    """``(location, kind)`` for every node whose kind is not registered."""
    prefix = f"{where}." if where else ""
    found = [(f"{prefix}nodes[{i}]", n.kind) for i, n in enumerate(doc.nodes) if n.kind not in KINDS]
    for i, sub in enumerate(doc.flows):
        found.extend(unknown_kinds(sub, f"{prefix}flows[{i}]"))
    return found
