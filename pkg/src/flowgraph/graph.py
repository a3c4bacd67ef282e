"""Nested directed graph (NDG) view of a flow, with reachability and lint.

An NDG is ``(V, E, L, H, phi)``: node ids, directed edges, the set of action
labels on each edge, the nodes that are themselves flows, and the nested graph
of each of those. Labels live in sets because two actions may be wired to the
same target.
"""

from __future__ import annotations

import hashlib
from collections import defaultdict, deque
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any

from .engine import DEFAULT, Flow
from .errors import NestingCycle, UnknownNode
from .store import canonical_dumps


@dataclass(frozen=True)
class NDG:
    id: str
    start: str | None
    V: frozenset[str]
    E: frozenset[tuple[str, str]]
    L: Mapping[tuple[str, str], frozenset[str]]
    H: frozenset[str] = frozenset()
    phi: Mapping[str, NDG] = field(default_factory=dict)

    @property
    def alphabet(self) -> frozenset[str]:
        """Every action label used on an edge of this level."""
        return frozenset().union(*self.L.values()) if self.L else frozenset()

    def out_labels(self) -> dict[str, dict[str, set[str]]]:
        """``{source: {label: {targets}}}`` for this level."""
        out: dict[str, dict[str, set[str]]] = defaultdict(lambda: defaultdict(set))
        for (a, b), labels in self.L.items():
            for label in labels:
                out[a][label].add(b)
        return out

    def to_document(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "start": self.start,
            "nodes": sorted(self.V),
            "edges": [[a, b, sorted(self.L.get((a, b), ()))] for a, b in sorted(self.E)],
            "nested": {h: self.phi[h].to_document() for h in sorted(self.H) if h in self.phi},
        }

    def fingerprint(self) -> str:
        return hashlib.sha256(canonical_dumps(self.to_document()).encode("utf-8")).hexdigest()


def build_ndg(
    graph_id: str,
    start: str | None,
    nodes: Iterable[str],
    edges: Iterable[tuple[str, str, str]],
    nested: Mapping[str, NDG] | None = None,
) -> NDG:
    """Assemble an NDG from ``(from, label, to)`` triples without checking them."""
    labels: dict[tuple[str, str], set[str]] = defaultdict(set)
    for a, label, b in edges:
        labels[(a, b)].add(label)
    nested = dict(nested or {})
    return NDG(
        id=graph_id,
        start=start,
        V=frozenset(nodes),
        E=frozenset(labels),
        L={e: frozenset(ls) for e, ls in labels.items()},
        H=frozenset(nested),
        phi=nested,
    )


def extract_ndg(flow: Flow) -> NDG:
    return _extract(flow, set())


def _extract(flow: Flow, active: set[int]) -> NDG:
    if id(flow) in active:
        raise NestingCycle(flow.id or "flow")
    active.add(id(flow))
    try:
        index = flow.index()
        ids = index.ids
        edges = [
            (ids[node], action, ids[succ])
            for node in index.order
            for action, succ in node.successors.items()
        ]
        nested = {ids[node]: _extract(node, active) for node in index.order if isinstance(node, Flow)}
        return build_ndg(flow.id or "flow", ids[flow.require_start()], index.nodes, edges, nested)
    finally:
        active.discard(id(flow))


def reachable(ndg: NDG, start: str) -> frozenset[str]:
    """Forward closure of ``start`` over ``E``, labels ignored."""
    if start not in ndg.V:
        raise UnknownNode(start)
    adjacency: dict[str, list[str]] = defaultdict(list)
    for a, b in ndg.E:
        adjacency[a].append(b)
    seen = {start}
    queue = deque([start])
    while queue:
        for nxt in adjacency[queue.popleft()]:
            if nxt not in seen and nxt in ndg.V:
                seen.add(nxt)
                queue.append(nxt)
    return frozenset(seen)


ERROR = "error"
WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    code: str
    subject: str
    message: str

    def format(self) -> str:
        return f"{self.severity.upper()}\t{self.code}\t{self.subject}\t{self.message}"


def validate(ndg: NDG, start: str | None = None, *, _prefix: str = "") -> list[Diagnostic]:
    """Static lint. An empty list means clean.

    Codes: ``EmptyGraph``, ``UnknownStart``, ``UnresolvedEdge`` and
    ``DuplicateEdgeLabel`` are errors; ``UnreachableNode`` and ``NoTerminal``
    are warnings (deliberate endless loops are legal).
    """
    diags: list[Diagnostic] = []
    where = _prefix.rstrip("/") or ndg.id
    if not ndg.V:
        return [Diagnostic(ERROR, "EmptyGraph", where, "graph has no nodes")]
    start = start if start is not None else ndg.start
    for a, b in sorted(ndg.E):
        missing = [x for x in (a, b) if x not in ndg.V]
        if missing:
            diags.append(
                Diagnostic(ERROR, "UnresolvedEdge", f"{_prefix}{a}->{_prefix}{b}", f"unknown endpoint(s): {', '.join(missing)}")
            )
    for source, by_label in sorted(ndg.out_labels().items()):
        for label, targets in sorted(by_label.items()):
            if len(targets) > 1:
                diags.append(
                    Diagnostic(
                        ERROR,
                        "DuplicateEdgeLabel",
                        _prefix + source,
                        f"label {label!r} leads to {len(targets)} targets: {', '.join(sorted(targets))}",
                    )
                )
    if start is None or start not in ndg.V:
        diags.append(Diagnostic(ERROR, "UnknownStart", where, f"start {start!r} is not a node"))
    else:
        seen = reachable(ndg, start)
        for v in sorted(ndg.V - seen):
            diags.append(Diagnostic(WARNING, "UnreachableNode", _prefix + v, f"not reachable from {start!r}"))
        out = ndg.out_labels()
        if all(DEFAULT in out.get(v, {}) for v in seen):
            diags.append(
                Diagnostic(WARNING, "NoTerminal", _prefix + start, "every reachable node has a default successor")
            )
    for h in sorted(ndg.H):
        if h in ndg.phi:
            diags.extend(validate(ndg.phi[h], _prefix=f"{_prefix}{h}/"))
    return diags


def has_errors(diags: Iterable[Diagnostic]) -> bool:
    return any(d.severity == ERROR for d in diags)


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(ndg: NDG) -> str:
    """Graphviz rendering; nested flows become clusters."""
    lines = [f"digraph {_dot_quote(ndg.id)} {{", "  compound=true;"]
    counter = [0]

    def emit(g: NDG, prefix: str, indent: str) -> None:
        for v in sorted(g.V):
            if v in g.H and v in g.phi:
                counter[0] += 1
                lines.append(f"{indent}subgraph cluster_{counter[0]} {{")
                lines.append(f"{indent}  label={_dot_quote(v)};")
                lines.append(f"{indent}  {_dot_quote(prefix + v)} [shape=point];")
                emit(g.phi[v], f"{prefix}{v}/", indent + "  ")
                lines.append(f"{indent}}}")
            else:
                shape = "doublecircle" if v == g.start else "box"
                lines.append(f"{indent}{_dot_quote(prefix + v)} [label={_dot_quote(v)}, shape={shape}];")
        for a, b in sorted(g.E):
            label = ",".join(sorted(g.L[(a, b)]))
            lines.append(f"{indent}{_dot_quote(prefix + a)} -> {_dot_quote(prefix + b)} [label={_dot_quote(label)}];")

    emit(ndg, "", "  ")
    lines.append("}")
    return "\n".join(lines) + "\n"


def flow_fingerprint(flow: Flow) -> str:
    """Stable hash over node ids, labelled edges and nesting."""
    return extract_ndg(flow).fingerprint()
