from __future__ import annotations

import sys
from pathlib import Path

import pytest

from flowgraph import Node

ROOT = Path(__file__).resolve().parent.parent
WORKFLOWS = ROOT / "workflows"

sys.path.insert(0, str(Path(__file__).resolve().parent))


@pytest.fixture
def workflows_dir() -> Path:
    return WORKFLOWS


class GreetNode(Node):
    def prep(self, shared):
        return shared.get("name", "World")

    def exec(self, name):
        return f"Hello, {name}!"

    def post(self, shared, prep_res, exec_res):
        shared["greeting"] = exec_res
        return "default"


class AskMoodNode(Node):
    def post(self, shared, prep_res, exec_res):
        shared["mood"] = "Happy"


class Emit(Node):
    """Post returns a fixed action and optionally records its id under ``visited``."""

    def __init__(self, id=None, action="default", *, record=True, **kw):
        super().__init__(id, **kw)
        self.action = action
        self.record = record

    def post(self, shared, prep_res, exec_res):
        if self.record:
            shared.setdefault("visited", []).append(self.id)
        return self.action


class Counter(Node):
    """Increments ``count``; "continue" below ``limit`` then "done"."""

    def __init__(self, id="counter", limit=5):
        super().__init__(id)
        self.limit = limit

    def prep(self, shared):
        return shared.get("count", 0)

    def exec(self, n):
        return n + 1

    def post(self, shared, prep_res, n):
        shared["count"] = n
        return "continue" if n < self.limit else "done"


class Flaky(Node):
    """Exec raises ``fails`` times, then returns ``value``. Counts calls per phase."""

    def __init__(self, id="flaky", fails=0, value="ok", **kw):
        super().__init__(id, **kw)
        self.fails = fails
        self.value = value
        self.calls = {"prep": 0, "exec": 0, "post": 0}
        self.order: list[str] = []

    def prep(self, shared):
        self.calls["prep"] += 1
        self.order.append("prep")
        return shared.get("input")

    def exec(self, prep_res):
        self.calls["exec"] += 1
        self.order.append("exec")
        if self.calls["exec"] <= self.fails:
            raise RuntimeError(f"attempt {self.calls['exec']}")
        return self.value

    def post(self, shared, prep_res, exec_res):
        self.calls["post"] += 1
        self.order.append("post")
        shared["out"] = exec_res
        return "default"
