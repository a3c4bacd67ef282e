from __future__ import annotations

import asyncio
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import Counter, Emit
from flowgraph import (
    AsyncNode,
    AsyncParallelBatchNode,
    BatchFlow,
    BatchNode,
    Channel,
    Flow,
    Node,
    ParamSet,
    RecordingWaitProvider,
    RunLimits,
    SharedStore,
    run_batch_flow,
    run_batch_node,
    run_flow,
    run_flow_nonblocking,
    run_parallel_batch_node,
)
from flowgraph.errors import ExecExhausted, NonBlockingNodeInBlockingRun, PrepNotAList, StepLimitExceeded
from flowgraph.store import ABSENT
from flowgraph.variants import gather_ordered, param_overlay


class Doubler(BatchNode):
    def __init__(self, items, **kw):
        super().__init__("doubler", **kw)
        self.items = items
        self.seen = None

    def prep(self, shared):
        return list(self.items)

    def exec(self, x):
        return 2 * x

    def post(self, shared, items, results):
        self.seen = results
        shared["results"] = results
        return "doubled"


class TestBatchNode:
    def test_elementwise(self):
        node = Doubler([1, 2, 3])
        assert run_batch_node(node, {}) == "doubled"
        assert node.seen == [2, 4, 6]

    def test_empty(self):
        node = Doubler([])
        assert run_batch_node(node, {}) == "doubled"
        assert node.seen == []

    def test_not_a_list(self):
        class Bad(BatchNode):
            def prep(self, shared):
                return (1, 2)

        with pytest.raises(PrepNotAList):
            run_batch_node(Bad("bad"), {})

    def test_failing_element_stops_batch(self):
        attempts: dict[int, int] = {}

        class Counting(BatchNode):
            def prep(self, shared):
                return list(range(10))

            def exec(self, i):
                attempts[i] = attempts.get(i, 0) + 1
                if i == 7:
                    raise RuntimeError("element 7 is broken")
                return i

        with pytest.raises(ExecExhausted) as info:
            run_batch_node(Counting("c", max_retries=2), {}, clock=RecordingWaitProvider())
        assert info.value.index == 7 and info.value.attempts == 2
        assert attempts == {**{i: 1 for i in range(7)}, 7: 2}


class Inner(Node):
    def prep(self, shared):
        return shared["item"]

    def exec(self, item):
        return item * item

    def post(self, shared, item, sq):
        shared.setdefault("results", []).append(sq)
        return f"did{item}"


class Sweep(BatchFlow):
    def __init__(self, params, **kw):
        super().__init__(Inner("square"), **kw)
        self.params = params
        self.collected = None

    def prep(self, shared):
        return self.params

    def post(self, shared, params, actions):
        self.collected = actions
        return "swept"


class TestBatchFlow:
    def test_runs_once_per_param_set(self):
        sweep = Sweep([ParamSet({"item": 1}), ParamSet({"item": 2}), {"item": 3}])
        store = SharedStore()
        assert run_batch_flow(sweep, store) == "swept"
        assert store["results"] == [1, 4, 9]
        assert sweep.collected == ["did1", "did2", "did3"]
        assert "item" not in store

    def test_empty_sweep(self):
        sweep = Sweep([])
        store = SharedStore()
        run_batch_flow(sweep, store)
        assert "results" not in store and sweep.collected == []

    def test_overlay_restores_prior(self):
        seen = []

        class Peek(Node):
            def prep(self, shared):
                seen.append(shared["k"])

        class One(BatchFlow):
            def prep(self, shared):
                return [{"k": 1}]

        store = SharedStore({"k": 0})
        run_batch_flow(One(Peek("peek")), store)
        assert seen == [1] and store["k"] == 0

    def test_iteration_index_on_error(self):
        class Boom(Node):
            def prep(self, shared):
                return shared["item"]

            def exec(self, item):
                if item == "bad":
                    raise ValueError(item)

        class Loop(BatchFlow):
            def prep(self, shared):
                return [{"item": "ok"}, {"item": "ok"}, {"item": "bad"}]

        with pytest.raises(ExecExhausted) as info:
            run_batch_flow(Loop(Boom("boom")), {})
        assert info.value.iteration == 2

    def test_step_budget_spans_iterations(self):
        class Many(BatchFlow):
            def prep(self, shared):
                return [{"i": i} for i in range(10)]

        with pytest.raises(StepLimitExceeded):
            run_batch_flow(Many(Emit("e", record=False)), {}, RunLimits(5))

    @given(
        st.dictionaries(st.sampled_from("abcde"), st.integers(), max_size=3),
        st.lists(st.dictionaries(st.sampled_from("abcdef"), st.integers(), max_size=3), max_size=4),
    )
    def test_overlay_hygiene(self, base, overlays):
        store = SharedStore(dict(base))

        class Sweep2(BatchFlow):
            def prep(self, shared):
                return overlays

        class Scribble(Node):
            def post(self, shared, p, e):
                shared["scratch"] = 1

        run_batch_flow(Sweep2(Scribble("s")), store)
        for key in {k for o in overlays for k in o}:
            assert store.get(key, ABSENT) == base.get(key, ABSENT)

    def test_param_overlay_removes_new_keys(self):
        store = SharedStore({"a": 1})
        with param_overlay(store, {"a": 2, "b": 3}):
            assert dict(store) == {"a": 2, "b": 3}
        assert dict(store) == {"a": 1}


class SlowSquare(AsyncParallelBatchNode):
    def __init__(self, items, delays, **kw):
        super().__init__("slow", **kw)
        self.items, self.delays = items, delays
        self.seen = None

    def prep(self, shared):
        return list(self.items)

    async def exec_async(self, x):
        await asyncio.sleep(self.delays[x])
        return x * x

    def post(self, shared, items, results):
        self.seen = results
        return "done"


class TestParallelBatch:
    def test_order_preserved_under_reverse_completion(self):
        node = SlowSquare([3, 1, 2], {3: 0.06, 1: 0.03, 2: 0.0})
        assert run_parallel_batch_node(node, {}, max_concurrency=3) == "done"
        assert node.seen == [9, 1, 4]

    def test_blocking_batch_node_in_threads(self):
        class Sleepy(BatchNode):
            def prep(self, shared):
                return list(range(8))

            def exec(self, i):
                time.sleep(0.05)
                return -i

            def post(self, shared, p, results):
                shared["r"] = results

        store = SharedStore()
        t0 = time.perf_counter()
        run_parallel_batch_node(Sleepy("s"), store, max_concurrency=8)
        assert time.perf_counter() - t0 < 0.3
        assert store["r"] == [-i for i in range(8)]

    def test_concurrency_bound(self):
        active = {"now": 0, "peak": 0}

        class Track(AsyncParallelBatchNode):
            def prep(self, shared):
                return list(range(12))

            async def exec_async(self, i):
                active["now"] += 1
                active["peak"] = max(active["peak"], active["now"])
                await asyncio.sleep(0.005)
                active["now"] -= 1
                return i

        run_parallel_batch_node(Track("t"), {}, max_concurrency=3)
        assert active["peak"] == 3

    def test_fail_fast_cancels_rest(self):
        finished = []

        class Fails(AsyncParallelBatchNode):
            def prep(self, shared):
                return list(range(6))

            async def exec_async(self, i):
                if i == 2:
                    raise RuntimeError("element 2")
                await asyncio.sleep(0.2)
                finished.append(i)
                return i

        with pytest.raises(ExecExhausted) as info:
            run_parallel_batch_node(Fails("f"), {}, max_concurrency=6)
        assert info.value.index == 2
        assert finished == []

    def test_element_retry_independent(self):
        attempts: dict[int, int] = {}

        class Retry(AsyncParallelBatchNode):
            def prep(self, shared):
                return [0, 1, 2]

            async def exec_async(self, i):
                attempts[i] = attempts.get(i, 0) + 1
                if i == 1 and attempts[i] < 3:
                    raise RuntimeError("flaky")
                return i

            def post(self, shared, p, r):
                shared["r"] = r

        store = SharedStore()
        run_parallel_batch_node(Retry("r", max_retries=3), store, clock=RecordingWaitProvider())
        assert attempts == {0: 1, 1: 3, 2: 1}
        assert store["r"] == [0, 1, 2]

    @pytest.mark.parametrize("bad", [0, -2, 1.5])
    def test_bad_concurrency(self, bad):
        with pytest.raises(ValueError):
            run_parallel_batch_node(Doubler([1]), {}, max_concurrency=bad)

    def test_inside_nonblocking_flow(self):
        node = SlowSquare([1, 2, 3], {1: 0.0, 2: 0.0, 3: 0.0}, max_concurrency=2)
        outcome = asyncio.run(run_flow_nonblocking(Flow(node), {}))
        assert node.seen == [1, 4, 9] and outcome.terminal_action == "done"

    def test_async_node_rejected_in_blocking_run(self):
        with pytest.raises(NonBlockingNodeInBlockingRun):
            run_flow(Flow(SlowSquare([], {})), {})

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(-50, 50), max_size=12), st.integers(1, 6), st.randoms())
    def test_matches_sequential_batch(self, items, limit, rnd):
        delays = [rnd.random() * 0.003 for _ in items]

        class Par(AsyncParallelBatchNode):
            def prep(self, shared):
                return list(enumerate(items))

            async def exec_async(self, pair):
                i, x = pair
                await asyncio.sleep(delays[i])
                return x * 3 + 1

            def post(self, shared, p, r):
                shared["r"] = r

        class Seq(BatchNode):
            def prep(self, shared):
                return list(enumerate(items))

            def exec(self, pair):
                return pair[1] * 3 + 1

            def post(self, shared, p, r):
                shared["r"] = r

        par, seq = SharedStore(), SharedStore()
        run_parallel_batch_node(Par("p"), par, max_concurrency=limit)
        run_batch_node(Seq("s"), seq)
        assert par == seq

    def test_gather_ordered_empty(self):
        assert asyncio.run(gather_ordered(Doubler([]), [])) == []


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.booleans())
def test_nonblocking_matches_blocking(limit, with_tail):
    def build():
        counter = Counter("c", limit=limit)
        counter - "continue" >> counter
        if with_tail:
            counter - "done" >> Emit("tail", "end")
        return Flow(counter, id="f")

    a = run_flow(build(), {})
    b = asyncio.run(run_flow_nonblocking(build(), {}))
    assert a.store == b.store and a.terminal_action == b.terminal_action and a.trace == b.trace


class TestChannels:
    def test_rendezvous(self):
        class Waiter(AsyncNode):
            async def prep_async(self, shared):
                return await shared["inbox"].get()

            def post(self, shared, msg, e):
                shared["got"] = msg

        class Sender(AsyncNode):
            async def prep_async(self, shared):
                await asyncio.sleep(0.01)

            async def post_async(self, shared, p, e):
                await shared["inbox"].put("ping")

        async def main():
            store = SharedStore({"inbox": Channel("inbox")})
            await asyncio.gather(
                run_flow_nonblocking(Flow(Waiter("w")), store),
                run_flow_nonblocking(Flow(Sender("s")), store),
            )
            return store

        assert asyncio.run(main())["got"] == "ping"

    def test_fifo(self):
        async def main():
            ch = Channel()
            for i in range(5):
                await ch.put(i)
            return [await ch.get() for _ in range(5)], ch.qsize()

        assert asyncio.run(main()) == ([0, 1, 2, 3, 4], 0)
