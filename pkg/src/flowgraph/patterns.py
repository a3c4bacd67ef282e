"""Reference workflows built from the engine, with deterministic stand-ins.

Nothing here calls a model or a network: embeddings are hashed bigram
counts, answers and hints come from fixed templates, and agent decisions and
guesses are read from scripts stored in the shared store.
"""

from __future__ import annotations

import asyncio
import math
import re
import zlib
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any, Protocol

from .engine import DEFAULT, AsyncNode, Flow, FlowOutcome, Node, RunLimits, run_flow_nonblocking
from .errors import FlowGraphError
from .variants import BatchNode, Channel

CHUNK_SIZE = 200
CHUNK_OVERLAP = 40
TOP_K = 3
GAME_OVER = "GAME_OVER"


class MissingKey(FlowGraphError):
    def __init__(self, key: str) -> None:
        self.key = key
        super().__init__(f"store has no {key!r}")


class ScriptExhausted(FlowGraphError):
    pass


def _require(shared: Any, key: str) -> Any:
    if key not in shared:
        raise MissingKey(key)
    return shared[key]


# -- retrieval-augmented generation ----------------------------------------


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> list[int]: ...


class MockEmbedder:
    """Character-bigram counts hashed into 16 buckets with CRC-32."""

    dimension = 16

    def embed(self, text: str) -> list[int]:
        vec = [0] * self.dimension
        for a, b in zip(text, text[1:]):
            vec[zlib.crc32((a + b).encode("utf-8")) % self.dimension] += 1
        return vec


class CharCountEmbedder:
    """Lower-cased letter counts folded into 16 buckets."""

    dimension = 16

    def embed(self, text: str) -> list[int]:
        vec = [0] * self.dimension
        for ch in text.lower():
            if ch.isalpha():
                vec[ord(ch) % self.dimension] += 1
        return vec


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    norms = sum(x * x for x in a) * sum(y * y for y in b)
    if norms == 0:
        return 0.0
    return dot / math.sqrt(norms)


def chunk_text(text: str, size: int = CHUNK_SIZE, overlap: int = CHUNK_OVERLAP) -> list[tuple[int, str]]:
    """Fixed windows of ``size`` characters, consecutive windows sharing ``overlap``.

    A window is only started if the previous one did not already reach the end.
    """
    if not text:
        return []
    step = size - overlap
    return [(start, text[start : start + size]) for start in range(0, max(len(text) - overlap, 1), step)]


@dataclass(frozen=True)
class IndexEntry:
    doc_id: str
    vector: list[int]
    text: str


class VectorIndex:
    def __init__(self, entries: Sequence[IndexEntry] = ()) -> None:
        self.entries = list(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def search(self, vector: Sequence[int], k: int = TOP_K) -> list[tuple[IndexEntry, float]]:
        """Top ``k`` by cosine similarity; ties go to the smaller doc id."""
        scored = [(e, cosine(vector, e.vector)) for e in self.entries]
        scored.sort(key=lambda pair: (-pair[1], pair[0].doc_id))
        return scored[:k]

    def to_value(self) -> list[dict[str, Any]]:
        return [{"id": e.doc_id, "text": e.text, "vector": list(e.vector)} for e in self.entries]

    @classmethod
    def from_value(cls, value: list[dict[str, Any]]) -> VectorIndex:
        return cls([IndexEntry(v["id"], list(v["vector"]), v["text"]) for v in value])


def chunk_id(doc_index: int, chunk_index: int) -> str:
    return f"doc{doc_index:03d}-chunk{chunk_index:03d}"


class ChunkDocumentsNode(Node):
    def prep(self, shared):
        return list(_require(shared, "documents"))

    def exec(self, documents):
        return [
            {"id": chunk_id(d, c), "offset": offset, "text": text}
            for d, doc in enumerate(documents)
            for c, (offset, text) in enumerate(chunk_text(doc))
        ]

    def post(self, shared, prep_res, chunks):
        shared["chunks"] = chunks
        return DEFAULT


class EmbedDocumentsNode(BatchNode):
    def __init__(self, embedder: Embedder, id: str | None = None) -> None:
        super().__init__(id)
        self.embedder = embedder

    def prep(self, shared):
        return [c["text"] for c in _require(shared, "chunks")]

    def exec(self, text):
        return self.embedder.embed(text)

    def post(self, shared, texts, vectors):
        shared["embeddings"] = vectors
        return DEFAULT


class CreateIndexNode(Node):
    def prep(self, shared):
        return _require(shared, "chunks"), _require(shared, "embeddings")

    def exec(self, inputs):
        chunks, vectors = inputs
        return VectorIndex(IndexEntry(c["id"], v, c["text"]) for c, v in zip(chunks, vectors)).to_value()

    def post(self, shared, prep_res, index):
        shared["index"] = index
        return DEFAULT


class EmbedQueryNode(Node):
    def __init__(self, embedder: Embedder, id: str | None = None) -> None:
        super().__init__(id)
        self.embedder = embedder

    def prep(self, shared):
        return _require(shared, "query")

    def exec(self, query):
        return self.embedder.embed(query)

    def post(self, shared, query, vector):
        shared["query_vector"] = vector
        return DEFAULT


class RetrieveDocumentsNode(Node):
    def prep(self, shared):
        return _require(shared, "query_vector"), _require(shared, "index")

    def exec(self, inputs):
        vector, index = inputs
        hits = VectorIndex.from_value(index).search(vector, TOP_K)
        return [{"id": e.doc_id, "score": score, "text": e.text} for e, score in hits]

    def post(self, shared, prep_res, hits):
        shared["retrieved"] = hits
        return DEFAULT


class GenerateAnswerNode(Node):
    def prep(self, shared):
        return _require(shared, "query"), _require(shared, "retrieved")

    def exec(self, inputs):
        query, retrieved = inputs
        top = retrieved[0]["id"] if retrieved else ""
        return f"ANSWER[{query}|{top}]"

    def post(self, shared, prep_res, answer):
        shared["answer"] = answer
        return DEFAULT


def build_rag_offline(embedder: Embedder | None = None) -> Flow:
    """documents -> chunks -> embeddings -> index."""
    embedder = embedder or MockEmbedder()
    chunk = ChunkDocumentsNode("chunk")
    chunk >> EmbedDocumentsNode(embedder, "embed_docs") >> CreateIndexNode("create_index")
    return Flow(start=chunk, id="rag_offline")


def build_rag_online(embedder: Embedder | None = None) -> Flow:
    """query + index -> retrieved (top 3) -> answer."""
    embedder = embedder or MockEmbedder()
    embed = EmbedQueryNode(embedder, "embed_query")
    embed >> RetrieveDocumentsNode("retrieve") >> GenerateAnswerNode("generate_answer")
    return Flow(start=embed, id="rag_online")


# -- agent loop -------------------------------------------------------------


class DecideNode(Node):
    """Reads the next scripted decision: ``"tool"`` or ``"answer"``.

    Once ``max_tool_calls`` observations exist, a scripted ``"tool"`` is
    overridden to ``"answer"``.
    """

    def __init__(self, max_tool_calls: int, id: str = "decide") -> None:
        super().__init__(id)
        self.max_tool_calls = max_tool_calls

    def prep(self, shared):
        script = _require(shared, "script")
        pos = shared.get("script_pos", 0)
        if pos >= len(script):
            raise ScriptExhausted(f"decision script ran out after {pos} entries")
        return script[pos], len(shared.get("observations", [])), _require(shared, "task")

    def exec(self, inputs):
        decision, calls, task = inputs
        if decision not in ("tool", "answer"):
            raise ValueError(f"unknown decision {decision!r}")
        if decision == "tool" and calls >= self.max_tool_calls:
            return "answer"
        return decision

    def post(self, shared, inputs, decision):
        shared["script_pos"] = shared.get("script_pos", 0) + 1
        if decision == "answer":
            _, calls, task = inputs
            shared["answer"] = f"ANSWER[{task}|{calls} observations]"
        return decision


class ToolNode(Node):
    def prep(self, shared):
        return _require(shared, "task"), len(shared.get("observations", []))

    def exec(self, inputs):
        task, n = inputs
        return f"observation {n + 1} for {task}"

    def post(self, shared, prep_res, observation):
        shared.setdefault("observations", []).append(observation)
        return DEFAULT


def build_agent_loop(max_tool_calls: int = 10) -> Flow:
    """decide -"tool"-> tool -> decide ...; terminates when decide says "answer"."""
    decide = DecideNode(max_tool_calls)
    tool = ToolNode("tool")
    decide - "tool" >> tool
    tool >> decide
    return Flow(start=decide, id="agent")


# -- word game --------------------------------------------------------------


def make_hint(target: str, forbidden: Sequence[str], number: int) -> str:
    hint = f"hint {number}: {len(target)} letters, starts with {target[:1]!r}"
    for word in forbidden:
        if word:
            hint = re.sub(re.escape(word), "*" * len(word), hint, flags=re.IGNORECASE)
    return hint


class AsyncHinter(AsyncNode):
    async def prep_async(self, shared):
        guess = await shared["hinter_queue"].get()
        if guess == GAME_OVER:
            return None
        return shared["target_word"], list(shared["forbidden"]), len(shared["hints"]) + 1

    async def exec_async(self, inputs):
        if inputs is None:
            return None
        target, forbidden, number = inputs
        return make_hint(target, forbidden, number)

    async def post_async(self, shared, prep_res, hint):
        if hint is None:
            return "end"
        shared["hints"].append(hint)
        await shared["guesser_queue"].put(hint)
        shared["hinter_queue"].task_done()
        return "continue"


class AsyncGuesser(AsyncNode):
    """Answers each hint with the next scripted guess."""

    async def prep_async(self, shared):
        hint = await shared["guesser_queue"].get()
        n = len(shared["past_guesses"])
        script = shared["scripted_guesses"]
        return hint, (script[n] if n < len(script) else None), n + 1 >= len(script)

    async def exec_async(self, inputs):
        hint, guess, last = inputs
        return guess

    async def post_async(self, shared, inputs, guess):
        _, _, last = inputs
        if guess is not None:
            shared["past_guesses"].append(guess)
        if guess is not None and guess == shared["target_word"]:
            shared["outcome"] = "won"
        elif guess is None or last:
            # Out of scripted guesses: the game ends as a loss, not an error.
            shared["outcome"] = "lost"
            shared["loss_reason"] = ScriptExhausted.__name__
        else:
            await shared["hinter_queue"].put(guess)
            return "continue"
        await shared["hinter_queue"].put(GAME_OVER)
        return "end"


def build_word_game(
    target: str,
    forbidden: Sequence[str],
    scripted_guesses: Sequence[str],
) -> tuple[Flow, Flow, dict[str, Any]]:
    """Two self-looping flows that talk through two FIFO channels.

    The returned store is primed with the opening ``"START"`` message.
    """
    hinter = AsyncHinter("hinter")
    guesser = AsyncGuesser("guesser")
    hinter - "continue" >> hinter
    guesser - "continue" >> guesser
    store: dict[str, Any] = {
        "target_word": target,
        "forbidden": list(forbidden),
        "scripted_guesses": list(scripted_guesses),
        "hinter_queue": Channel("hinter_queue"),
        "guesser_queue": Channel("guesser_queue"),
        "past_guesses": [],
        "hints": [],
    }
    store["hinter_queue"].obj.put_nowait("START")
    return Flow(start=hinter, id="hinter_flow"), Flow(start=guesser, id="guesser_flow"), store


async def play_word_game_async(
    target: str,
    forbidden: Sequence[str],
    scripted_guesses: Sequence[str],
    *,
    timeout: float | None = 5.0,
    limits: RunLimits | None = None,
) -> tuple[dict[str, Any], FlowOutcome, FlowOutcome]:
    hinter_flow, guesser_flow, store = build_word_game(target, forbidden, scripted_guesses)
    game = asyncio.gather(
        run_flow_nonblocking(hinter_flow, store, limits),
        run_flow_nonblocking(guesser_flow, store, limits),
    )
    hinter_out, guesser_out = await asyncio.wait_for(game, timeout)
    return store, hinter_out, guesser_out


def play_word_game(
    target: str,
    forbidden: Sequence[str],
    scripted_guesses: Sequence[str],
    *,
    timeout: float | None = 5.0,
    limits: RunLimits | None = None,
) -> tuple[dict[str, Any], FlowOutcome, FlowOutcome]:
    """Run both flows concurrently; raises asyncio.TimeoutError past ``timeout``."""
    return asyncio.run(
        play_word_game_async(target, forbidden, scripted_guesses, timeout=timeout, limits=limits)
    )


# -- order pipeline ---------------------------------------------------------


def _order_qty(order: dict[str, Any]) -> int:
    return sum(order.get("items", {}).values())


class ValidatePayment(Node):
    def prep(self, shared):
        return _require(shared, "order")["amount"]

    def exec(self, amount):
        if isinstance(amount, bool) or not isinstance(amount, (int, float)):
            return "invalid"
        return DEFAULT if amount > 0 else "invalid"

    def post(self, shared, amount, verdict):
        shared["payment_status"] = "validated" if verdict == DEFAULT else "invalid"
        return verdict


class RejectPayment(Node):
    def post(self, shared, prep_res, exec_res):
        shared["payment_status"] = "rejected"
        return "invalid"


class ChargePayment(Node):
    def prep(self, shared):
        order = shared["order"]
        return order.get("id", "order"), order["amount"]

    def exec(self, inputs):
        order_id, amount = inputs
        return {"amount": amount, "status": "charged", "transaction": f"TX-{order_id}"}

    def post(self, shared, prep_res, payment):
        shared["payment"] = payment
        shared["payment_status"] = "charged"
        return DEFAULT


class UpdateLedger(Node):
    def prep(self, shared):
        return shared["payment"]

    def post(self, shared, payment, exec_res):
        shared.setdefault("ledger", []).append({"amount": payment["amount"], "transaction": payment["transaction"]})
        return DEFAULT


class CheckStock(Node):
    def prep(self, shared):
        return dict(_require(shared, "order").get("items", {})), dict(shared.get("stock", {}))

    def exec(self, inputs):
        items, stock = inputs
        return sorted(name for name, qty in items.items() if stock.get(name, 0) < qty)

    def post(self, shared, prep_res, shortages):
        shared["shortages"] = shortages
        return "backorder" if shortages else DEFAULT


class MarkBackorder(Node):
    def post(self, shared, prep_res, exec_res):
        shared["inventory_status"] = "backorder"
        return "backorder"


class ReserveItems(Node):
    def prep(self, shared):
        return dict(shared["order"].get("items", {})), dict(shared.get("stock", {}))

    def exec(self, inputs):
        items, stock = inputs
        return {name: stock.get(name, 0) - items.get(name, 0) for name in sorted({*items, *stock})}

    def post(self, shared, inputs, remaining):
        shared["stock"] = remaining
        shared["reserved"] = inputs[0]
        shared["inventory_status"] = "reserved"
        return DEFAULT


class CalculateShipping(Node):
    def prep(self, shared):
        return _order_qty(shared["order"])

    def exec(self, qty):
        return 5 + 2 * qty

    def post(self, shared, qty, cost):
        shared["shipping_cost"] = cost
        return DEFAULT


class GenerateLabel(Node):
    def prep(self, shared):
        order = shared["order"]
        return order.get("id", "order"), _order_qty(order)

    def exec(self, inputs):
        order_id, qty = inputs
        return f"LABEL-{order_id}-{qty}"

    def post(self, shared, prep_res, label):
        shared["shipping_label"] = label
        return DEFAULT


class SchedulePickup(Node):
    def post(self, shared, prep_res, exec_res):
        shared["pickup"] = "scheduled"
        shared["order_status"] = "shipped"
        return DEFAULT


class _SetStatus(Node):
    def __init__(self, id: str, status: str, action: str) -> None:
        super().__init__(id)
        self.status = status
        self.action = action

    def post(self, shared, prep_res, exec_res):
        shared["order_status"] = self.status
        return self.action


def build_payment_flow() -> Flow:
    validate = ValidatePayment("validate")
    validate - "invalid" >> RejectPayment("reject")
    validate >> ChargePayment("charge") >> UpdateLedger("ledger")
    return Flow(start=validate, id="payment")


def build_inventory_flow() -> Flow:
    check = CheckStock("check_stock")
    check - "backorder" >> MarkBackorder("mark_backorder")
    check >> ReserveItems("reserve")
    return Flow(start=check, id="inventory")


def build_shipping_flow() -> Flow:
    cost = CalculateShipping("calculate_cost")
    cost >> GenerateLabel("generate_label") >> SchedulePickup("schedule_pickup")
    return Flow(start=cost, id="shipping")


def build_order_pipeline() -> Flow:
    """payment >> inventory >> shipping, each a nested flow.

    ``"invalid"`` from payment and ``"backorder"`` from inventory end the
    order on a status node that re-emits the same action.
    """
    payment = build_payment_flow()
    inventory = build_inventory_flow()
    shipping = build_shipping_flow()
    payment - "invalid" >> _SetStatus("order_rejected", "rejected", "invalid")
    inventory - "backorder" >> _SetStatus("order_backordered", "backordered", "backorder")
    payment >> inventory >> shipping
    return Flow(start=payment, id="order")


def sample_order(amount: int | float = 42, stock: int = 10, qty: int = 2) -> dict[str, Any]:
    return {
        "order": {"id": "A100", "amount": amount, "items": {"widget": qty}},
        "stock": {"widget": stock},
    }
