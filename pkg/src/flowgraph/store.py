"""Shared key-value store and its canonical JSON encoding.

Stored values are drawn from a closed algebra: ``None``, ``bool``, ``int``
(64-bit signed), ``float`` (finite), ``str``, ``list`` and ``dict`` with text
keys. Runtime resources such as queues are wrapped in :class:`OpaqueHandle`;
they may live in the store but any attempt to serialize them fails.

The canonical form is compact JSON with sorted keys, UTF-8 text and shortest
round-trip floats. It doubles as the checkpoint payload.
"""

from __future__ import annotations

import itertools
import json
import math
from collections.abc import Iterator, MutableMapping
from typing import Any

from .errors import (
    EmptyKey,
    MalformedDocument,
    NonFiniteFloat,
    UnserializableHandle,
    UnsupportedValue,
)

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

_handle_ids = itertools.count(1)


class _Absent:
    _instance: _Absent | None = None

    def __new__(cls) -> _Absent:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ABSENT"

    def __bool__(self) -> bool:
        return False


ABSENT = _Absent()
"""Returned by :func:`get` for unbound keys (distinct from a stored ``None``)."""


class OpaqueHandle:
    """A runtime-only value: identity-compared and never serializable."""

    def __init__(self, kind: str, obj: Any = None) -> None:
        self.kind = kind
        self.obj = obj
        self.handle_id = next(_handle_ids)

    def __repr__(self) -> str:
        return f"<OpaqueHandle {self.kind}#{self.handle_id}>"


class SharedStore(MutableMapping):
    """Mutable text-keyed mapping carried through a flow run.

    Wrapping an existing dict does not copy it, so writes made by nodes stay
    visible through the caller's dict.
    """

    __slots__ = ("_data",)

    def __init__(self, data: dict[str, Any] | None = None) -> None:
        if data is None:
            data = {}
        elif not isinstance(data, dict):
            data = dict(data)
        for key in data:
            _check_key(key)
        self._data = data

    @classmethod
    def coerce(cls, store: SharedStore | dict[str, Any] | None) -> SharedStore:
        if isinstance(store, SharedStore):
            return store
        return cls(store)

    def __getitem__(self, key: str) -> Any:
        return self._data[key]

    def __setitem__(self, key: str, value: Any) -> None:
        _check_key(key)
        self._data[key] = value

    def __delitem__(self, key: str) -> None:
        del self._data[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key: object) -> bool:
        return key in self._data

    def __eq__(self, other: object) -> bool:
        if isinstance(other, SharedStore):
            other = other._data
        if not isinstance(other, dict):
            return NotImplemented
        return same_value(self._data, other)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"SharedStore({self._data!r})"

    def set(self, key: str, value: Any) -> None:
        self[key] = value

    def to_dict(self) -> dict[str, Any]:
        """The underlying dict (not a copy)."""
        return self._data

    def snapshot(self) -> bytes:
        return canonical_serialize(self)


def _check_key(key: object) -> None:
    if not isinstance(key, str) or not key:
        raise EmptyKey()


def get(store: SharedStore | dict[str, Any], key: str) -> Any:
    """Bound value for ``key``, or :data:`ABSENT`."""
    return store.get(key, ABSENT)


def set(store: SharedStore | dict[str, Any], key: str, value: Any) -> None:  # noqa: A001
    _check_key(key)
    store[key] = value


def same_value(a: Any, b: Any) -> bool:
    """Kind-strict structural equality.

    ``1``, ``1.0`` and ``True`` are three different values here; floats compare
    bit-for-bit (so ``0.0`` and ``-0.0`` differ) and handles by identity.
    """
    if type(a) is not type(b):
        return False
    if isinstance(a, float):
        return a.hex() == b.hex()
    if isinstance(a, list):
        return len(a) == len(b) and all(same_value(x, y) for x, y in zip(a, b))
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(same_value(v, b[k]) for k, v in a.items())
    if isinstance(a, OpaqueHandle):
        return a is b
    return a == b


def _join(path: str, part: str | int) -> str:
    return f"{path}/{part}" if path else str(part)


def check_serializable(value: Any, path: str = "") -> None:
    """Raise the matching :class:`SerializationError` for the first bad leaf."""
    if value is None or isinstance(value, (bool, str)):
        return
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise UnsupportedValue(path, "integer outside 64-bit range")
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise NonFiniteFloat(path)
        return
    if isinstance(value, OpaqueHandle):
        raise UnserializableHandle(path)
    if isinstance(value, list):
        for i, item in enumerate(value):
            check_serializable(item, _join(path, i))
        return
    if isinstance(value, (dict, SharedStore)):
        for k, item in value.items():
            if not isinstance(k, str):
                raise UnsupportedValue(_join(path, repr(k)), "non-text map key")
            check_serializable(item, _join(path, k))
        return
    raise UnsupportedValue(path, type(value).__name__)


def canonical_dumps(value: Any) -> str:
    """Canonical JSON text for any serializable value."""
    check_serializable(value)
    if isinstance(value, SharedStore):
        value = value.to_dict()
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def canonical_serialize(store: SharedStore | dict[str, Any]) -> bytes:
    try:
        return canonical_dumps(store).encode("utf-8")
    except UnicodeEncodeError as exc:
        raise UnsupportedValue("", f"text not encodable as UTF-8: {exc.reason}") from exc


def _reject_constant(name: str) -> Any:
    raise ValueError(f"non-finite constant {name}")


def _pairs_to_dict(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in pairs:
        if k in out:
            raise ValueError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _check_decoded(value: Any, path: str = "") -> None:
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise ValueError(f"integer outside 64-bit range at {path!r}")
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"float overflows at {path!r}")
    elif isinstance(value, list):
        for i, item in enumerate(value):
            _check_decoded(item, _join(path, i))
    elif isinstance(value, dict):
        for k, item in value.items():
            _check_decoded(item, _join(path, k))


def loads_value(data: bytes | str) -> Any:
    """Parse one JSON value strictly (no NaN, no duplicate keys, 64-bit ints)."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(exc.start, "invalid UTF-8") from exc
    else:
        text = data
    try:
        value = json.loads(text, object_pairs_hook=_pairs_to_dict, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(exc.pos, exc.msg) from exc
    except ValueError as exc:
        raise MalformedDocument(0, str(exc)) from exc
    try:
        _check_decoded(value)
    except ValueError as exc:
        raise MalformedDocument(0, str(exc)) from exc
    return value


def deserialize(data: bytes | str) -> SharedStore:
    value = loads_value(data)
    if not isinstance(value, dict):
        raise MalformedDocument(0, "top-level value must be an object")
    if "" in value:
        raise MalformedDocument(0, "empty store key")
    return SharedStore(value)
