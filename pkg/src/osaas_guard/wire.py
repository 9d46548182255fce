"""Newline-delimited JSON wire format shared by telemetry and control traffic.

Each line is one JSON object carrying a ``kind`` tag, a schema ``version``
and the record's named fields.  Field order is irrelevant on decode; encode
always emits keys sorted with compact separators, so a canonical line
re-encodes to itself.  Floats are rendered with ``repr`` which round-trips
binary64 exactly.
"""

from __future__ import annotations

import json
import math
from typing import Any, Callable, Iterable, Iterator

from .errors import MalformedLine, UnknownRecordKind, VersionMismatch

WIRE_VERSION = 1

_DECODERS: dict[str, Callable[[dict], Any]] = {}


def register(kind: str):
    """Class decorator binding a wire ``kind`` to ``cls.from_fields``."""
    def deco(cls):
        cls.WIRE_KIND = kind
        _DECODERS[kind] = cls.from_fields
        return cls
    return deco


def known_kinds() -> list[str]:
    return sorted(_DECODERS)


def encode(record) -> str:
    body = record.to_fields()
    body["kind"] = record.WIRE_KIND
    body["version"] = WIRE_VERSION
    try:
        return json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)
    except ValueError as exc:
        raise MalformedLine(f"record not encodable: {exc}") from exc


def decode(line: str | bytes):
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    line = line.rstrip("\r\n")
    if not line or "\n" in line:
        raise MalformedLine("expected exactly one non-empty line")
    try:
        body = json.loads(line, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise MalformedLine(f"invalid JSON: {exc.msg}") from exc
    if not isinstance(body, dict):
        raise MalformedLine("wire line must be a JSON object")
    version = body.pop("version", None)
    kind = body.pop("kind", None)
    if version is None or kind is None:
        raise MalformedLine("missing kind/version")
    if version != WIRE_VERSION or isinstance(version, bool):
        raise VersionMismatch(f"unsupported wire version {version!r}")
    if kind not in _DECODERS:
        raise UnknownRecordKind(f"unknown record kind {kind!r}")
    try:
        return _DECODERS[kind](body)
    except MalformedLine:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedLine(f"bad {kind} record: {exc}") from exc


def decode_lines(lines: Iterable[str | bytes]) -> Iterator[Any]:
    for line in lines:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        if line.strip():
            yield decode(line)


def _reject_constant(name):
    raise MalformedLine(f"non-finite constant {name} not allowed")


# field coercion helpers used by from_fields implementations

def expect_keys(body: dict, names: Iterable[str]) -> None:
    names = set(names)
    got = set(body)
    if got != names:
        missing, extra = names - got, got - names
        raise MalformedLine(f"field mismatch (missing={sorted(missing)}, extra={sorted(extra)})")


def as_int(value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedLine(f"expected integer, got {value!r}")
    return value


def as_float(value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedLine(f"expected number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise MalformedLine("non-finite number")
    return value


def as_str(value) -> str:
    if not isinstance(value, str):
        raise MalformedLine(f"expected string, got {value!r}")
    return value
