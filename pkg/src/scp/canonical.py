"""Canonical JSON: the normative wire and storage encoding.

Rules: object keys sorted bytewise, no insignificant whitespace, UTF-8 with
non-ASCII left unescaped, numbers in shortest round-trip decimal form
(Python's repr for floats, plain digits for ints), and no NaN/Infinity
anywhere. Canonicalization is idempotent, so hashes computed over canonical
bytes are stable across components and runs.
"""

from __future__ import annotations

import json
import math
from typing import Any

from .errors import MalformedJson


def dumps(value: Any) -> str:
    """Serialize ``value`` to canonical JSON text."""
    try:
        return json.dumps(value, sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False, allow_nan=False)
    except ValueError as exc:
        raise MalformedJson(f"not canonicalizable: {exc}") from exc


def dumps_bytes(value: Any) -> bytes:
    return dumps(value).encode("utf-8")


def _finite(text: str) -> float:
    f = float(text)
    if not math.isfinite(f):
        raise MalformedJson(f"non-finite number: {text}")
    return f


def _reject_constant(name: str) -> None:
    raise MalformedJson(f"non-finite constant: {name}")


def loads(text: str | bytes) -> Any:
    """Parse JSON, rejecting NaN/Infinity in any spelling."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"invalid UTF-8: {exc}") from exc
    try:
        return json.loads(text, parse_float=_finite, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from exc
