"""Deterministic JSON rendering.

Output files must be byte-identical across runs, so serialization cannot
go through ``json.dumps`` float formatting (which is fixed to repr) or
rely on dict-ordering accidents. This module renders JSON from plain
Python values with:

- keys emitted in insertion order (callers build dicts in schema order),
- floats rendered either with a fixed significant-digit format (files,
  reports) or ``repr`` (wire protocol, exact round-trip),
- a stable pretty layout where short leaf lists stay on one line.

NaN and infinities are rejected.
"""

import json
import math
from typing import Any

_INLINE_LIMIT = 100


def _number(value: Any, float_fmt: str) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    f = float(value)
    if not math.isfinite(f):
        raise ValueError(f"non-finite number not representable in JSON: {value!r}")
    if float_fmt == "repr":
        return repr(f)
    return format(f, float_fmt)


def _render(value: Any, float_fmt: str, indent: int, level: int) -> str:
    pad = " " * (indent * level)
    inner = " " * (indent * (level + 1))
    if value is None:
        return "null"
    if isinstance(value, (bool, int, float)):
        return _number(value, float_fmt)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        parts = [_render(v, float_fmt, indent, level + 1) for v in value]
        joined = ", ".join(parts)
        if indent == 0:
            return "[" + ",".join(parts) + "]"
        if "\n" not in joined and len(joined) <= _INLINE_LIMIT:
            return "[" + joined + "]"
        body = (",\n" + inner).join(parts)
        return "[\n" + inner + body + "\n" + pad + "]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = []
        for k, v in value.items():
            if not isinstance(k, str):
                raise ValueError(f"JSON object keys must be strings, got {k!r}")
            items.append((json.dumps(k, ensure_ascii=False), _render(v, float_fmt, indent, level + 1)))
        if indent == 0:
            return "{" + ",".join(f"{k}:{v}" for k, v in items) + "}"
        body = (",\n" + inner).join(f"{k}: {v}" for k, v in items)
        return "{\n" + inner + body + "\n" + pad + "}"
    raise TypeError(f"value of type {type(value).__name__} is not JSON-serializable")


def dumps(value: Any, *, floats: str = ".9g", compact: bool = False) -> str:
    """Render ``value`` as canonical JSON text.

    ``floats`` is a format spec applied to every float, or ``"repr"`` for
    exact shortest-round-trip rendering. ``compact`` collapses the output
    to a single line (used for protocol lines).
    """
    return _render(value, floats, 0 if compact else 2, 0)
