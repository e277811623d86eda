"""JSON text encoding with 17-significant-digit floats.

``json.dumps`` writes the shortest round-trip repr; the file and wire formats
here pin every real to ``%.17g`` instead, which parses back bit-exactly.
"""
from __future__ import annotations

import json
import math

import numpy as np


class FormatError(ValueError):
    """Malformed, truncated, or wrong-version text artifact."""


def fmt_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot encode non-finite value {x!r}")
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def _encode(obj, indent: int | None, level: int) -> str:
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple)):
        if all(isinstance(v, (float, int, np.floating, np.integer)) and not isinstance(v, bool) for v in obj):
            return "[" + ",".join(_encode(v, None, 0) for v in obj) + "]"
        inner = [_encode(v, indent, level + 1) for v in obj]
        return _wrap("[", "]", inner, indent, level)
    if isinstance(obj, dict):
        inner = [json.dumps(str(k)) + ": " + _encode(v, indent, level + 1) for k, v in obj.items()]
        return _wrap("{", "}", inner, indent, level)
    raise TypeError(f"cannot encode {type(obj).__name__}")


def _wrap(open_, close, items, indent, level):
    if not items:
        return open_ + close
    if indent is None:
        return open_ + ",".join(items) + close
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    return open_ + "\n" + ",\n".join(pad + s for s in items) + "\n" + end + close


def dumps(obj, indent: int | None = 1) -> str:
    return _encode(obj, indent, 0)


def loads(text: str, what: str = "document"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed {what}: {exc.msg} at line {exc.lineno} column {exc.colno}") from None
