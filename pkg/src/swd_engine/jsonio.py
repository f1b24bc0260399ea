"""Line-delimited JSON with floats at 17 significant digits.

Python's repr already round-trips doubles, but trace files and the wire
protocol pin the stronger guarantee that every float is written with at
least 17 significant decimal digits, so any compliant reader recovers
bit-identical values.
"""

from __future__ import annotations

import json
import math


def format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"non-finite float {x} cannot be serialized")
    return format(x, ".17g")


def dumps(obj) -> str:
    """Compact single-line JSON; floats via :func:`format_float`."""
    parts: list[str] = []
    _write(obj, parts)
    return "".join(parts)


def _write(obj, parts: list[str]) -> None:
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    elif isinstance(obj, int):
        parts.append(str(obj))
    elif isinstance(obj, float):
        parts.append(format_float(obj))
    elif isinstance(obj, dict):
        parts.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if i:
                parts.append(",")
            if not isinstance(key, str):
                key = str(key)
            parts.append(json.dumps(key))
            parts.append(":")
            _write(value, parts)
        parts.append("}")
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, value in enumerate(obj):
            if i:
                parts.append(",")
            _write(value, parts)
        parts.append("]")
    else:
        try:
            parts.append(format_float(float(obj)))
        except (TypeError, ValueError):
            raise TypeError(f"cannot serialize {type(obj).__name__}") from None


def loads(line: str):
    return json.loads(line)
