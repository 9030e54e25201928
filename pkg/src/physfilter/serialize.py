"""Deterministic JSON output with floats written at 17 significant digits."""

from __future__ import annotations

import json
import math
import re

import numpy as np

_MARK = "\x00F"
_PATTERN = re.compile(r'"\\u0000F([^"\\]*)\\u0000"')


def fmt(x) -> str:
    return format(float(x), ".17g")


def _prepare(obj):
    if isinstance(obj, dict):
        return {str(k): _prepare(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_prepare(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_prepare(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return None
        return _MARK + fmt(v) + "\x00"
    return obj


def dumps(obj) -> str:
    """Sorted-key, indented JSON; non-finite floats become ``null``."""
    text = json.dumps(_prepare(obj), sort_keys=True, indent=2)
    return _PATTERN.sub(r"\1", text) + "\n"
