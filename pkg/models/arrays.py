from __future__ import annotations

import math
from typing import Any

import numpy as np
from pydantic import BeforeValidator, PlainSerializer, WithJsonSchema
from typing_extensions import Annotated


def _readonly_float_array(value: Any) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"expected a one-dimensional array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def json_float(value: float) -> float | str:
    """JSON has no infinities; emit them as the strings float() parses back."""
    if math.isnan(value):
        return "NaN"
    if math.isinf(value):
        return "Infinity" if value > 0 else "-Infinity"
    return float(value)


# Read-only float vector; JSON dumps give a list with infinities spelled out.
FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_readonly_float_array),
    PlainSerializer(lambda a: [json_float(v) for v in a.tolist()], return_type=list, when_used="json"),
    WithJsonSchema({"type": "array", "items": {"type": ["number", "string"]}}),
]
