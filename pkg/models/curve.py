from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from utils.errors import DomainError

from .arrays import FloatArray


class MonotoneCurve(BaseModel):
    """Monotone scalar function given by knots, clamped to the end values outside them.

    `linear` interpolates between knots; `step` is right-continuous and holds the value
    of the last knot at or left of the argument.
    """

    model_config = ConfigDict(
        frozen=True,
        arbitrary_types_allowed=True,
        json_schema_extra={
            "example": {"xs": [0.0, 0.25, 0.5], "ys": [0.0, 1.0, 1.0], "direction": "nondecreasing"}
        },
    )

    xs: FloatArray = Field(..., description="Strictly ascending knot abscissae.")
    ys: FloatArray = Field(..., description="Knot values, monotone per direction.")
    direction: Literal["nondecreasing", "nonincreasing"] = "nondecreasing"
    interpolation: Literal["linear", "step"] = "linear"
    name: str = "curve"

    @model_validator(mode="after")
    def _check_knots(self) -> MonotoneCurve:
        if self.xs.shape != self.ys.shape or self.xs.size == 0:
            raise ValueError("xs and ys must be non-empty and of equal length")
        if not np.all(np.isfinite(self.xs)) or np.any(np.diff(self.xs) <= 0):
            raise ValueError("knot abscissae must be finite and strictly ascending")
        dy = np.diff(self.ys)
        if self.direction == "nondecreasing" and np.any(dy < 0):
            raise ValueError("knot values decrease on a nondecreasing curve")
        if self.direction == "nonincreasing" and np.any(dy > 0):
            raise ValueError("knot values increase on a nonincreasing curve")
        return self

    @property
    def x_min(self) -> float:
        return float(self.xs[0])

    @property
    def x_max(self) -> float:
        return float(self.xs[-1])

    def __call__(self, x):
        xa = np.asarray(x, dtype=float)
        if self.interpolation == "linear":
            out = np.interp(xa, self.xs, self.ys)
        else:
            idx = np.clip(np.searchsorted(self.xs, xa, side="right") - 1, 0, self.xs.size - 1)
            out = self.ys[idx]
        return float(out) if np.ndim(out) == 0 else out

    def inverse(self, y, atol: float = 1e-12):
        """Left-most preimage of y on a nondecreasing linear curve (binary search over knots)."""
        if self.direction != "nondecreasing" or self.interpolation != "linear":
            raise DomainError("inverse is defined for nondecreasing linear curves only")
        ya = np.asarray(y, dtype=float)
        lo, hi = float(self.ys[0]), float(self.ys[-1])
        if np.any(ya < lo - atol) or np.any(ya > hi + atol):
            raise DomainError(f"value outside the curve range [{lo}, {hi}]")
        ya = np.clip(ya, lo, hi)
        i = np.clip(np.searchsorted(self.ys, ya, side="left"), 1, self.ys.size - 1)
        y0, y1 = self.ys[i - 1], self.ys[i]
        x0, x1 = self.xs[i - 1], self.xs[i]
        rise = y1 - y0
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(rise > 0, (ya - y0) / np.where(rise > 0, rise, 1.0), 1.0)
        out = np.where(ya <= self.ys[0], self.xs[0], x0 + t * (x1 - x0))
        return float(out) if np.ndim(out) == 0 else out

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.xs.tolist(), self.ys.tolist()))
