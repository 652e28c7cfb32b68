from __future__ import annotations

import math

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .grid import GridDistribution, GridFunction


class AttackPair(BaseModel):
    """A source distribution, its attacked counterpart and the eta* field of the latter."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    source: GridDistribution
    attacked: GridDistribution
    shift0: float = Field(..., description="Class-0 displacement, +eps for the shift attack.")
    shift1: float = Field(..., description="Class-1 displacement, -eps for the shift attack.")
    eps: float = Field(..., ge=0)
    eta_star: GridFunction = Field(..., description="Class-1 fraction of the attacked mass per node.")

    @model_validator(mode="after")
    def _check(self) -> AttackPair:
        reach = self.eps * (1 + 1e-9)
        if abs(self.shift0) > reach or abs(self.shift1) > reach:
            raise ValueError("shifts exceed the attack budget eps")
        for a, b, label in (
            (self.source.total0, self.attacked.total0, "class 0"),
            (self.source.total1, self.attacked.total1, "class 1"),
        ):
            if not math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-12):
                raise ValueError(f"{label} mass changed under the attack: {a!r} -> {b!r}")
        return self

    def manifest(self) -> dict:
        return {
            "eps": self.eps,
            "shift0": self.shift0,
            "shift1": self.shift1,
            "source_totals": [self.source.total0, self.source.total1],
            "attacked_totals": [self.attacked.total0, self.attacked.total1],
            "spacing": self.source.grid.spacing,
        }
