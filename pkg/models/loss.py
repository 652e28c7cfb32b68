from __future__ import annotations

import math
from typing import Callable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .curve import MonotoneCurve


class Loss(BaseModel):
    """A margin loss phi: non-increasing, continuous, vanishing at +inf."""

    model_config = ConfigDict(
        frozen=True,
        ser_json_inf_nan="strings",
        json_schema_extra={
            "example": {"name": "hinge", "value_at_zero": 1.0, "limit_pos": 0.0, "limit_neg": "Infinity"}
        },
    )

    name: str = Field(..., description="Loss identifier, e.g. 'rho_margin(rho=1)'.")
    value_at_zero: float = Field(..., description="phi(0).")
    limit_pos: float = Field(0.0, description="Limit of phi at +inf; always 0.")
    limit_neg: float = Field(..., description="Limit of phi at -inf; may be +inf.")
    fn: Callable[[np.ndarray], np.ndarray] = Field(
        ..., exclude=True, description="Vectorized evaluation on finite scores."
    )

    @model_validator(mode="after")
    def _check_limits(self) -> Loss:
        if self.limit_pos != 0.0:
            raise ValueError("a loss must vanish at +inf")
        at_zero = float(self.fn(np.zeros(1))[0])
        if not math.isclose(at_zero, self.value_at_zero, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError(f"phi(0)={at_zero!r} but value_at_zero={self.value_at_zero!r}")
        return self

    def __call__(self, alpha):
        a = np.asarray(alpha, dtype=float)
        finite = np.isfinite(a)
        with np.errstate(over="ignore"):
            vals = self.fn(np.where(finite, a, 0.0))
        out = np.where(finite, vals, np.where(a > 0, self.limit_pos, self.limit_neg))
        return float(out) if np.ndim(out) == 0 else out


class ConditionalRiskReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    loss: str
    eta: float = Field(..., ge=0, le=1)
    c_star: float = Field(..., description="Minimal conditional risk.")
    c_minus: float = Field(..., description="Minimal conditional risk under forced misclassification.")
    alpha_min: float = Field(..., description="Smallest minimizer; may be infinite.")
    tol: float


class ConsistencyReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    loss: str
    consistent: bool
    adversarially_consistent: bool
    margin_at_half: float = Field(..., description="phi(0) - C*(1/2).")
    margin_curve: MonotoneCurve = Field(
        ..., description="eta -> phi(0) - C*(eta) on [1/2, 1]; the other half mirrors it."
    )
    samples: int = Field(..., description="Number of eta grid points the flags are certified on.")
    tol: float
