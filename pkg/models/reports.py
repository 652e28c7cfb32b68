from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from utils.settings import KAPPA, VERSION

from .curve import MonotoneCurve
from .grid import GridDistribution, GridFunction


class RiskReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    value: float = Field(..., ge=0)
    eps: float
    kind: Literal["classification", "surrogate"]
    adversarial: bool
    distribution: str
    function: str
    loss: Optional[str] = None
    spacing: float
    version: str = VERSION


class Feasibility(BaseModel):
    w_inf0: float = Field(..., description="W-infinity distance of the attacked class-0 marginal to its source.")
    w_inf1: float = Field(..., description="Same for class 1.")
    eps: float
    spacing: float

    @property
    def feasible(self) -> bool:
        reach = self.eps + self.spacing
        return self.w_inf0 <= reach and self.w_inf1 <= reach


class DualReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, ser_json_inf_nan="strings")

    value: float = Field(..., ge=0)
    kind: Literal["classification", "surrogate"]
    loss: Optional[str] = None
    feasibility: Optional[Feasibility] = None
    eta_star: GridFunction
    attack: Optional[GridDistribution] = Field(None, description="Maximizing attack for brute-force reports.")
    combinations: Optional[int] = Field(None, description="Attacks enumerated by the brute-force oracle.")
    spacing: float
    version: str = VERSION


class SlacknessReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True, serialize_by_alias=True)

    cond1_gap: float
    cond2_maxviol: float
    slack: float
    tol: float
    passed: bool = Field(..., alias="pass")
    kappa: float = KAPPA
    version: str = VERSION


class OptimumBracket(BaseModel):
    """Interval certified to contain the optimal adversarial surrogate risk on the grid."""

    lower: float = Field(..., description="Largest surrogate dual value over the candidate attacks.")
    upper: float = Field(..., description="Smallest adversarial surrogate risk over the candidate witnesses.")
    width: float
    slack: float
    within_slack: bool
    attack: str = Field(..., description="Attack kept for eta*; later candidates must win by more than the slack.")
    witness: str


class ExcessSplit(BaseModel):
    """Per-class terms of an excess risk measured against one attack."""

    model_config = ConfigDict(ser_json_inf_nan="strings")

    kind: Literal["classification", "surrogate"]
    attack0: float = Field(..., description="Class-0 worst case over the eps-ball minus the value at the attacked mass.")
    attack1: float = Field(..., description="Same for class 1.")
    conditional0: float = Field(..., description="Excess conditional risk under eta*, weighted by attacked class-0 mass.")
    conditional1: float = Field(..., description="Same for class 1.")
    i0: float
    i1: float
    excess: float = Field(..., description="Risk of f minus the dual value of the attack.")
    residual: float = Field(..., description="i0 + i1 - excess.")


class RiskDecomposition(BaseModel):
    classification: ExcessSplit
    surrogate: ExcessSplit
    loss: str
    eps: float
    distribution: str
    attack: str
    function: str
    slack: float
    nonnegative: bool = Field(..., description="Every term is at least -slack.")
    version: str = VERSION


class MaximizerComparison(BaseModel):
    surrogate_max: float
    classification_max: float
    maximizers: int = Field(..., description="Attacks within tol of the surrogate dual maximum.")
    worst_deficit: float = Field(..., description="Largest R-bar shortfall among those maximizers.")


class LowerBoundReport(BaseModel):
    loss: str
    alpha: float
    n: int
    eps: float
    class_excess: float
    surr_excess: float
    ratio: float
    proof_constant: float
    conjectured_constant: float
    version: str = VERSION


class MassartConstant(BaseModel):
    loss: str
    alpha: float
    margin: float = Field(..., description="phi(0) - C*(1/2 - alpha).")
    proof: float = Field(..., description="1 / margin, the constant the theorem is proved with.")
    conjectured: float = Field(..., description="(1/2 + alpha) / margin, the conjectured tight constant.")


class EnvelopeCdf(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    h: MonotoneCurve = Field(..., description="Cdf of |eta* - 1/2| under the attacked mass, right-continuous step.")
    H: MonotoneCurve = Field(..., description="Smallest concave majorant of h on [0, 1/2].")
    atom_at_half: float = Field(..., description="Attacked mass with |eta* - 1/2| <= atom_tol (not normalized).")
    atom_tol: float
    strict: bool = Field(..., description="Whether the eta* = 1/2 atom was removed from h.")
    total_mass: float


BoundKind = Literal[
    "massart_linear",
    "massart_slack",
    "concave",
    "concave_atom",
    "nonadv_linear",
    "proto_r",
    "general",
]


class BoundSpec(BaseModel):
    """An upper bound z -> bound(z) on the excess classification risk, z the excess surrogate risk."""

    model_config = ConfigDict(arbitrary_types_allowed=True, ser_json_inf_nan="strings")

    kind: BoundKind
    loss: str
    alpha: Optional[float] = None
    r: Optional[float] = None
    constant: Optional[float] = None
    conjectured_constant: Optional[float] = None
    curve: Optional[MonotoneCurve] = None
    additive_offset: float = 0.0

    def evaluate(self, z):
        za = np.maximum(np.asarray(z, dtype=float), 0.0)
        if self.curve is not None:
            out = self.curve(za) + self.additive_offset
        else:
            out = self.constant * za + self.additive_offset
        return float(out) if np.ndim(out) == 0 else out


class EnvelopeCheck(BaseModel):
    linear_constant: float = Field(..., description="16 sigma^2 / (mu1 - mu0 - 2 eps).")
    max_excess: float = Field(..., description="Largest H(z) - min(linear_constant * z, 1) over the knots.")
    max_hull_gap: float = Field(..., description="Largest H - h over the knots of h.")
    atom_at_half: float


class ExampleReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    example: str
    params: dict[str, float]
    eps: float
    loss: str
    r_star: float
    realizable: bool
    massart_alpha: float = Field(..., description="min |eta* - 1/2| over the attacked mass.")
    duality_gap: float
    slack: float
    gap_within_slack: bool
    bracket: OptimumBracket = Field(..., description="Certified interval around R_phi*.")
    slackness: SlacknessReport
    envelope: Optional[EnvelopeCheck] = None
    spacing: float
    kappa: float = KAPPA
    version: str = VERSION
