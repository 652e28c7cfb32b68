from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils.settings import KAPPA, VERSION

from .reports import BoundSpec

SamplerKind = Literal["random-threshold", "random-piecewise", "perturbed-witness", "fn-sequence"]
BoundName = Literal["massart", "massart-slack", "envelope", "envelope-atom", "massart-standard", "envelope-r"]


class CampaignConfig(BaseModel):
    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "example": "massart",
                "params": {"delta": 0.5},
                "loss": "rho_margin:rho=1",
                "eps": 0.25,
                "spacing": 0.001,
                "samples": 200,
                "sampler": "random-threshold",
                "seed": 7,
                "bounds": ["massart"],
                "out": "out/massart",
            }
        },
    )

    example: Optional[Literal["realizable", "massart", "gaussian"]] = None
    params: dict[str, float] = Field(default_factory=dict, description="Example parameters, `k:v,k:v` in files.")
    distribution_csv: Optional[str] = Field(None, description="x,p0,p1 table used instead of an example.")
    loss: str = "hinge"
    eps: float = Field(0.25, ge=0)
    spacing: float = Field(1e-3, gt=0)
    samples: int = Field(200, ge=1)
    sampler: SamplerKind = "random-threshold"
    seed: int = 0
    bounds: list[BoundName] = Field(default_factory=lambda: ["massart"])
    alpha: Optional[float] = Field(None, ge=0, le=0.5, description="Massart margin; detected from eta* if unset.")
    r: float = Field(0.5, gt=0, lt=1)
    kappa: float = Field(KAPPA, gt=0)
    out: str = "out"

    @field_validator("params", mode="before")
    @classmethod
    def _parse_params(cls, value):
        if isinstance(value, str):
            pairs = [p for p in value.split(",") if p.strip()]
            out = {}
            for pair in pairs:
                key, sep, raw = pair.partition(":")
                if not sep:
                    raise ValueError(f"expected key:value, got {pair!r}")
                out[key.strip()] = float(raw)
            return out
        return value

    @field_validator("bounds", mode="before")
    @classmethod
    def _parse_bounds(cls, value):
        if isinstance(value, str):
            return [b.strip() for b in value.split(",") if b.strip()]
        return value

    @model_validator(mode="after")
    def _check_source(self) -> CampaignConfig:
        if (self.example is None) == (self.distribution_csv is None):
            raise ValueError("give exactly one of example and distribution_csv")
        if not self.bounds:
            raise ValueError("at least one bound must be selected")
        return self


class VerifyRow(BaseModel):
    index: int
    seed: int
    bound: BoundName
    surr_excess: float
    class_excess: float
    bound_value: float
    margin: float = Field(..., description="bound_value - class_excess.")
    slack: float

    @property
    def violated(self) -> bool:
        return self.margin < -self.slack

    def as_row(self) -> tuple:
        return (
            self.index,
            self.seed,
            self.bound,
            self.surr_excess,
            self.class_excess,
            self.bound_value,
            self.margin,
            self.slack,
        )


ROW_HEADER = ("index", "seed", "bound", "surr_excess", "class_excess", "bound_value", "margin", "slack")


class VerifySummary(BaseModel):
    rows: int
    violations: int
    min_margin: float
    runtime_s: float
    r_star: float = Field(..., description="Exact adversarial Bayes risk on the grid.")
    r_phi_star: float = Field(..., description="Upper end of the bracket on R_phi*, subtracted from every surrogate risk.")
    r_phi_lower: float = Field(..., description="Lower end of the bracket, the best candidate dual value.")
    opt_gap: float = Field(..., description="Width of the bracket on R_phi*.")
    bracket_within_slack: bool = Field(..., description="Whether opt_gap is within the discretization slack.")
    attack: str = Field(..., description="Attack whose eta* the bounds were built from.")
    alpha: Optional[float] = None


class VerifyReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    config: CampaignConfig
    summary: VerifySummary
    rows: list[VerifyRow] = Field(default_factory=list, exclude=True)
    bounds: dict[str, BoundSpec] = Field(default_factory=dict, exclude=True)
    spacing: float
    kappa: float
    version: str = VERSION

    @property
    def failed(self) -> bool:
        return self.summary.violations > 0 or not self.summary.bracket_within_slack
