from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from utils.errors import AlignmentError, DomainError

from .arrays import FloatArray

ALIGN_RTOL = 1e-9


class Grid(BaseModel):
    model_config = ConfigDict(
        frozen=True,
        json_schema_extra={"example": {"lo": -1.5, "spacing": 0.001, "count": 3001}},
    )

    lo: float = Field(..., description="Position of node 0.")
    spacing: float = Field(..., gt=0, description="Distance between consecutive nodes.")
    count: int = Field(..., gt=0, description="Number of nodes.")

    @property
    def nodes(self) -> np.ndarray:
        return self.lo + self.spacing * np.arange(self.count)

    @property
    def hi(self) -> float:
        return self.lo + self.spacing * (self.count - 1)

    def steps(self, length: float, what: str = "eps") -> int:
        """Number of nodes spanned by a nonnegative length that must be a multiple of the spacing."""
        if length < 0:
            raise DomainError(f"{what} must be nonnegative, got {length!r}")
        ratio = length / self.spacing
        w = int(round(ratio))
        if abs(ratio - w) > ALIGN_RTOL * max(1.0, ratio):
            raise AlignmentError(what, length, self.spacing)
        return w

    def offset_in(self, other: Grid) -> int:
        """Index in `other` of this grid's node 0; both grids must share spacing and lattice."""
        if abs(self.spacing - other.spacing) > ALIGN_RTOL * self.spacing:
            raise AlignmentError("spacing", self.spacing, other.spacing)
        shift = (self.lo - other.lo) / self.spacing
        k = int(round(shift))
        if abs(shift - k) > 1e-6:
            raise AlignmentError("grid origin offset", self.lo - other.lo, self.spacing)
        return k

    def widened(self, w: int) -> Grid:
        return Grid(lo=self.lo - w * self.spacing, spacing=self.spacing, count=self.count + 2 * w)


class GridDistribution(BaseModel):
    """Class masses (P0, P1) atomized on the nodes of a uniform grid."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: Grid
    mass0: FloatArray = Field(..., description="Class-0 mass per node.")
    mass1: FloatArray = Field(..., description="Class-1 mass per node.")
    name: str = Field("distribution", description="Identifier carried into reports.")
    strict_mass: bool = Field(
        True,
        description="Reject total mass above 1; switch off for unnormalized user data.",
    )

    @model_validator(mode="after")
    def _check_masses(self) -> GridDistribution:
        for label, m in (("mass0", self.mass0), ("mass1", self.mass1)):
            if m.shape != (self.grid.count,):
                raise ValueError(f"{label} has {m.shape[0]} entries for a grid of {self.grid.count} nodes")
            if not np.all(np.isfinite(m)) or np.any(m < 0):
                raise ValueError(f"{label} must be finite and nonnegative")
        total = self.total
        if total <= 0:
            raise ValueError("distribution carries no mass")
        if self.strict_mass and total > 1 + 1e-9:
            raise ValueError(f"total mass {total!r} exceeds 1")
        return self

    @property
    def total0(self) -> float:
        return float(self.mass0.sum())

    @property
    def total1(self) -> float:
        return float(self.mass1.sum())

    @property
    def total(self) -> float:
        return self.total0 + self.total1

    @property
    def mass(self) -> np.ndarray:
        return self.mass0 + self.mass1

    @property
    def support(self) -> np.ndarray:
        """Indices of mass-bearing nodes."""
        return np.flatnonzero(self.mass > 0)

    @property
    def eta(self) -> np.ndarray:
        """Class-1 fraction per node, NaN where the node carries no mass."""
        m = self.mass
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(m > 0, self.mass1 / np.where(m > 0, m, 1.0), np.nan)

    def renamed(self, name: str) -> GridDistribution:
        return self.model_copy(update={"name": name})


class GridFunction(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: Grid
    values: FloatArray = Field(..., description="Extended-real value per node.")
    name: str = "f"

    @model_validator(mode="after")
    def _check_length(self) -> GridFunction:
        if self.values.shape != (self.grid.count,):
            raise ValueError(f"{self.values.shape[0]} values for a grid of {self.grid.count} nodes")
        if np.any(np.isnan(self.values)):
            raise ValueError("grid function values must not be NaN")
        return self

    def with_values(self, values: np.ndarray, name: str | None = None) -> GridFunction:
        return GridFunction(grid=self.grid, values=values, name=name or self.name)
