from __future__ import annotations

import logging
import socket
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field, ValidationError
from starlette.responses import JSONResponse

from models.grid import Grid, GridDistribution, GridFunction
from models.health import Health
from models.loss import ConditionalRiskReport, ConsistencyReport, Loss
from models.reports import RiskReport
from services.loss_core import check_consistency, conditional_risk_report, parse_loss_spec
from services.risk_engine import dual_classification_objective, dual_surrogate_objective, evaluate_risks
from utils.errors import DomainError, RiskBoundError
from utils.settings import LOSS_TABLE_DIR, PORT, VERSION

UTC = timezone.utc

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

app = FastAPI(
    title="Adversarial Risk Bounds API",
    description="Conditional-risk calculus, adversarial risks and dual objectives on 1-D grids.",
    version=VERSION,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class DistributionBody(BaseModel):
    x: List[float] = Field(..., description="Uniform ascending grid nodes.")
    p0: List[float]
    p1: List[float]

    def to_distribution(self, name: str = "request") -> GridDistribution:
        x = np.asarray(self.x, dtype=float)
        if x.size < 2:
            raise DomainError("a distribution needs at least two grid nodes")
        steps = np.diff(x)
        spacing = float(steps.mean())
        if spacing <= 0 or np.max(np.abs(steps - spacing)) > 1e-9 * max(1.0, spacing):
            raise DomainError("x is not a uniform ascending grid")
        grid = Grid(lo=float(x[0]), spacing=spacing, count=int(x.size))
        try:
            return GridDistribution(grid=grid, mass0=self.p0, mass1=self.p1, name=name)
        except ValidationError as exc:
            raise DomainError(exc.errors()[0]["msg"]) from None


class RiskRequest(DistributionBody):
    values: List[float] = Field(..., description="Classifier scores on the same nodes.")
    loss: Optional[str] = Field(None, description="Loss spec such as 'hinge' or 'rho_margin:rho=1'.")
    eps: float = Field(0.0, ge=0)

    model_config = {
        "json_schema_extra": {
            "example": {
                "x": [-1.0, 0.0, 1.0],
                "p0": [0.5, 0.0, 0.0],
                "p1": [0.0, 0.0, 0.5],
                "values": [-1.0, 0.0, 1.0],
                "loss": "hinge",
                "eps": 0.0,
            }
        }
    }


class DualRequest(DistributionBody):
    loss: str = "hinge"


class DualResponse(BaseModel):
    surrogate: float
    classification: float
    loss: str
    version: str = VERSION


@app.exception_handler(RiskBoundError)
async def risk_bound_error_handler(request: Request, exc: RiskBoundError):
    logger.warning("%s on %s: %s", type(exc).__name__, request.url.path, exc)
    return JSONResponse(status_code=422, content={"detail": str(exc), "error": type(exc).__name__})


def request_loss(spec: str) -> Loss:
    """parse_loss_spec for request input; `table:` paths must resolve inside LOSS_TABLE_DIR."""
    name, _, rest = spec.strip().partition(":")
    if name != "table":
        return parse_loss_spec(spec)
    if not LOSS_TABLE_DIR:
        raise DomainError("table losses are not served over HTTP unless RISKBOUND_LOSS_TABLE_DIR is set")
    path, sep, options = rest.partition(",")
    root = Path(LOSS_TABLE_DIR).resolve()
    resolved = (root / path).resolve()
    if not resolved.is_relative_to(root):
        raise DomainError(f"loss table {path!r} lies outside the table directory")
    return parse_loss_spec(f"table:{resolved}{sep}{options}")


def make_health() -> Health:
    return Health(
        status=200,
        status_message="OK",
        timestamp=datetime.now(UTC).isoformat() + "Z",
        ip_address=socket.gethostbyname(socket.gethostname()),
        version=VERSION,
    )


@app.get("/health", response_model=Health)
def get_health():
    return make_health()


@app.get("/losses/{spec}", response_model=ConditionalRiskReport)
def get_conditional_risk(spec: str, eta: float = Query(0.5, ge=0.0, le=1.0)):
    return conditional_risk_report(request_loss(spec), eta)


@app.get("/losses/{spec}/consistency", response_model=ConsistencyReport)
def get_consistency(spec: str):
    return check_consistency(request_loss(spec))


@app.post("/risk", response_model=List[RiskReport])
def post_risk(body: RiskRequest):
    d = body.to_distribution()
    if len(body.values) != d.grid.count:
        raise DomainError(f"expected {d.grid.count} classifier values, got {len(body.values)}")
    f = GridFunction(grid=d.grid, values=body.values, name="request")
    loss = request_loss(body.loss) if body.loss else None
    return evaluate_risks(d, f, body.eps, loss)


@app.post("/dual", response_model=DualResponse)
def post_dual(body: DualRequest):
    attacked = body.to_distribution(name="attack")
    loss = request_loss(body.loss)
    return DualResponse(
        surrogate=dual_surrogate_objective(attacked, loss).value,
        classification=dual_classification_objective(attacked).value,
        loss=loss.name,
    )


@app.get("/")
def root():
    return {
        "message": "Adversarial risk bounds service. See /docs for OpenAPI UI.",
        "endpoints": ["/health", "/losses/{spec}", "/losses/{spec}/consistency", "/risk", "/dual"],
        "version": VERSION,
    }


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=PORT)
