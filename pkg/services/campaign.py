from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Callable

import numpy as np
from dotenv import dotenv_values
from pydantic import ValidationError

from models.attack import AttackPair
from models.campaign import ROW_HEADER, CampaignConfig, VerifyReport, VerifyRow, VerifySummary
from models.grid import GridDistribution, GridFunction
from models.loss import Loss
from models.reports import BoundSpec, OptimumBracket
from services.attack_builder import certify_optimum, make_example, massart_margin
from services.bound_factory import (
    massart_bound_with_slack,
    massart_linear_bound,
    phi_tilde,
    phi_tilde_with_atom,
    proto_bound_r,
)
from services.envelope import cdf_abs_eta
from services.grid_dist import extend_grid
from services.loss_core import parse_loss_spec
from services.pool import executor
from services.risk_engine import (
    adv_classification_risk,
    adv_surrogate_risk,
    optimal_adv_classification_risk,
)
from utils.csv_io import read_distribution, write_csv, write_json
from utils.errors import ConfigError
from utils.settings import KAPPA, discretization_slack

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _key_lines(path: Path) -> dict[str, int]:
    lines = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        text = raw.strip()
        if not text or text.startswith("#") or "=" not in text:
            continue
        key = text.split("=", 1)[0].strip()
        if key.startswith("export "):
            key = key[len("export "):].strip()
        lines[key] = lineno
    return lines


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> CampaignConfig:
    """Flat KEY=value file (keys case-insensitive) with flag overrides applied on top."""
    values: dict = {}
    lines: dict[str, int] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(str(path), "config file not found")
        lines = {k.lower(): v for k, v in _key_lines(path).items()}
        values = {k.lower(): v for k, v in dotenv_values(path).items() if v is not None}
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
            lines.pop(key, None)
    try:
        return CampaignConfig(**values)
    except ValidationError as exc:
        err = exc.errors()[0]
        field = str(err["loc"][0]) if err["loc"] else "config"
        raise ConfigError(field, err["msg"], line=lines.get(field)) from None


def build_distribution(cfg: CampaignConfig) -> GridDistribution:
    """The source distribution padded by eps so attacks and eps-windows stay on the grid."""
    if cfg.example is not None:
        params = dict(cfg.params)
        if cfg.example == "gaussian":
            params.setdefault("eps", cfg.eps)
        return make_example(cfg.example, params, spacing=cfg.spacing, pad=cfg.eps)
    d = read_distribution(cfg.distribution_csv)
    if abs(d.grid.spacing - cfg.spacing) > 1e-9 * cfg.spacing:
        raise ConfigError("spacing", f"{cfg.distribution_csv} has spacing {d.grid.spacing!r}, config says {cfg.spacing!r}")
    return extend_grid(d, cfg.eps)


# ---------------------------------------------------------------------------
# classifier samplers
# ---------------------------------------------------------------------------

def _random_threshold(d: GridDistribution, witness: GridFunction, rng: np.random.Generator, index: int) -> np.ndarray:
    t = rng.uniform(d.grid.lo, d.grid.hi)
    return d.grid.nodes - t


def _random_piecewise(d: GridDistribution, witness: GridFunction, rng: np.random.Generator, index: int) -> np.ndarray:
    k = int(rng.integers(2, 8))
    knots = np.sort(rng.uniform(d.grid.lo, d.grid.hi, size=k))
    values = rng.uniform(-2.0, 2.0, size=k)
    return np.interp(d.grid.nodes, knots, values)


def _perturbed_witness(d: GridDistribution, witness: GridFunction, rng: np.random.Generator, index: int) -> np.ndarray:
    base = witness.values
    noise = rng.uniform(-0.5, 0.5, size=base.size)
    return np.where(np.isfinite(base), base + noise, base)


def _fn_sequence(d: GridDistribution, witness: GridFunction, rng: np.random.Generator, index: int) -> np.ndarray:
    n = index + 1
    return np.where(witness.values > 0, 1.0 / n, -1.0 / n)


SAMPLERS: dict[str, Callable[..., np.ndarray]] = {
    "random-threshold": _random_threshold,
    "random-piecewise": _random_piecewise,
    "perturbed-witness": _perturbed_witness,
    "fn-sequence": _fn_sequence,
}


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------

def build_bounds(cfg: CampaignConfig, loss: Loss, attack: AttackPair, slack: float) -> dict[str, BoundSpec]:
    alpha = cfg.alpha if cfg.alpha is not None else min(massart_margin(attack), 0.5)
    bounds: dict[str, BoundSpec] = {}
    for name in cfg.bounds:
        if name == "massart":
            bounds[name] = massart_linear_bound(loss, alpha)
        elif name == "massart-slack":
            bounds[name] = massart_bound_with_slack(loss, alpha, attack)
        elif name == "massart-standard":
            if cfg.eps != 0:
                raise ConfigError("bounds", "massart-standard covers risks without an adversary; set eps=0")
            bounds[name] = massart_linear_bound(loss, alpha, kind="nonadv_linear")
        elif name == "envelope":
            bounds[name] = phi_tilde(loss, cdf_abs_eta(attack), atom_budget=slack)
        elif name == "envelope-atom":
            bounds[name] = phi_tilde_with_atom(loss, cdf_abs_eta(attack, strict=True))
        elif name == "envelope-r":
            bounds[name] = proto_bound_r(loss, cdf_abs_eta(attack), cfg.r)
    return bounds


# ---------------------------------------------------------------------------
# campaign
# ---------------------------------------------------------------------------

def optimal_values(
    d: GridDistribution, loss: Loss, eps: float, kappa: float | None = None
) -> tuple[float, OptimumBracket, AttackPair, GridFunction]:
    """(R*, bracket on R_phi*, attack whose eta* feeds the bounds, witness for the samplers)."""
    r_star = optimal_adv_classification_risk(d, eps)
    attack, witness, bracket = certify_optimum(d, loss, eps, kappa=KAPPA if kappa is None else kappa)
    logger.info(
        "optimal values on %s: R*=%.6g R_phi* in [%.6g, %.6g]", d.name, r_star, bracket.lower, bracket.upper
    )
    return r_star, bracket, attack, witness


def run_verify(cfg: CampaignConfig) -> VerifyReport:
    started = time.perf_counter()
    loss = parse_loss_spec(cfg.loss)
    d = build_distribution(cfg)
    eps = cfg.eps
    r_star, bracket, attack, witness = optimal_values(d, loss, eps, cfg.kappa)
    # upper end of the bracket: surr_excess may be understated, never overstated
    r_phi_star = bracket.upper
    slack = discretization_slack(d.grid.spacing, d.total, cfg.kappa)
    bounds = build_bounds(cfg, loss, attack, slack)
    sampler = SAMPLERS[cfg.sampler]
    logger.info(
        "campaign on %s with %s: %d samples, bounds %s", d.name, loss.name, cfg.samples, ",".join(bounds)
    )

    def evaluate(index: int) -> list[VerifyRow]:
        rng = np.random.default_rng([cfg.seed, index])
        f = GridFunction(grid=d.grid, values=sampler(d, witness, rng, index), name=f"sample{index}")
        surr = adv_surrogate_risk(d, loss, f, eps) - r_phi_star
        cls = adv_classification_risk(d, f, eps) - r_star
        rows = []
        for name, spec in bounds.items():
            value = spec.evaluate(surr)
            rows.append(
                VerifyRow(
                    index=index,
                    seed=cfg.seed,
                    bound=name,
                    surr_excess=surr,
                    class_excess=cls,
                    bound_value=value,
                    margin=value - cls,
                    slack=slack,
                )
            )
        return rows

    try:
        rows = [row for batch in executor.map(evaluate, range(cfg.samples)) for row in batch]
    except Exception:
        logger.exception("campaign worker failed")
        raise

    violations = sum(row.violated for row in rows)
    summary = VerifySummary(
        rows=len(rows),
        violations=violations,
        min_margin=min(row.margin for row in rows),
        runtime_s=time.perf_counter() - started,
        r_star=r_star,
        r_phi_star=r_phi_star,
        r_phi_lower=bracket.lower,
        opt_gap=bracket.width,
        bracket_within_slack=bracket.within_slack,
        attack=attack.attacked.name,
        alpha=next((b.alpha for b in bounds.values() if b.alpha is not None), None),
    )
    if violations:
        logger.warning("%d of %d rows violate their bound by more than the slack", violations, len(rows))
    else:
        logger.info("campaign finished without violations, min margin %.3g", summary.min_margin)
    if not bracket.within_slack:
        logger.warning("R_phi* is bracketed only to %.3g, above the slack %.3g", bracket.width, slack)
    return VerifyReport(
        config=cfg, summary=summary, rows=rows, bounds=bounds, spacing=d.grid.spacing, kappa=cfg.kappa
    )


def write_report(report: VerifyReport, out: str | Path | None = None) -> Path:
    out = Path(out or report.config.out)
    write_csv(out / "rows.csv", ROW_HEADER, (row.as_row() for row in report.rows))
    write_json(out / "summary.json", report)
    write_json(out / "bounds.json", {name: spec.model_dump(mode="json") for name, spec in report.bounds.items()})
    return out
