"""Pipelines behind the `example`, `lowerbound` and `losscurves` commands."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from models.attack import AttackPair
from models.loss import Loss
from models.reports import EnvelopeCdf, EnvelopeCheck, ExampleReport, LowerBoundReport
from services.attack_builder import (
    certify_optimum,
    check_complementary_slackness,
    lower_bound_sequence,
    make_example,
    massart_margin,
)
from services.envelope import cdf_abs_eta
from services.loss_core import (
    check_consistency,
    min_conditional_risk_batch,
    min_misclassify_risk_batch,
    psi_curve,
    smallest_minimizer_batch,
)
from services.risk_engine import duality_gap, optimal_adv_classification_risk
from utils.csv_io import write_csv, write_curve, write_distribution, write_function, write_json
from utils.settings import DEFAULT_TOL, KAPPA, discretization_slack

logger = logging.getLogger(__name__)


def write_attack(attack: AttackPair, out: Path) -> None:
    write_distribution(out / "source.csv", attack.source)
    write_distribution(out / "attacked.csv", attack.attacked)
    write_json(out / "attack.json", attack.manifest())


def envelope_check(env: EnvelopeCdf, mu0: float, mu1: float, sigma: float, eps: float) -> EnvelopeCheck:
    """Compare H against its linear bound at zero and against h on the knots of h."""
    const = 16.0 * sigma**2 / (mu1 - mu0 - 2.0 * eps)
    xs = env.h.xs
    H = np.asarray(env.H(xs), dtype=float)
    return EnvelopeCheck(
        linear_constant=const,
        max_excess=float(np.max(H - np.minimum(const * xs, 1.0))),
        max_hull_gap=float(np.max(H - env.h.ys)),
        atom_at_half=env.atom_at_half,
    )


def run_example(
    which: str,
    params: dict,
    eps: float,
    loss: Loss,
    spacing: float = 1e-3,
    out: str | Path | None = None,
    kappa: float = KAPPA,
    check_concavity: bool = False,
    tol: float = DEFAULT_TOL,
) -> ExampleReport:
    params = dict(params)
    if which == "gaussian":
        params.setdefault("eps", eps)
    d = make_example(which, params, spacing=spacing, pad=eps, check_concavity=check_concavity)
    attack, f_star, bracket = certify_optimum(d, loss, eps, tol, kappa)
    gap = duality_gap(d, loss, f_star, attack.attacked, eps, tol)
    slack = discretization_slack(spacing, d.total, kappa)
    slackness = check_complementary_slackness(d, loss, f_star, attack, tol, kappa)
    r_star = optimal_adv_classification_risk(d, eps)

    env = None
    check = None
    if which == "gaussian":
        env = cdf_abs_eta(attack)
        check = envelope_check(env, params.get("mu0", 0.0), params.get("mu1", 1.0), params.get("sigma", 1.0), eps)

    report = ExampleReport(
        example=which,
        params=params,
        eps=eps,
        loss=loss.name,
        r_star=r_star,
        realizable=r_star <= 1e-12,
        massart_alpha=massart_margin(attack),
        duality_gap=gap,
        slack=slack,
        gap_within_slack=abs(gap) <= slack,
        bracket=bracket,
        slackness=slackness,
        envelope=check,
        spacing=spacing,
        kappa=kappa,
    )
    if not report.gap_within_slack:
        logger.warning("duality gap %.3g on %s exceeds the slack %.3g", gap, d.name, slack)
    logger.info("example %s: R*=%.6g alpha=%.4g gap=%.3g", which, r_star, report.massart_alpha, gap)

    if out is not None:
        out = Path(out)
        write_distribution(out / "distribution.csv", d)
        write_attack(attack, out)
        write_function(out / "witness.csv", f_star)
        if env is not None:
            write_curve(out / "h.csv", env.h)
            write_curve(out / "H.csv", env.H)
            write_json(out / "envelope.json", env)
        write_json(out / "report.json", report)
    return report


def lowerbound_series(
    loss: Loss,
    alpha: float,
    ns: Sequence[int],
    eps: float = 0.1,
    out: str | Path | None = None,
    tol: float = DEFAULT_TOL,
) -> list[LowerBoundReport]:
    reports = [lower_bound_sequence(loss, alpha, int(n), eps, tol=tol) for n in ns]
    if out is not None:
        out = Path(out)
        write_csv(
            out / "lowerbound.csv",
            ("n", "class_excess", "surr_excess", "ratio"),
            ((r.n, r.class_excess, r.surr_excess, r.ratio) for r in reports),
        )
        write_json(out / "lowerbound.json", {"reports": [r.model_dump(mode="json") for r in reports]})
    return reports


def loss_curves(loss: Loss, out: str | Path, samples: int = 201, tol: float = DEFAULT_TOL) -> Path:
    """conditional.csv (eta, c_star, c_minus, alpha_min), psi.csv (theta, psi), consistency.json."""
    out = Path(out)
    eta = np.linspace(0.0, 1.0, samples)
    write_csv(
        out / "conditional.csv",
        ("eta", "c_star", "c_minus", "alpha_min"),
        zip(
            eta,
            min_conditional_risk_batch(loss, eta, tol),
            min_misclassify_risk_batch(loss, eta, tol),
            smallest_minimizer_batch(loss, eta, tol),
        ),
    )
    curve = psi_curve(loss, tol=tol)
    theta = np.linspace(0.0, 1.0, samples)
    write_csv(out / "psi.csv", ("theta", "psi"), zip(theta, curve(theta)))
    write_json(out / "consistency.json", check_consistency(loss, tol, samples))
    return out
