"""Evaluable upper bounds on the excess classification risk in terms of the excess surrogate risk.

Linear bounds carry a constant, concave ones a tabulated nondecreasing curve; both may add a
fixed offset for attacked mass sitting near eta* = 1/2.
"""

from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np

from models.attack import AttackPair
from models.curve import MonotoneCurve
from models.loss import Loss
from models.reports import BoundSpec, EnvelopeCdf, MassartConstant
from services.attack_builder import MASS_FLOOR
from services.loss_core import min_conditional_risk, psi, psi_curve
from utils.errors import DegenerateBoundError, DomainError, PreconditionError
from utils.settings import DEFAULT_TOL, PSI_KNOTS

logger = logging.getLogger(__name__)

CURVE_KNOTS = 4097
GEOMETRIC_KNOTS = 600
CONCAVITY_RTOL = 1e-6


# ---------------------------------------------------------------------------
# Massart-type linear bounds
# ---------------------------------------------------------------------------

def massart_constant(loss: Loss, alpha: float, tol: float = DEFAULT_TOL) -> MassartConstant:
    if not 0 <= alpha <= 0.5:
        raise DomainError(f"alpha must lie in [0, 1/2], got {alpha!r}")
    margin = loss.value_at_zero - min_conditional_risk(loss, 0.5 - alpha, tol)
    if margin <= tol:
        raise DegenerateBoundError(
            f"phi(0) - C*(1/2 - alpha) = {margin:.3g} for {loss.name} at alpha={alpha:g}; the bound diverges"
        )
    return MassartConstant(
        loss=loss.name,
        alpha=alpha,
        margin=margin,
        proof=1.0 / margin,
        conjectured=(0.5 + alpha) / margin,
    )


def standard_massart_constant(loss: Loss, alpha: float, tol: float = DEFAULT_TOL) -> float:
    """Constant of the linear bound for risks without an adversary."""
    return massart_constant(loss, alpha, tol).proof


def massart_linear_bound(loss: Loss, alpha: float, tol: float = DEFAULT_TOL, kind: str = "massart_linear") -> BoundSpec:
    const = massart_constant(loss, alpha, tol)
    return BoundSpec(
        kind=kind,
        loss=loss.name,
        alpha=alpha,
        constant=const.proof,
        conjectured_constant=const.conjectured,
    )


def near_half_mass(attack: AttackPair, alpha: float) -> float:
    """Attacked mass with |eta* - 1/2| < alpha."""
    attacked = attack.attacked
    known = attacked.mass > MASS_FLOOR * attacked.total
    dist = np.abs(attack.eta_star.values[known] - 0.5)
    return float(attacked.mass[known][dist < alpha - 1e-12].sum())


def massart_bound_with_slack(loss: Loss, alpha: float, attack: AttackPair, tol: float = DEFAULT_TOL) -> BoundSpec:
    const = massart_constant(loss, alpha, tol)
    offset = (0.5 + alpha) * near_half_mass(attack, alpha)
    return BoundSpec(
        kind="massart_slack",
        loss=loss.name,
        alpha=alpha,
        constant=const.proof,
        conjectured_constant=const.conjectured,
        additive_offset=offset,
    )


def best_massart_slack_bound(
    loss: Loss,
    attack: AttackPair,
    z: float,
    alphas: Sequence[float] | None = None,
    tol: float = DEFAULT_TOL,
) -> tuple[float, BoundSpec]:
    """Smallest slack-bound value at z over a grid of alpha; degenerate alphas are skipped."""
    alphas = np.linspace(0.0, 0.5, 51) if alphas is None else alphas
    best: tuple[float, BoundSpec] | None = None
    for alpha in alphas:
        try:
            spec = massart_bound_with_slack(loss, float(alpha), attack, tol)
        except DegenerateBoundError:
            continue
        value = spec.evaluate(z)
        if best is None or value < best[0]:
            best = (value, spec)
    if best is None:
        raise DegenerateBoundError(f"no alpha gives a finite slack bound for {loss.name}")
    return best


def psi_bound(loss: Loss, class_excess: float, tol: float = DEFAULT_TOL) -> float:
    """Psi(R - R*), the lower bound on the excess surrogate risk without an adversary."""
    return float(psi(loss, min(max(class_excess, 0.0), 1.0), tol))


# ---------------------------------------------------------------------------
# concave bounds
# ---------------------------------------------------------------------------

def lambda_curve(loss: Loss, tol: float = DEFAULT_TOL) -> MonotoneCurve:
    """y -> Psi^-1(min(y, phi(0))) on [0, phi(0)], left-most preimage on plateaus."""
    curve = psi_curve(loss, tol=tol)
    top = float(curve.ys[-1])
    if top <= 0:
        return MonotoneCurve(xs=[0.0], ys=[0.0], name=f"lambda[{loss.name}]")
    ys = np.linspace(0.0, top, PSI_KNOTS)
    xs = np.maximum.accumulate(curve.inverse(ys))
    return MonotoneCurve(xs=ys, ys=xs, name=f"lambda[{loss.name}]")


def _knots(top: float) -> np.ndarray:
    return np.unique(
        np.concatenate(
            [
                [0.0],
                top * np.geomspace(1e-10, 1.0, GEOMETRIC_KNOTS),
                np.linspace(0.0, top, CURVE_KNOTS),
            ]
        )
    )


def _entropy_term(H: np.ndarray) -> np.ndarray:
    """sqrt(optimize_r(H)) elementwise, with the limit 0 at H = 0."""
    cut = math.exp(-1.0)
    low = (H > 0) & (H <= cut)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(low, -math.e * H * np.log(np.where(low, H, 1.0)), 0.0)
    return np.where(H > cut, 1.0, np.sqrt(np.maximum(t, 0.0)))


def _check_half_consistent(loss: Loss, tol: float) -> None:
    c_half = min_conditional_risk(loss, 0.5, tol)
    if c_half < loss.value_at_zero - tol:
        raise PreconditionError(
            f"C*(1/2) = {c_half:.6g} < phi(0) = {loss.value_at_zero:.6g} for {loss.name}: "
            "the concave bound needs C*(1/2) = phi(0)"
        )


def _concave_curve(loss: Loss, env: EnvelopeCdf, tol: float) -> MonotoneCurve:
    lam = lambda_curve(loss, tol)
    z = _knots(4.0 * loss.value_at_zero)
    lt = lam(np.minimum(z / 4.0, loss.value_at_zero))
    ys = 4.0 * (lt + _entropy_term(np.asarray(env.H(lt), dtype=float)))
    # nondecreasing up to rounding
    ys = np.maximum.accumulate(ys)
    return MonotoneCurve(xs=z, ys=ys, name=f"phi_tilde[{loss.name}]")


def phi_tilde(
    loss: Loss,
    env: EnvelopeCdf,
    atom_budget: float | None = None,
    tol: float = DEFAULT_TOL,
) -> BoundSpec:
    """z -> 4 (L(z) + sqrt(g(H(L(z))))) with L(z) = Psi^-1(min(z/4, phi(0))) and g = optimize_r.

    g(a) = -e a ln a up to a = 1/e and 1 beyond.

    The attacked mass at eta* = 1/2 must not exceed `atom_budget` (default env.atom_tol).
    """
    _check_half_consistent(loss, tol)
    budget = env.atom_tol if atom_budget is None else atom_budget
    if env.strict:
        raise PreconditionError("phi_tilde takes the full envelope; use phi_tilde_with_atom for a strict one")
    if env.atom_at_half > budget:
        raise PreconditionError(
            f"attacked mass {env.atom_at_half:.3g} at eta* = 1/2 exceeds {budget:.3g}; "
            "use the bound with an atom offset"
        )
    return BoundSpec(kind="concave", loss=loss.name, curve=_concave_curve(loss, env, tol))


def phi_tilde_with_atom(loss: Loss, env: EnvelopeCdf, tol: float = DEFAULT_TOL) -> BoundSpec:
    _check_half_consistent(loss, tol)
    if not env.strict:
        raise PreconditionError("the atom bound needs an envelope built with strict=True")
    return BoundSpec(
        kind="concave_atom",
        loss=loss.name,
        curve=_concave_curve(loss, env, tol),
        additive_offset=env.atom_at_half / 2.0,
    )


def proto_bound_r(loss: Loss, env: EnvelopeCdf, r: float, tol: float = DEFAULT_TOL) -> BoundSpec:
    """z -> 4 sqrt(H(L(z/4) / 2)^r / (1 - r)) + 2 L(z/2), L(y) = Psi^-1(min(y, phi(0)))."""
    if not 0 < r < 1:
        raise DomainError(f"r must lie in (0, 1), got {r!r}")
    lam = lambda_curve(loss, tol)
    phi0 = loss.value_at_zero
    z = _knots(4.0 * phi0)
    inner = np.asarray(env.H(0.5 * lam(np.minimum(z / 4.0, phi0))), dtype=float)
    ys = 4.0 * np.sqrt(np.power(inner, r) / (1.0 - r)) + 2.0 * lam(np.minimum(z / 2.0, phi0))
    ys = np.maximum.accumulate(ys)
    return BoundSpec(kind="proto_r", loss=loss.name, r=r, curve=MonotoneCurve(xs=z, ys=ys, name=f"proto[r={r:g}]"))


def optimize_r(a: float) -> float:
    """min over r in [0, 1) of a^r / (1 - r)."""
    if not 0 < a <= 1:
        raise DomainError(f"a must lie in (0, 1], got {a!r}")
    if a > math.exp(-1.0):
        return 1.0
    return -math.e * a * math.log(a)


def argmin_r(a: float) -> float:
    if not 0 < a <= 1:
        raise DomainError(f"a must lie in (0, 1], got {a!r}")
    if a > math.exp(-1.0):
        return 0.0
    return 1.0 + 1.0 / math.log(a)


def _check_concave(curve: MonotoneCurve, what: str) -> None:
    if curve.direction != "nondecreasing":
        raise PreconditionError(f"{what} must be nondecreasing")
    if curve.xs.size < 3:
        return
    slopes = np.diff(curve.ys) / np.diff(curve.xs)
    scale = max(1.0, float(np.max(np.abs(slopes))))
    if np.any(np.diff(slopes) > CONCAVITY_RTOL * scale):
        k = int(np.argmax(np.diff(slopes))) + 1
        raise PreconditionError(f"{what} is not concave at knot x={curve.xs[k]:.6g}")


def general_concave_bound(phi_curve: MonotoneCurve, G: MonotoneCurve, K: float) -> BoundSpec:
    """z -> 4 sqrt(K G(z/4)) + 2 Phi(z/2) for concave nondecreasing G with G(0) = 0."""
    if not K > 0 or not math.isfinite(K):
        raise PreconditionError(f"K must be positive and finite, got {K!r}")
    _check_concave(G, "G")
    _check_concave(phi_curve, "Phi")
    if abs(G(0.0)) > 1e-12:
        raise PreconditionError(f"G(0) = {G(0.0):.3g}, expected 0")
    top = max(4.0 * G.x_max, 2.0 * phi_curve.x_max)
    z = np.unique(np.concatenate([_knots(top), 4.0 * G.xs, 2.0 * phi_curve.xs]))
    z = z[z >= 0]
    ys = 4.0 * np.sqrt(K * np.maximum(G(z / 4.0), 0.0)) + 2.0 * phi_curve(z / 2.0)
    ys = np.maximum.accumulate(ys)
    return BoundSpec(kind="general", loss=phi_curve.name, curve=MonotoneCurve(xs=z, ys=ys, name="general"))
