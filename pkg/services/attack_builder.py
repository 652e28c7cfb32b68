"""Optimal attacks for one-dimensional families, the worked examples and the lower-bound construction."""
from __future__ import annotations

import logging
import math
from typing import Literal

import numpy as np
from scipy.stats import norm

from models.attack import AttackPair
from models.grid import Grid, GridDistribution, GridFunction
from models.loss import Loss
from models.reports import LowerBoundReport, OptimumBracket, SlacknessReport
from services.grid_dist import function_window, nearest_fill, on_distribution, sup_ball
from services.loss_core import (
    conditional_risk,
    min_conditional_risk,
    min_conditional_risk_batch,
    smallest_minimizer_batch,
)
from services.risk_engine import (
    adv_classification_risk,
    adv_surrogate_risk,
    attack_feasibility,
    dual_surrogate_objective,
    eta_field,
    optimal_adv_classification_risk,
)
from utils.errors import CoverageError, DomainError, InfeasibleAttackError, PreconditionError
from utils.settings import DEFAULT_TOL, KAPPA, discretization_slack

logger = logging.getLogger(__name__)

ExampleName = Literal["realizable", "massart", "gaussian"]

# relative to total mass; lighter nodes are treated as massless when reading off eta*
MASS_FLOOR = 1e-12
GAUSSIAN_RADIUS = 8.0


def shift_attack(d: GridDistribution, eps: float) -> AttackPair:
    """Move class 1 left by eps and class 0 right by eps."""
    w = d.grid.steps(eps)
    if w and (np.any(d.mass1[:w] > 0) or np.any(d.mass0[-w:] > 0)):
        raise CoverageError(f"{d.name} must be extended by eps={eps} before it can be shifted")
    n = d.grid.count
    mass1 = np.zeros(n)
    mass0 = np.zeros(n)
    mass1[: n - w] = d.mass1[w:]
    mass0[w:] = d.mass0[: n - w]
    attacked = GridDistribution(
        grid=d.grid, mass0=mass0, mass1=mass1, name=f"shift[{d.name}]", strict_mass=d.strict_mass
    )
    return AttackPair(source=d, attacked=attacked, shift0=eps, shift1=-eps, eps=eps, eta_star=eta_field(attacked))


def unmoved_attack(d: GridDistribution, eps: float = 0.0) -> AttackPair:
    return AttackPair(source=d, attacked=d, shift0=0.0, shift1=0.0, eps=eps, eta_star=eta_field(d))


def matching_attack(d: GridDistribution, eps: float) -> AttackPair:
    """Pair class-0 with class-1 mass at most 2 eps apart and move each pair to its midpoint node.

    Greedy from the left over the mass-bearing nodes, so the matched mass is maximal and equals
    the adversarial Bayes risk. Unmatched mass stays where it is.
    """
    w = d.grid.steps(eps)
    idx0, idx1 = np.flatnonzero(d.mass0 > 0), np.flatnonzero(d.mass1 > 0)
    rest0, rest1 = d.mass0[idx0].copy(), d.mass1[idx1].copy()
    mass0, mass1 = d.mass0.copy(), d.mass1.copy()
    a = b = 0
    matched = 0.0
    while a < idx0.size and b < idx1.size:
        i, j = int(idx0[a]), int(idx1[b])
        if abs(i - j) > 2 * w:
            if i < j:
                a += 1
            else:
                b += 1
            continue
        m = min(rest0[a], rest1[b])
        z = min(i, j) + abs(i - j) // 2
        mass0[i] -= m
        mass0[z] += m
        mass1[j] -= m
        mass1[z] += m
        rest0[a] -= m
        rest1[b] -= m
        matched += m
        if rest0[a] <= 0:
            a += 1
        if rest1[b] <= 0:
            b += 1
    attacked = GridDistribution(
        grid=d.grid,
        mass0=np.maximum(mass0, 0.0),
        mass1=np.maximum(mass1, 0.0),
        name=f"matched[{d.name}]",
        strict_mass=d.strict_mass,
    )
    feasibility = attack_feasibility(d, attacked, eps)
    logger.debug("matched %.6g of mass on %s within 2 eps = %g", matched, d.name, 2 * eps)
    return AttackPair(
        source=d,
        attacked=attacked,
        shift0=min(feasibility.w_inf0, eps),
        shift1=-min(feasibility.w_inf1, eps),
        eps=eps,
        eta_star=eta_field(attacked),
    )


def candidate_attacks(d: GridDistribution, eps: float) -> list[AttackPair]:
    """The unmoved distribution and, for eps > 0, the shift and matching attacks, in that order."""
    candidates = [unmoved_attack(d, eps)]
    if eps > 0:
        candidates.append(shift_attack(d, eps))
        candidates.append(matching_attack(d, eps))
    return candidates


def _pick(values: list[float], tol: float, margin: float) -> int:
    best = 0
    for k in range(1, len(values)):
        if values[k] > values[best] + max(tol, margin):
            best = k
    return best


def best_attack(
    d: GridDistribution,
    loss: Loss,
    eps: float,
    tol: float = DEFAULT_TOL,
    margin: float | None = None,
) -> AttackPair:
    """The candidate with the largest surrogate dual value.

    A later candidate replaces the current one only when it is better by more than `margin`
    (the discretization slack by default), so near-ties keep the simpler attack.
    """
    margin = discretization_slack(d.grid.spacing, d.total) if margin is None else margin
    candidates = candidate_attacks(d, eps)
    values = [dual_surrogate_objective(a.attacked, loss, tol).value for a in candidates]
    best = _pick(values, tol, margin)
    logger.debug("best attack on %s for %s: %s (%.6g)", d.name, loss.name, candidates[best].attacked.name, values[best])
    return candidates[best]


def certify_optimum(
    d: GridDistribution,
    loss: Loss,
    eps: float,
    tol: float = DEFAULT_TOL,
    kappa: float = KAPPA,
) -> tuple[AttackPair, GridFunction, OptimumBracket]:
    """Bracket the optimal adversarial surrogate risk between candidate dual and primal values.

    Returns the kept attack, the witness whose risk gives the upper end and the bracket. A
    bracket wider than the slack means none of the candidates is certified optimal.
    """
    slack = discretization_slack(d.grid.spacing, d.total, kappa)
    candidates = candidate_attacks(d, eps)
    values = [dual_surrogate_objective(a.attacked, loss, tol).value for a in candidates]
    best = _pick(values, tol, slack)
    witnesses = [primal_witness(a, loss, tol) for a in candidates]
    primal = [adv_surrogate_risk(d, loss, f, eps) for f in witnesses]
    chosen = best
    for k, value in enumerate(primal):
        if value < primal[chosen] - slack:
            chosen = k
    lower, upper = max(values), min(primal)
    width = upper - lower
    bracket = OptimumBracket(
        lower=lower,
        upper=upper,
        width=width,
        slack=slack,
        within_slack=width <= slack,
        attack=candidates[best].attacked.name,
        witness=candidates[chosen].attacked.name,
    )
    if bracket.within_slack:
        logger.info("R_phi* on %s for %s lies in [%.6g, %.6g]", d.name, loss.name, lower, upper)
    else:
        logger.warning(
            "R_phi* on %s for %s only bracketed to [%.6g, %.6g], wider than the slack %.3g",
            d.name, loss.name, lower, upper, slack,
        )
    return candidates[best], witnesses[chosen], bracket


def _significant(attacked: GridDistribution) -> np.ndarray:
    return attacked.mass > MASS_FLOOR * attacked.total


def primal_witness(attack: AttackPair, loss: Loss, tol: float = DEFAULT_TOL) -> GridFunction:
    """f*(x) = alpha_phi(eta*(x)), eta* read at mass-bearing nodes and extended to the nearest one."""
    known = _significant(attack.attacked)
    eta = attack.eta_star.values
    uniq, inverse = np.unique(eta[known], return_inverse=True)
    alpha = np.zeros(eta.size)
    alpha[known] = smallest_minimizer_batch(loss, uniq, tol)[inverse]
    values = nearest_fill(alpha, known)
    seq = eta[known]
    if np.all(np.diff(seq) >= 0) and np.any(np.diff(values[known]) < 0):
        logger.warning("witness for %s is not monotone although eta* is", attack.attacked.name)
    return GridFunction(grid=attack.attacked.grid, values=values, name=f"witness[{loss.name}]")


def massart_margin(attack: AttackPair) -> float:
    """min |eta* - 1/2| over mass-bearing nodes."""
    known = _significant(attack.attacked)
    return float(np.min(np.abs(attack.eta_star.values[known] - 0.5)))


def is_realizable(d: GridDistribution, eps: float, atol: float = 1e-12) -> bool:
    return optimal_adv_classification_risk(d, eps) <= atol


def check_complementary_slackness(
    d: GridDistribution,
    loss: Loss,
    f_star: GridFunction,
    attack: AttackPair,
    tol: float = DEFAULT_TOL,
    kappa: float = KAPPA,
) -> SlacknessReport:
    feasibility = attack_feasibility(d, attack.attacked, attack.eps)
    if not feasibility.feasible:
        distance = max(feasibility.w_inf0, feasibility.w_inf1)
        raise InfeasibleAttackError(f"attack moves mass by {distance!r}", distance=distance)
    eps = attack.eps
    attacked = attack.attacked
    function_window(d, f_star, eps)
    phi_pos = loss(f_star.values)
    phi_neg = loss(-f_star.values)
    with np.errstate(invalid="ignore"):
        gaps = []
        for src_mass, dst_mass, field in ((d.mass1, attacked.mass1, phi_pos), (d.mass0, attacked.mass0, phi_neg)):
            worst = on_distribution(d, f_star, sup_ball(f_star.with_values(field), eps).values)
            at_dst = on_distribution(attacked, f_star, field)
            source_side = float(np.sum(np.where(src_mass > 0, src_mass * worst, 0.0)))
            attacked_side = float(np.sum(np.where(dst_mass > 0, dst_mass * at_dst, 0.0)))
            gaps.append(abs(source_side - attacked_side) if math.isfinite(source_side) else math.inf)
    cond1 = gaps[0] + gaps[1]

    known = _significant(attacked)
    eta = attack.eta_star.values[known]
    scores = on_distribution(attacked, f_star, f_star.values)[known]
    excess = conditional_risk(loss, eta, scores) - min_conditional_risk_batch(loss, eta, tol)
    cond2 = float(np.max(excess)) if excess.size else 0.0

    slack = discretization_slack(d.grid.spacing, d.total, kappa)
    passed = cond1 <= tol + slack and cond2 <= tol + slack
    logger.info("complementary slackness on %s: cond1=%.3g cond2=%.3g slack=%.3g", d.name, cond1, cond2, slack)
    return SlacknessReport(cond1_gap=cond1, cond2_maxviol=cond2, slack=slack, tol=tol, passed=passed, kappa=kappa)


# ---------------------------------------------------------------------------
# worked examples
# ---------------------------------------------------------------------------

def _covering_grid(a: float, b: float, spacing: float, pad: float) -> Grid:
    """Nodes at integer multiples of spacing covering [a - pad, b + pad]."""
    unit = Grid(lo=0.0, spacing=spacing, count=1)
    w = unit.steps(pad, what="pad")
    k_lo = math.floor(a / spacing + 1e-9) - w
    k_hi = math.ceil(b / spacing - 1e-9) + w
    return Grid(lo=k_lo * spacing, spacing=spacing, count=k_hi - k_lo + 1)


def _cell_overlap(nodes: np.ndarray, spacing: float, a: float, b: float) -> np.ndarray:
    left = np.maximum(nodes - 0.5 * spacing, a)
    right = np.minimum(nodes + 0.5 * spacing, b)
    return np.maximum(right - left, 0.0)


def _normalized(mass: np.ndarray, total: float) -> np.ndarray:
    return mass * (total / mass.sum())


def _gaussian_cells(nodes: np.ndarray, spacing: float, mu: float, sigma: float, a: float, b: float) -> np.ndarray:
    lo = np.clip(nodes - 0.5 * spacing, a, b)
    hi = np.clip(nodes + 0.5 * spacing, a, b)
    # sf differences keep precision in the right tail
    left_tail = norm.cdf(hi, mu, sigma) - norm.cdf(lo, mu, sigma)
    right_tail = norm.sf(lo, mu, sigma) - norm.sf(hi, mu, sigma)
    return np.maximum(np.where(lo < mu, left_tail, right_tail), 0.0)


def delta_of_z(mu0: float, mu1: float, sigma: float, z) -> float:
    """Half-width of the band around (mu0 + mu1) / 2 on which |eta - 1/2| <= z for two equal Gaussians."""
    za = np.asarray(z, dtype=float)
    if mu1 <= mu0:
        raise DomainError("delta_of_z needs mu1 > mu0")
    if np.any(za < 0) or np.any(za >= 0.5):
        raise DomainError("z must lie in [0, 1/2)")
    out = sigma**2 / (mu1 - mu0) * np.log((0.5 + za) / (0.5 - za))
    return float(out) if np.ndim(out) == 0 else out


def make_example(
    which: ExampleName,
    params: dict,
    spacing: float = 1e-3,
    pad: float = 0.0,
    check_concavity: bool = False,
) -> GridDistribution:
    """Atomize one of the worked examples on a grid padded by `pad` on both sides.

    realizable: delta; massart: delta; gaussian: mu0, mu1, sigma, eps.
    """
    if which in ("realizable", "massart"):
        delta = float(params.get("delta", 0.5))
        if delta <= 0:
            raise DomainError(f"delta must be positive, got {delta!r}")
        grid = _covering_grid(-1.0 - delta, 1.0 + delta, spacing, pad)
        nodes = grid.nodes
        left = _cell_overlap(nodes, spacing, -1.0 - delta, -delta)
        right = _cell_overlap(nodes, spacing, delta, 1.0 + delta)
        if which == "realizable":
            mass0, mass1 = _normalized(left, 0.5), _normalized(right, 0.5)
        else:
            # density 1/2 on both intervals, eta = 1/4 on the left and 3/4 on the right
            mass0 = _normalized(0.75 * left + 0.25 * right, 0.5)
            mass1 = _normalized(0.25 * left + 0.75 * right, 0.5)
        return GridDistribution(grid=grid, mass0=mass0, mass1=mass1, name=f"{which}(delta={delta:g})")

    if which == "gaussian":
        mu0 = float(params.get("mu0", 0.0))
        mu1 = float(params.get("mu1", 1.0))
        sigma = float(params.get("sigma", 1.0))
        eps = float(params.get("eps", pad))
        if sigma <= 0:
            raise DomainError(f"sigma must be positive, got {sigma!r}")
        if not mu0 + 2 * eps < mu1:
            raise PreconditionError(f"gaussian example needs mu0 + 2 eps < mu1, got {mu0} + {2 * eps} >= {mu1}")
        if check_concavity and not mu1 < mu0 + math.sqrt(2.0) * sigma:
            raise PreconditionError(f"concavity bound needs mu1 < mu0 + sqrt(2) sigma, got {mu1} >= {mu0 + math.sqrt(2) * sigma}")
        a, b = mu0 - GAUSSIAN_RADIUS * sigma, mu1 + GAUSSIAN_RADIUS * sigma
        grid = _covering_grid(a, b, spacing, pad)
        nodes = grid.nodes
        mass0 = _normalized(_gaussian_cells(nodes, spacing, mu0, sigma, a, b), 0.5)
        mass1 = _normalized(_gaussian_cells(nodes, spacing, mu1, sigma, a, b), 0.5)
        return GridDistribution(
            grid=grid, mass0=mass0, mass1=mass1, name=f"gaussian(mu0={mu0:g},mu1={mu1:g},sigma={sigma:g})"
        )

    raise DomainError(f"unknown example {which!r}; expected realizable, massart or gaussian")


# ---------------------------------------------------------------------------
# lower-bound construction
# ---------------------------------------------------------------------------

def lower_bound_sequence(
    loss: Loss,
    alpha: float,
    n: int,
    eps: float,
    spacing: float | None = None,
    tol: float = DEFAULT_TOL,
) -> LowerBoundReport:
    """Excess risks of f_n = 1/n (with -1/n at the origin) on a single atom with eta = 1/2 + alpha."""
    if not 0 <= alpha <= 0.5:
        raise DomainError(f"alpha must lie in [0, 1/2], got {alpha!r}")
    if eps <= 0:
        raise DomainError("the construction needs eps > 0")
    if n < 1:
        raise DomainError("n must be a positive integer")
    c_half = min_conditional_risk(loss, 0.5, tol)
    if c_half < loss.value_at_zero - tol:
        raise PreconditionError(
            f"{loss.name} has C*(1/2)={c_half:.6g} < phi(0)={loss.value_at_zero:.6g}; "
            "the construction targets losses with C*(1/2) = phi(0)"
        )
    spacing = eps if spacing is None else spacing
    unit = Grid(lo=0.0, spacing=spacing, count=1)
    w = unit.steps(eps)
    grid = Grid(lo=-w * spacing, spacing=spacing, count=2 * w + 1)
    mass1 = np.zeros(grid.count)
    mass0 = np.zeros(grid.count)
    mass1[w] = 0.5 + alpha
    mass0[w] = 0.5 - alpha
    d = GridDistribution(grid=grid, mass0=mass0, mass1=mass1, name=f"atom(eta={0.5 + alpha:g})")
    values = np.full(grid.count, 1.0 / n)
    values[w] = -1.0 / n
    f_n = GridFunction(grid=grid, values=values, name=f"f_{n}")

    class_excess = adv_classification_risk(d, f_n, eps) - optimal_adv_classification_risk(d, eps)
    c_eta = min_conditional_risk(loss, 0.5 + alpha, tol)
    surr_excess = adv_surrogate_risk(d, loss, f_n, eps) - c_eta
    margin = loss.value_at_zero - min_conditional_risk(loss, 0.5 - alpha, tol)
    return LowerBoundReport(
        loss=loss.name,
        alpha=alpha,
        n=n,
        eps=eps,
        class_excess=class_excess,
        surr_excess=surr_excess,
        ratio=class_excess / surr_excess if surr_excess > 0 else math.inf,
        proof_constant=1.0 / margin if margin > 0 else math.inf,
        conjectured_constant=(0.5 + alpha) / margin if margin > 0 else math.inf,
    )
