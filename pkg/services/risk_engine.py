"""Primal risks, dual objectives, the 1-D W-infinity distance and the small-instance oracles."""
from __future__ import annotations

import logging
import math

import numpy as np
from scipy.ndimage import maximum_filter1d

from models.grid import Grid, GridDistribution, GridFunction
from models.loss import Loss
from models.reports import DualReport, ExcessSplit, Feasibility, MaximizerComparison, RiskDecomposition, RiskReport
from services.grid_dist import function_window, nearest_fill, on_distribution
from services.loss_core import min_conditional_risk_batch
from services.pool import executor
from utils.errors import DomainError, InfeasibleAttackError, SizeLimitError
from utils.settings import BRUTE_FORCE_LIMIT, DEFAULT_TOL, discretization_slack

logger = logging.getLogger(__name__)

MAX_ATOMS = 6
CHUNK = 1 << 15


def _mass_sum(mass: np.ndarray, values: np.ndarray) -> float:
    # 0 * inf = 0
    with np.errstate(invalid="ignore"):
        return float(np.sum(np.where(mass > 0, mass * values, 0.0)))


def _sup(values: np.ndarray, w: int) -> np.ndarray:
    return values if w == 0 else maximum_filter1d(values, size=2 * w + 1, mode="nearest")


def adv_surrogate_risk(d: GridDistribution, loss: Loss, f: GridFunction, eps: float) -> float:
    _, w = function_window(d, f, eps)
    worst1 = on_distribution(d, f, _sup(loss(f.values), w))
    worst0 = on_distribution(d, f, _sup(loss(-f.values), w))
    return _mass_sum(d.mass1, worst1) + _mass_sum(d.mass0, worst0)


def surrogate_risk(d: GridDistribution, loss: Loss, f: GridFunction) -> float:
    return adv_surrogate_risk(d, loss, f, 0.0)


def adv_classification_risk(d: GridDistribution, f: GridFunction, eps: float) -> float:
    _, w = function_window(d, f, eps)
    nonpos = (f.values <= 0).astype(float)
    wrong1 = on_distribution(d, f, _sup(nonpos, w))
    wrong0 = on_distribution(d, f, _sup(1.0 - nonpos, w))
    return _mass_sum(d.mass1, wrong1) + _mass_sum(d.mass0, wrong0)


def classification_risk(d: GridDistribution, f: GridFunction) -> float:
    return adv_classification_risk(d, f, 0.0)


def evaluate_risks(d: GridDistribution, f: GridFunction, eps: float, loss: Loss | None = None) -> list[RiskReport]:
    """Classification (and surrogate, when a loss is given) risks at eps = 0 and at eps."""
    reports = []
    for radius in sorted({0.0, float(eps)}):
        common = dict(eps=radius, adversarial=radius > 0, distribution=d.name, function=f.name, spacing=d.grid.spacing)
        reports.append(RiskReport(value=adv_classification_risk(d, f, radius), kind="classification", **common))
        if loss is not None:
            reports.append(
                RiskReport(value=adv_surrogate_risk(d, loss, f, radius), kind="surrogate", loss=loss.name, **common)
            )
    return reports


# ---------------------------------------------------------------------------
# dual objectives
# ---------------------------------------------------------------------------

def eta_field(attack: GridDistribution) -> GridFunction:
    eta = attack.eta
    known = ~np.isnan(eta)
    return GridFunction(grid=attack.grid, values=nearest_fill(np.where(known, eta, 0.0), known), name="eta_star")


def _c_star_of(loss: Loss, eta: np.ndarray, tol: float) -> np.ndarray:
    uniq, inverse = np.unique(eta, return_inverse=True)
    return min_conditional_risk_batch(loss, uniq, tol)[inverse]


def _dual_value(mass: np.ndarray, mass1: np.ndarray, c_star) -> float:
    live = mass > 0
    if not live.any():
        return 0.0
    eta = mass1[live] / mass[live]
    return float(np.sum(mass[live] * c_star(eta)))


def marginal_atoms(d: GridDistribution, cls: int) -> tuple[np.ndarray, np.ndarray]:
    m = d.mass1 if cls else d.mass0
    live = m > 0
    return d.grid.nodes[live], m[live]


def attack_feasibility(source: GridDistribution, attack: GridDistribution, eps: float, tol: float = 1e-9) -> Feasibility:
    scale = max(source.total, 1.0)
    return Feasibility(
        w_inf0=w_infinity_1d(marginal_atoms(source, 0), marginal_atoms(attack, 0), tol * scale),
        w_inf1=w_infinity_1d(marginal_atoms(source, 1), marginal_atoms(attack, 1), tol * scale),
        eps=eps,
        spacing=source.grid.spacing,
    )


def dual_surrogate_objective(
    attack: GridDistribution,
    loss: Loss,
    tol: float = DEFAULT_TOL,
    source: GridDistribution | None = None,
    eps: float | None = None,
) -> DualReport:
    """Sum over nodes of (attacked mass) * C*(eta'); massless nodes contribute nothing."""
    value = _dual_value(attack.mass, attack.mass1, lambda e: _c_star_of(loss, e, tol))
    feasibility = attack_feasibility(source, attack, eps) if source is not None and eps is not None else None
    return DualReport(
        value=max(value, 0.0),
        kind="surrogate",
        loss=loss.name,
        feasibility=feasibility,
        eta_star=eta_field(attack),
        spacing=attack.grid.spacing,
    )


def dual_classification_objective(
    attack: GridDistribution,
    source: GridDistribution | None = None,
    eps: float | None = None,
) -> DualReport:
    value = float(np.sum(np.minimum(attack.mass0, attack.mass1)))
    feasibility = attack_feasibility(source, attack, eps) if source is not None and eps is not None else None
    return DualReport(
        value=value,
        kind="classification",
        feasibility=feasibility,
        eta_star=eta_field(attack),
        spacing=attack.grid.spacing,
    )


def w_infinity_1d(q: tuple, q_prime: tuple, tol: float = 1e-9) -> float:
    """Largest displacement of the monotone (quantile) coupling between two weighted atom lists."""
    x, a = (np.asarray(v, dtype=float) for v in q)
    y, b = (np.asarray(v, dtype=float) for v in q_prime)
    x, a = x[a > 0], a[a > 0]
    y, b = y[b > 0], b[b > 0]
    ta, tb = float(a.sum()), float(b.sum())
    if abs(ta - tb) > tol:
        raise InfeasibleAttackError(f"marginal masses differ: {ta!r} vs {tb!r}")
    if ta == 0:
        return 0.0
    ox, oy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    x, a, y, b = x[ox], a[ox], y[oy], b[oy]
    ca, cb = np.cumsum(a) / ta, np.cumsum(b) / tb
    ca[-1] = cb[-1] = 1.0
    breaks = np.unique(np.concatenate([ca, cb]))
    lows = np.concatenate([[0.0], breaks[:-1]])
    keep = breaks - lows > 1e-12
    mid = 0.5 * (lows[keep] + breaks[keep])
    ia = np.minimum(np.searchsorted(ca, mid, side="left"), x.size - 1)
    ib = np.minimum(np.searchsorted(cb, mid, side="left"), y.size - 1)
    return float(np.max(np.abs(x[ia] - y[ib])))


def duality_gap(
    d: GridDistribution,
    loss: Loss,
    f: GridFunction,
    attack: GridDistribution,
    eps: float,
    tol: float = DEFAULT_TOL,
) -> float:
    """R_phi^eps(f) minus the surrogate dual value of a feasible attack; >= 0 up to slack."""
    feasibility = attack_feasibility(d, attack, eps)
    if not feasibility.feasible:
        distance = max(feasibility.w_inf0, feasibility.w_inf1)
        raise InfeasibleAttackError(
            f"attack moves mass by {distance!r}, more than eps={eps!r} plus one grid cell", distance=distance
        )
    gap = adv_surrogate_risk(d, loss, f, eps) - dual_surrogate_objective(attack, loss, tol).value
    logger.debug("duality gap for %s against %s: %.3g", f.name, attack.name, gap)
    return gap


# ---------------------------------------------------------------------------
# excess risk decomposition
# ---------------------------------------------------------------------------

def _excess_split(
    kind: str,
    d: GridDistribution,
    attack: GridDistribution,
    f: GridFunction,
    w: int,
    fields: tuple[np.ndarray, np.ndarray],
    c_star: np.ndarray,
) -> ExcessSplit:
    pos, neg = fields
    eta = np.nan_to_num(attack.eta, nan=0.5)
    pos_at, neg_at = on_distribution(attack, f, pos), on_distribution(attack, f, neg)
    cond_excess = eta * pos_at + (1.0 - eta) * neg_at - c_star
    worst1 = _mass_sum(d.mass1, on_distribution(d, f, _sup(pos, w)))
    worst0 = _mass_sum(d.mass0, on_distribution(d, f, _sup(neg, w)))
    attack1 = worst1 - _mass_sum(attack.mass1, pos_at)
    attack0 = worst0 - _mass_sum(attack.mass0, neg_at)
    conditional1 = _mass_sum(attack.mass1, cond_excess)
    conditional0 = _mass_sum(attack.mass0, cond_excess)
    excess = worst0 + worst1 - _mass_sum(attack.mass, c_star)
    i0, i1 = attack0 + conditional0, attack1 + conditional1
    return ExcessSplit(
        kind=kind,
        attack0=attack0,
        attack1=attack1,
        conditional0=conditional0,
        conditional1=conditional1,
        i0=i0,
        i1=i1,
        excess=excess,
        residual=i0 + i1 - excess,
    )


def risk_decomposition(
    d: GridDistribution,
    loss: Loss,
    f: GridFunction,
    attack: GridDistribution,
    eps: float,
    tol: float = DEFAULT_TOL,
    kappa: float | None = None,
) -> RiskDecomposition:
    """Split R^eps(f) - R-bar(attack) and R_phi^eps(f) - R-bar_phi(attack) into per-class terms.

    For class k the attack term is the worst case of f's loss over the eps-ball around the
    source mass minus its value at the attacked mass; the conditional term is the excess
    conditional risk of f under the attack's eta*, weighted by the attacked class-k mass.
    i_k is their sum and i_0 + i_1 equals the excess. Against an optimal attack the excess is
    the excess risk and every term is nonnegative up to the slack.
    """
    feasibility = attack_feasibility(d, attack, eps)
    if not feasibility.feasible:
        distance = max(feasibility.w_inf0, feasibility.w_inf1)
        raise InfeasibleAttackError(f"attack moves mass by {distance!r}, more than eps={eps!r}", distance=distance)
    if not np.all(np.isfinite(f.values)):
        raise DomainError(f"{f.name} takes infinite values; the decomposition needs a finite classifier")
    _, w = function_window(d, f, eps)
    function_window(attack, f, 0.0)

    live = attack.mass > 0
    eta = np.nan_to_num(attack.eta, nan=0.5)
    c_class = np.where(live, np.minimum(eta, 1.0 - eta), 0.0)
    c_surr = np.zeros(attack.grid.count)
    if live.any():
        c_surr[live] = _c_star_of(loss, eta[live], tol)
    wrong1 = (f.values <= 0).astype(float)
    classification = _excess_split("classification", d, attack, f, w, (wrong1, 1.0 - wrong1), c_class)
    surrogate = _excess_split("surrogate", d, attack, f, w, (loss(f.values), loss(-f.values)), c_surr)

    slack = discretization_slack(d.grid.spacing, d.total, kappa)
    terms = [
        getattr(split, name)
        for split in (classification, surrogate)
        for name in ("attack0", "attack1", "conditional0", "conditional1")
    ]
    report = RiskDecomposition(
        classification=classification,
        surrogate=surrogate,
        loss=loss.name,
        eps=eps,
        distribution=d.name,
        attack=attack.name,
        function=f.name,
        slack=slack,
        nonnegative=min(terms) >= -slack,
    )
    for split in (classification, surrogate):
        if abs(split.residual) > 1e-9 * max(1.0, abs(split.excess)):
            logger.warning("%s terms miss the excess by %.3g", split.kind, split.residual)
    logger.debug("decomposition of %s against %s: %s", f.name, attack.name, terms)
    return report


# ---------------------------------------------------------------------------
# exact adversarial Bayes risk on a grid
# ---------------------------------------------------------------------------

def optimal_adv_classification_risk(d: GridDistribution, eps: float) -> float:
    """Minimum of R^eps over all labelings of d's grid.

    Dynamic programming over (label of the current node, length of the current run of
    that label capped at 2w+1). Node i is settled once its whole window has been labelled:
    a class-1 atom is correct iff every node of its window is labelled 1, a class-0 atom
    iff every node is labelled 0.
    """
    w = d.grid.steps(eps)
    n = d.grid.count
    cap = 2 * w + 1
    m0, m1 = d.mass0, d.mass1
    runs = np.arange(cap + 1)
    value = np.full((2, cap + 1), math.inf)
    value[:, 1] = 0.0

    def settle(i: int, last: int) -> None:
        if m0[i] == 0 and m1[i] == 0:
            return
        need = last - max(0, i - w) + 1
        uniform = runs >= need
        base = m0[i] + m1[i]
        value[0] += base - m0[i] * uniform
        value[1] += base - m1[i] * uniform

    for k in range(n):
        if k > 0:
            nxt = np.full_like(value, math.inf)
            for label in (0, 1):
                nxt[label, 2:] = value[label, 1:cap]
                nxt[label, cap] = min(nxt[label, cap], value[label, cap])
                nxt[label, 1] = min(nxt[label, 1], value[1 - label].min())
            value = nxt
        if k - w >= 0:
            settle(k - w, k)
    for i in range(max(0, n - w), n):
        settle(i, n - 1)
    return float(max(value.min(), 0.0))


# ---------------------------------------------------------------------------
# brute-force dual oracle
# ---------------------------------------------------------------------------

class _Enumeration:
    """Every way of moving each (node, class) atom of d to a lattice node within eps."""

    def __init__(self, d: GridDistribution, eps: float, lattice: Grid):
        nodes = d.grid.nodes
        atoms = [(nodes[i], 0, d.mass0[i]) for i in np.flatnonzero(d.mass0 > 0)]
        atoms += [(nodes[i], 1, d.mass1[i]) for i in np.flatnonzero(d.mass1 > 0)]
        if len(atoms) > MAX_ATOMS:
            raise SizeLimitError(f"brute force handles at most {MAX_ATOMS} atoms, got {len(atoms)}")
        reach = eps + 1e-9 * lattice.spacing
        spots = lattice.nodes
        self.lattice = lattice
        self.atoms = atoms
        self.choices = [np.flatnonzero(np.abs(spots - x) <= reach) for x, _, _ in atoms]
        for (x, _, _), c in zip(atoms, self.choices):
            if c.size == 0:
                raise InfeasibleAttackError(f"no lattice node within eps of the atom at {x!r}")
        radix = np.array([c.size for c in self.choices], dtype=np.int64)
        self.total = int(np.prod(radix))
        if self.total > BRUTE_FORCE_LIMIT:
            raise SizeLimitError(f"{self.total} candidate attacks exceed the limit of {BRUTE_FORCE_LIMIT}")
        self.strides = np.concatenate([[1], np.cumprod(radix)[:-1]])
        self.radix = radix

    def masses(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        k = np.arange(start, stop, dtype=np.int64)
        rows = np.arange(k.size)
        m = (np.zeros((k.size, self.lattice.count)), np.zeros((k.size, self.lattice.count)))
        for (_, cls, mass), choice, stride, radix in zip(self.atoms, self.choices, self.strides, self.radix):
            spot = choice[(k // stride) % radix]
            m[cls][rows, spot] += mass
        return m

    def attack(self, index: int, name: str) -> GridDistribution:
        m0, m1 = self.masses(index, index + 1)
        return GridDistribution(grid=self.lattice, mass0=m0[0], mass1=m1[0], name=name, strict_mass=False)

    def ranges(self):
        return [(s, min(self.total, s + CHUNK)) for s in range(0, self.total, CHUNK)]


def _objectives(enum: _Enumeration, loss: Loss | None, tol: float, bounds: tuple[int, int]):
    m0, m1 = enum.masses(*bounds)
    classification = np.minimum(m0, m1).sum(axis=1)
    if loss is None:
        return None, classification
    mass = m0 + m1
    live = mass > 0
    eta = np.zeros_like(mass)
    eta[live] = m1[live] / mass[live]
    c = np.zeros_like(mass)
    c[live] = _c_star_of(loss, eta[live], tol)
    return (mass * c).sum(axis=1), classification


def _all_objectives(enum: _Enumeration, loss: Loss | None, tol: float):
    parts = list(executor.map(lambda b: _objectives(enum, loss, tol, b), enum.ranges()))
    surrogate = None if loss is None else np.concatenate([p[0] for p in parts])
    classification = np.concatenate([p[1] for p in parts])
    return surrogate, classification


def brute_force_dual(
    d: GridDistribution,
    loss: Loss | None,
    eps: float,
    lattice: Grid,
    tol: float = DEFAULT_TOL,
) -> DualReport:
    """Exhaustive maximization of the dual objective over per-atom lattice moves.

    With `loss=None` the classification objective min(P0', P1') is maximized.
    """
    enum = _Enumeration(d, eps, lattice)
    surrogate, classification = _all_objectives(enum, loss, tol)
    scores = classification if loss is None else surrogate
    best = int(np.argmax(scores))
    attack = enum.attack(best, name=f"brute_force[{d.name}]")
    logger.info("brute force over %d attacks on %s: best value %.6g", enum.total, d.name, scores[best])
    return DualReport(
        value=float(max(scores[best], 0.0)),
        kind="classification" if loss is None else "surrogate",
        loss=None if loss is None else loss.name,
        feasibility=attack_feasibility(d, attack, eps),
        eta_star=eta_field(attack),
        attack=attack,
        combinations=enum.total,
        spacing=lattice.spacing,
    )


def compare_dual_maximizers(
    d: GridDistribution,
    loss: Loss,
    eps: float,
    lattice: Grid,
    tol: float = 1e-9,
) -> MaximizerComparison:
    """How far the surrogate-dual maximizers fall short of the classification-dual maximum."""
    enum = _Enumeration(d, eps, lattice)
    surrogate, classification = _all_objectives(enum, loss, DEFAULT_TOL)
    s_max, c_max = float(surrogate.max()), float(classification.max())
    winners = surrogate >= s_max - tol
    return MaximizerComparison(
        surrogate_max=s_max,
        classification_max=c_max,
        maximizers=int(winners.sum()),
        worst_deficit=float(c_max - classification[winners].min()),
    )
