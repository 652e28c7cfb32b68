from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

from models.attack import AttackPair
from models.curve import MonotoneCurve
from models.reports import EnvelopeCdf
from services.attack_builder import MASS_FLOOR

logger = logging.getLogger(__name__)

ATOM_FLOOR = 1e-12
# adjacent eta* values further apart than this are a jump, not a smeared crossing
JUMP = 0.05


def step_cdf(values, weights, total: float | None = None, name: str = "h") -> MonotoneCurve:
    """Right-continuous cdf on [0, 1/2] of atoms at `values` with `weights`, normalized by `total`."""
    v = np.asarray(values, dtype=float)
    m = np.asarray(weights, dtype=float)
    total = float(m.sum()) if total is None else total
    order = np.argsort(v, kind="stable")
    v, cum = v[order], np.cumsum(m[order]) / total
    xs = np.unique(np.concatenate([[0.0], v, [0.5]]))
    idx = np.searchsorted(v, xs, side="right")
    ys = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
    ys = np.maximum.accumulate(ys)
    return MonotoneCurve(xs=xs, ys=ys, interpolation="step", name=name)


def estimate_atom_tol(attack: AttackPair) -> float:
    """2 * spacing * |d eta*/dx| at the eta* = 1/2 crossing; the floor when eta* jumps or sits on 1/2."""
    attacked = attack.attacked
    idx = np.flatnonzero(attacked.mass > MASS_FLOOR * attacked.total)
    eta = attack.eta_star.values[idx]
    if idx.size < 2:
        return ATOM_FLOOR
    lhs, rhs = eta[:-1] - 0.5, eta[1:] - 0.5
    on_half = (np.abs(lhs) < ATOM_FLOOR) & (np.abs(rhs) < ATOM_FLOOR)
    crossing = (np.diff(idx) == 1) & (lhs * rhs <= 0) & ~on_half
    steps = np.abs(rhs - lhs)[crossing]
    steps = steps[steps <= JUMP]
    if steps.size == 0:
        return ATOM_FLOOR
    return float(2.0 * steps.min())


def cdf_abs_eta(attack: AttackPair, atom_tol: float | None = None, strict: bool = False) -> EnvelopeCdf:
    """Cdf h of |eta* - 1/2| under the attacked mass and its concave envelope H.

    With `strict` the mass at |eta* - 1/2| <= atom_tol is left out of h (but h stays
    normalized by the full attacked mass).
    """
    attacked = attack.attacked
    known = attacked.mass > MASS_FLOOR * attacked.total
    dist = np.abs(attack.eta_star.values[known] - 0.5)
    mass = attacked.mass[known]
    total = float(mass.sum())
    tol = estimate_atom_tol(attack) if atom_tol is None else atom_tol
    at_half = dist <= tol
    atom = float(mass[at_half].sum())
    if strict:
        dist, mass = dist[~at_half], mass[~at_half]
    h = step_cdf(dist, mass, total=total, name="h_strict" if strict else "h")
    env = EnvelopeCdf(
        h=h,
        H=concave_envelope(h),
        atom_at_half=atom,
        atom_tol=tol,
        strict=strict,
        total_mass=total,
    )
    logger.debug("envelope of %s: %d knots, atom %.3g", attacked.name, h.xs.size, atom)
    return env


def concave_envelope(curve: MonotoneCurve) -> MonotoneCurve:
    """Upper concave hull of the knots, by a monotone-chain scan from left to right."""
    hull_x: list[float] = []
    hull_y: list[float] = []
    for x, y in zip(curve.xs.tolist(), curve.ys.tolist()):
        while len(hull_x) >= 2:
            ox, oy, ax, ay = hull_x[-2], hull_y[-2], hull_x[-1], hull_y[-1]
            # drop the middle point unless the chain turns clockwise there
            if (ax - ox) * (y - oy) - (ay - oy) * (x - ox) >= 0:
                hull_x.pop()
                hull_y.pop()
            else:
                break
        hull_x.append(x)
        hull_y.append(y)
    ys = np.maximum.accumulate(np.asarray(hull_y))
    return MonotoneCurve(xs=hull_x, ys=ys, direction=curve.direction, name=f"conc[{curve.name}]")


def _partition(knots: Sequence[np.ndarray], start: float, end: float, refine: int) -> np.ndarray:
    base = np.unique(np.concatenate([np.asarray(k, dtype=float) for k in knots] + [np.array([start, end])]))
    base = base[(base >= start) & (base <= end)]
    if refine <= 1:
        return base
    t = np.linspace(0.0, 1.0, refine + 1)[:-1]
    fine = (base[:-1, None] + t[None, :] * np.diff(base)[:, None]).ravel()
    return np.concatenate([fine, base[-1:]])


def rs_integral(
    g: MonotoneCurve | Callable[[np.ndarray], np.ndarray],
    h: MonotoneCurve,
    refine: int = 1,
    start: float | None = None,
) -> tuple[float, float]:
    """Lower and upper Darboux-Stieltjes sums of a nonincreasing g against a nondecreasing h.

    The sums run over (start, h.x_max]; the partition holds every knot of g and h, each gap
    split into `refine` pieces.
    """
    lo = h.x_min if start is None else start
    knots = [h.xs] + ([g.xs] if isinstance(g, MonotoneCurve) else [])
    z = _partition(knots, lo, h.x_max, max(1, int(refine)))
    dh = np.diff(h(z))
    with np.errstate(divide="ignore", invalid="ignore"):
        gz = np.asarray(g(z), dtype=float)
        lower = np.where(dh > 0, gz[1:] * dh, 0.0).sum()
        upper = np.where(dh > 0, gz[:-1] * dh, 0.0).sum()
    return float(lower), float(upper)


def inverse_power_integral(
    env: EnvelopeCdf,
    r: float,
    deltas: Sequence[float] = (1e-2, 1e-3, 1e-4, 1e-6, 1e-9),
) -> tuple[float, list[float]]:
    """Integral of H^-r dh over (delta, 1/2] along decreasing delta; returns (last value, trace)."""

    def g(z):
        with np.errstate(divide="ignore"):
            return np.power(env.H(z), -r)

    trace = [rs_integral(g, env.h, refine=1, start=delta)[0] for delta in deltas]
    return trace[-1], trace
