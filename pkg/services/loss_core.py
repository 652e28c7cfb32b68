"""Loss functions and the conditional-risk calculus built on them.

All searches run on the truncated score interval [-SCORE_LIMIT, SCORE_LIMIT]: a coarse
scan locates the bracketing cell, golden-section refines it, and the result is compared
against the two limit values of the loss. Batch entry points take arrays of eta and are
what the rest of the package calls; the scalar helpers wrap them.
"""
from __future__ import annotations

import logging
import math
from functools import lru_cache, partial

import numpy as np
from scipy.special import expit

from models.curve import MonotoneCurve
from models.loss import ConditionalRiskReport, ConsistencyReport, Loss
from utils.errors import DomainError, PreconditionError
from utils.settings import DEFAULT_TOL, PSI_KNOTS, SCAN_POINTS, SCORE_LIMIT

logger = logging.getLogger(__name__)

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
CHUNK_CELLS = 1 << 20


# ---------------------------------------------------------------------------
# built-in losses
# ---------------------------------------------------------------------------

def _hinge(a: np.ndarray, scale: float = 1.0) -> np.ndarray:
    return scale * np.maximum(1.0 - a, 0.0)


def _exponential(a: np.ndarray) -> np.ndarray:
    return np.exp(-a)


def _logistic(a: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, -a)


def _rho_margin(a: np.ndarray, rho: float) -> np.ndarray:
    return np.clip(1.0 - a / rho, 0.0, 1.0)


def _shifted_sigmoid(a: np.ndarray, tau: float) -> np.ndarray:
    return expit(tau - a)


def _table(a: np.ndarray, alphas: np.ndarray, values: np.ndarray, left_slope: float) -> np.ndarray:
    out = np.interp(a, alphas, values)
    if left_slope:
        out = np.where(a < alphas[0], values[0] + left_slope * (alphas[0] - a), out)
    return out


def hinge() -> Loss:
    return Loss(name="hinge", value_at_zero=1.0, limit_neg=math.inf, fn=_hinge)


def half_hinge() -> Loss:
    return Loss(name="half_hinge", value_at_zero=0.5, limit_neg=math.inf, fn=partial(_hinge, scale=0.5))


def exponential() -> Loss:
    return Loss(name="exponential", value_at_zero=1.0, limit_neg=math.inf, fn=_exponential)


def logistic() -> Loss:
    return Loss(name="logistic", value_at_zero=math.log(2.0), limit_neg=math.inf, fn=_logistic)


def rho_margin(rho: float = 1.0) -> Loss:
    if rho <= 0:
        raise DomainError(f"rho must be positive, got {rho!r}")
    return Loss(name=f"rho_margin(rho={rho:g})", value_at_zero=1.0, limit_neg=1.0, fn=partial(_rho_margin, rho=rho))


def shifted_sigmoid(tau: float = 0.0) -> Loss:
    return Loss(
        name=f"shifted_sigmoid(tau={tau:g})",
        value_at_zero=float(expit(tau)),
        limit_neg=1.0,
        fn=partial(_shifted_sigmoid, tau=tau),
    )


def loss_from_table(alphas, values, name: str = "table", limit_neg: float | None = None) -> Loss:
    """Promote a sampled loss to a Loss.

    Beyond the last sample the loss is the last value, which must be 0. Left of the first
    sample it is the first value when `limit_neg` is finite (and must equal it), otherwise
    it continues with the slope of the first segment.
    """
    a = np.asarray(alphas, dtype=float)
    v = np.asarray(values, dtype=float)
    order = np.argsort(a)
    a, v = a[order], v[order]
    if a.size < 2 or np.any(np.diff(a) <= 0):
        raise PreconditionError("loss table needs at least two distinct alpha values")
    if np.any(np.diff(v) > 0):
        raise PreconditionError("loss table is not non-increasing")
    if a[0] > 0 or a[-1] < 0:
        raise PreconditionError("loss table must bracket alpha = 0")
    if abs(v[-1]) > 1e-12:
        raise PreconditionError(f"loss table must reach 0 at its right end, got {v[-1]!r}")
    left_slope = 0.0
    if limit_neg is None or math.isinf(limit_neg):
        limit_neg = math.inf
        left_slope = (v[0] - v[1]) / (a[1] - a[0])
        if left_slope <= 0:
            raise PreconditionError("an unbounded table loss needs a strictly decreasing first segment")
    elif not math.isclose(limit_neg, v[0], rel_tol=1e-12, abs_tol=1e-12):
        raise PreconditionError(f"declared limit at -inf {limit_neg!r} differs from the first table value {v[0]!r}")
    a.setflags(write=False)
    v.setflags(write=False)
    fn = partial(_table, alphas=a, values=v, left_slope=left_slope)
    return Loss(name=name, value_at_zero=float(np.interp(0.0, a, v)), limit_neg=limit_neg, fn=fn)


BUILTIN_LOSSES = {
    "hinge": hinge,
    "half_hinge": half_hinge,
    "exponential": exponential,
    "logistic": logistic,
    "rho_margin": rho_margin,
    "shifted_sigmoid": shifted_sigmoid,
}


def parse_loss_spec(spec: str) -> Loss:
    """`hinge`, `rho_margin:rho=1`, `shifted_sigmoid:tau=0.5` or `table:path.csv`."""
    name, _, rest = spec.strip().partition(":")
    if name == "table":
        from utils.csv_io import read_loss_table

        return read_loss_table(rest)
    if name not in BUILTIN_LOSSES:
        raise DomainError(f"unknown loss {name!r}; expected one of {sorted(BUILTIN_LOSSES)} or table:<path>")
    kwargs = {}
    for item in filter(None, rest.split(",")):
        key, _, value = item.partition("=")
        try:
            kwargs[key.strip()] = float(value)
        except ValueError:
            raise DomainError(f"loss parameter {item!r} is not key=number") from None
    try:
        return BUILTIN_LOSSES[name](**kwargs)
    except TypeError as exc:
        raise DomainError(f"bad parameters for {name}: {exc}") from None


def check_assumptions(loss: Loss, samples: int = 2000, seed: int = 0) -> None:
    """Sampled check that the loss is non-increasing and continuous with the declared limits."""
    rng = np.random.default_rng(seed)
    a = np.sort(rng.uniform(-SCORE_LIMIT, SCORE_LIMIT, samples))
    v = loss(a)
    if np.any(np.diff(v) > 1e-12):
        raise PreconditionError(f"{loss.name} is not non-increasing on sampled scores")
    if np.any(v < 0):
        raise PreconditionError(f"{loss.name} takes negative values")
    scale = np.maximum(1.0, v)
    jumps = [np.max(np.abs(loss(a + d) - v) / scale) for d in (1e-3, 1e-5, 1e-7)]
    if not (jumps[-1] <= jumps[0] and jumps[-1] < 1e-4):
        raise PreconditionError(f"{loss.name} fails the finite-difference continuity check")
    if loss(SCORE_LIMIT) > 1e-6 * max(1.0, loss.value_at_zero):
        logger.warning("%s is still %.3g at the score limit", loss.name, loss(SCORE_LIMIT))


# ---------------------------------------------------------------------------
# conditional risk
# ---------------------------------------------------------------------------

def _weighted(weight, value):
    # 0 * inf = 0 in mass-weighted sums
    with np.errstate(invalid="ignore"):
        return np.where(weight == 0, 0.0, weight * value)


def _check_eta(eta) -> np.ndarray:
    e = np.asarray(eta, dtype=float)
    if np.any(~(e >= 0) | ~(e <= 1)):
        raise DomainError("eta must lie in [0, 1]")
    return e


def conditional_risk(loss: Loss, eta, alpha):
    """eta * phi(alpha) + (1 - eta) * phi(-alpha), elementwise, with 0 * inf = 0."""
    e = _check_eta(eta)
    a = np.asarray(alpha, dtype=float)
    out = _weighted(e, loss(a)) + _weighted(1.0 - e, loss(-a))
    return float(out) if np.ndim(out) == 0 else out


@lru_cache(maxsize=32)
def _scan_grid(limit: float, points: int) -> np.ndarray:
    alphas = np.linspace(-limit, limit, points)
    if points % 2:
        alphas[points // 2] = 0.0
    alphas.setflags(write=False)
    return alphas


def _golden(loss: Loss, eta: np.ndarray, a: np.ndarray, b: np.ndarray, tol: float):
    """Vectorized golden-section search of C(eta, .) on the cells [a, b]."""
    a, b = a.copy(), b.copy()
    while np.max(b - a) > tol:
        c = b - INVPHI * (b - a)
        d = a + INVPHI * (b - a)
        left = conditional_risk(loss, eta, c) <= conditional_risk(loss, eta, d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    x = 0.5 * (a + b)
    return conditional_risk(loss, eta, x), x


class _Search:
    """Coarse scan plus golden refinement for a batch of eta, optionally restricted per row."""

    def __init__(self, loss: Loss, eta: np.ndarray, tol: float, lo=None, hi=None):
        self.loss, self.eta, self.tol = loss, eta, tol
        self.alphas = _scan_grid(SCORE_LIMIT, SCAN_POINTS)
        n = eta.size
        self.lo = np.full(n, -SCORE_LIMIT) if lo is None else lo
        self.hi = np.full(n, SCORE_LIMIT) if hi is None else hi
        self.coarse = _weighted(eta[:, None], loss(self.alphas)[None, :]) + _weighted(
            1.0 - eta[:, None], loss(-self.alphas)[None, :]
        )
        outside = (self.alphas[None, :] < self.lo[:, None]) | (self.alphas[None, :] > self.hi[:, None])
        self.coarse[outside] = np.inf
        k = np.argmin(self.coarse, axis=1)
        rows = np.arange(n)
        step = self.alphas[1] - self.alphas[0]
        a = np.maximum(self.alphas[k] - step, self.lo)
        b = np.minimum(self.alphas[k] + step, self.hi)
        val, arg = _golden(loss, eta, a, b, tol)
        node_val = self.coarse[rows, k]
        better = node_val <= val
        self.finite_min = np.where(better, node_val, val)
        self.finite_arg = np.where(better, self.alphas[k], arg)

    def limit(self, sign: float) -> np.ndarray:
        return conditional_risk(self.loss, self.eta, np.full(self.eta.shape, sign * math.inf))


def _chunks(n: int):
    size = max(1, CHUNK_CELLS // SCAN_POINTS)
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def min_conditional_risk_batch(loss: Loss, eta, tol: float = DEFAULT_TOL) -> np.ndarray:
    e = np.atleast_1d(_check_eta(eta))
    out = np.empty(e.size)
    for sl in _chunks(e.size):
        s = _Search(loss, e[sl], tol)
        out[sl] = np.minimum(s.finite_min, np.minimum(s.limit(-1.0), s.limit(1.0)))
    return out


def min_conditional_risk(loss: Loss, eta: float, tol: float = DEFAULT_TOL) -> float:
    return float(min_conditional_risk_batch(loss, [eta], tol)[0])


def min_misclassify_risk_batch(loss: Loss, eta, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Infimum of C(eta, alpha) over scores with (2 eta - 1) alpha <= 0."""
    e = np.atleast_1d(_check_eta(eta))
    out = np.empty(e.size)
    for sl in _chunks(e.size):
        ee = e[sl]
        lo = np.where(ee < 0.5, 0.0, -SCORE_LIMIT)
        hi = np.where(ee > 0.5, 0.0, SCORE_LIMIT)
        s = _Search(loss, ee, tol, lo=lo, hi=hi)
        best = s.finite_min
        best = np.where(ee >= 0.5, np.minimum(best, s.limit(-1.0)), best)
        best = np.where(ee <= 0.5, np.minimum(best, s.limit(1.0)), best)
        out[sl] = best
    return out


def min_misclassify_risk(loss: Loss, eta: float, tol: float = DEFAULT_TOL) -> float:
    return float(min_misclassify_risk_batch(loss, [eta], tol)[0])


def _left_boundary(loss: Loss, eta, level, lo, hi, tol):
    """Bisection for the left end of {C <= level}; the predicate fails at lo and holds at hi."""
    lo, hi = lo.copy(), hi.copy()
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        inside = conditional_risk(loss, eta, mid) <= level
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    return hi


def smallest_minimizer_batch(loss: Loss, eta, tol: float = DEFAULT_TOL) -> np.ndarray:
    e = np.atleast_1d(_check_eta(eta))
    out = np.empty(e.size)
    for sl in _chunks(e.size):
        ee = e[sl]
        s = _Search(loss, ee, tol)
        lim_lo, lim_hi = s.limit(-1.0), s.limit(1.0)
        cstar = np.minimum(s.finite_min, np.minimum(lim_lo, lim_hi))
        level = cstar + tol
        alphas = s.alphas

        mask = s.coarse <= level[:, None]
        has = mask.any(axis=1)
        j = np.argmax(mask, axis=1)
        node_first = has & (alphas[j] < s.finite_arg)
        # bracket [a, b]: predicate fails at a, holds at b
        jb = np.where(node_first, j, np.searchsorted(alphas, s.finite_arg, side="left"))
        b = np.where(node_first, alphas[j], s.finite_arg)
        a = alphas[np.maximum(jb - 1, 0)]
        at_edge = jb == 0
        res = np.where(at_edge, alphas[0], _left_boundary(loss, ee, level, np.where(at_edge, b, a), b, tol))

        res = np.where(lim_hi < s.finite_min, math.inf, res)
        res = np.where(lim_lo <= level, -math.inf, res)
        out[sl] = res
    return out


def smallest_minimizer(loss: Loss, eta: float, tol: float = DEFAULT_TOL) -> float:
    return float(smallest_minimizer_batch(loss, [eta], tol)[0])


def conditional_risk_report(loss: Loss, eta: float, tol: float = DEFAULT_TOL) -> ConditionalRiskReport:
    return ConditionalRiskReport(
        loss=loss.name,
        eta=eta,
        c_star=min_conditional_risk(loss, eta, tol),
        c_minus=min_misclassify_risk(loss, eta, tol),
        alpha_min=smallest_minimizer(loss, eta, tol),
        tol=tol,
    )


# ---------------------------------------------------------------------------
# Psi and consistency
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def psi_curve(loss: Loss, knots: int = PSI_KNOTS, tol: float = DEFAULT_TOL) -> MonotoneCurve:
    """Psi(theta) = phi(0) - C*((1 + theta) / 2) tabulated on [0, 1]."""
    theta = np.linspace(0.0, 1.0, knots)
    ys = loss.value_at_zero - min_conditional_risk_batch(loss, 0.5 * (1.0 + theta), tol)
    # search noise below tol can break monotonicity
    ys = np.maximum.accumulate(np.maximum(ys, 0.0))
    return MonotoneCurve(xs=theta, ys=ys, name=f"psi[{loss.name}]")


def psi(loss: Loss, theta, tol: float = DEFAULT_TOL):
    t = np.asarray(theta, dtype=float)
    if np.any(~(t >= 0) | ~(t <= 1)):
        raise DomainError("theta must lie in [0, 1]")
    return psi_curve(loss, tol=tol)(theta)


def psi_inverse(loss: Loss, y, tol: float = DEFAULT_TOL):
    return psi_curve(loss, tol=tol).inverse(y)


def check_consistency(loss: Loss, tol: float = DEFAULT_TOL, samples: int = 201) -> ConsistencyReport:
    """Grid-certified consistency flags; the flags hold at the sampled resolution only."""
    eta = np.linspace(0.0, 1.0, samples)
    margin = loss.value_at_zero - min_conditional_risk_batch(loss, eta, tol)
    half = np.isclose(eta, 0.5)
    at_half = float(margin[half][0]) if half.any() else float(
        loss.value_at_zero - min_conditional_risk(loss, 0.5, tol)
    )
    upper = eta >= 0.5
    ys = np.maximum.accumulate(np.maximum(margin[upper], 0.0))
    report = ConsistencyReport(
        loss=loss.name,
        consistent=bool(np.all(margin[~half] > tol)),
        adversarially_consistent=at_half > tol,
        margin_at_half=at_half,
        margin_curve=MonotoneCurve(xs=eta[upper], ys=ys, name=f"margin[{loss.name}]"),
        samples=samples,
        tol=tol,
    )
    logger.info(
        "consistency of %s: consistent=%s adversarial=%s",
        loss.name,
        report.consistent,
        report.adversarially_consistent,
    )
    return report
