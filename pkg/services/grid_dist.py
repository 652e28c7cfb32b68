from __future__ import annotations

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from models.grid import Grid, GridDistribution, GridFunction
from utils.errors import CoverageError


def _window(values: np.ndarray, w: int, op) -> np.ndarray:
    if w == 0 or values.size == 0:
        return values.copy()
    # mode="nearest" repeats the edge value, which is already inside every clamped window
    return op(values, size=2 * w + 1, mode="nearest")


def sup_ball(f: GridFunction, eps: float) -> GridFunction:
    """Maximum of f over the closed eps-window of every node, windows clamped at the grid ends."""
    w = f.grid.steps(eps)
    return f.with_values(_window(f.values, w, maximum_filter1d), name=f"sup[{f.name}]")


def inf_ball(f: GridFunction, eps: float) -> GridFunction:
    w = f.grid.steps(eps)
    return f.with_values(_window(f.values, w, minimum_filter1d), name=f"inf[{f.name}]")


def threshold_indicators(f: GridFunction) -> tuple[GridFunction, GridFunction]:
    """(1{f <= 0}, 1{f > 0})."""
    nonpos = (f.values <= 0).astype(float)
    return (
        f.with_values(nonpos, name=f"1[{f.name}<=0]"),
        f.with_values(1.0 - nonpos, name=f"1[{f.name}>0]"),
    )


def extend_grid(d: GridDistribution, pad: float) -> GridDistribution:
    w = d.grid.steps(pad, what="pad")
    if w == 0:
        return d
    return GridDistribution(
        grid=d.grid.widened(w),
        mass0=np.pad(d.mass0, w),
        mass1=np.pad(d.mass1, w),
        name=d.name,
        strict_mass=d.strict_mass,
    )


def grid_function(grid: Grid, values, name: str = "f") -> GridFunction:
    return GridFunction(grid=grid, values=np.broadcast_to(np.asarray(values, dtype=float), (grid.count,)), name=name)


def function_window(d: GridDistribution, f: GridFunction, eps: float) -> tuple[int, int]:
    """Offset of d's node 0 inside f's grid, and the window radius.

    Every mass-bearing node of d together with its eps-window has to lie on f's grid.
    """
    w = f.grid.steps(eps)
    offset = d.grid.offset_in(f.grid)
    support = d.support
    first, last = offset + support[0], offset + support[-1]
    if first - w < 0 or last + w > f.grid.count - 1:
        raise CoverageError(
            f"{f.name} is defined on [{f.grid.lo}, {f.grid.hi}] but the support of {d.name} "
            f"padded by eps={eps} needs [{f.grid.lo + (first - w) * f.grid.spacing}, "
            f"{f.grid.lo + (last + w) * f.grid.spacing}]"
        )
    return offset, w


def on_distribution(d: GridDistribution, f: GridFunction, values: np.ndarray) -> np.ndarray:
    """Restrict a vector living on f's grid to the nodes of d (zero where d's grid leaves f's)."""
    offset = d.grid.offset_in(f.grid)
    idx = offset + np.arange(d.grid.count)
    ok = (idx >= 0) & (idx < f.grid.count)
    out = np.zeros(d.grid.count)
    out[ok] = values[idx[ok]]
    return out


def nearest_fill(values: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Replace entries where `known` is False by the value of the nearest known entry (ties go left)."""
    idx = np.flatnonzero(known)
    if idx.size == 0:
        raise CoverageError("no mass-bearing node to extend from")
    pos = np.arange(values.size)
    right = np.clip(np.searchsorted(idx, pos, side="left"), 0, idx.size - 1)
    left = np.clip(right - 1, 0, idx.size - 1)
    use_left = np.abs(pos - idx[left]) <= np.abs(idx[right] - pos)
    return values[np.where(use_left, idx[left], idx[right])]
