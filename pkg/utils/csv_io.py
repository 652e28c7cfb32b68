from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from pydantic import BaseModel, ValidationError

from utils.errors import ConfigError, DomainError

logger = logging.getLogger(__name__)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: str | Path, required: Sequence[str]) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "file not found")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise ConfigError(str(path), f"missing column(s) {missing} in header", line=1)
        columns: dict[str, list[float]] = {c: [] for c in required}
        for lineno, row in enumerate(reader, start=2):
            for c in required:
                try:
                    columns[c].append(float(row[c]))
                except (TypeError, ValueError):
                    raise ConfigError(c, f"not a number: {row[c]!r} in {path}", line=lineno) from None
    return {c: np.asarray(v) for c, v in columns.items()}


def write_json(path: str | Path, payload: BaseModel | dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, BaseModel):
        text = payload.model_dump_json(indent=2)
    else:
        text = json.dumps(payload, indent=2, default=str)
    path.write_text(text + "\n")
    return path


def write_distribution(path: str | Path, d) -> Path:
    return write_csv(path, ("x", "p0", "p1"), zip(d.grid.nodes, d.mass0, d.mass1))


def write_function(path: str | Path, f) -> Path:
    return write_csv(path, ("x", "value"), zip(f.grid.nodes, f.values))


def write_curve(path: str | Path, curve) -> Path:
    return write_csv(path, ("x", "y"), curve.rows())


def _uniform_grid(path, x: np.ndarray):
    from models.grid import Grid

    if x.size < 2:
        raise ConfigError(str(path), "a grid table needs at least two nodes")
    steps = np.diff(x)
    spacing = float(steps.mean())
    if spacing <= 0 or np.max(np.abs(steps - spacing)) > 1e-9 * max(1.0, abs(spacing)) + 1e-12:
        raise ConfigError(str(path), "x column is not a uniform ascending grid")
    return Grid(lo=float(x[0]), spacing=spacing, count=int(x.size))


def read_distribution(path: str | Path, name: str | None = None, strict_mass: bool = True):
    from models.grid import GridDistribution

    cols = read_csv(path, ("x", "p0", "p1"))
    grid = _uniform_grid(path, cols["x"])
    try:
        return GridDistribution(
            grid=grid,
            mass0=cols["p0"],
            mass1=cols["p1"],
            name=name or Path(path).stem,
            strict_mass=strict_mass,
        )
    except ValidationError as exc:
        raise ConfigError(str(path), exc.errors()[0]["msg"]) from None


def read_loss_table(spec: str):
    """`path.csv` or `path.csv,limit_neg=1`; columns alpha,value."""
    from services.loss_core import loss_from_table

    path, _, extra = spec.partition(",")
    limit_neg = None
    if extra:
        key, _, value = extra.partition("=")
        if key.strip() != "limit_neg":
            raise DomainError(f"unknown loss table option {key!r}")
        limit_neg = float(value)
    cols = read_csv(path, ("alpha", "value"))
    return loss_from_table(cols["alpha"], cols["value"], name=f"table({Path(path).stem})", limit_neg=limit_neg)


def read_function(path: str | Path, name: str | None = None):
    from models.grid import GridFunction

    cols = read_csv(path, ("x", "value"))
    grid = _uniform_grid(path, cols["x"])
    try:
        return GridFunction(grid=grid, values=cols["value"], name=name or Path(path).stem)
    except ValidationError as exc:
        raise ConfigError(str(path), exc.errors()[0]["msg"]) from None
