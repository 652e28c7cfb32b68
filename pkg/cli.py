from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from models.grid import Grid
from services.campaign import load_config, run_verify, write_report
from services.loss_core import parse_loss_spec
from services.reproduce import loss_curves, lowerbound_series, run_example
from services.risk_engine import (
    brute_force_dual,
    dual_classification_objective,
    dual_surrogate_objective,
    evaluate_risks,
)
from utils.csv_io import read_distribution, read_function, write_json
from utils.errors import RiskBoundError
from utils.settings import KAPPA, PORT

logger = logging.getLogger(__name__)

EXIT_VIOLATION = 1
EXIT_ERROR = 2


def _handled(command):
    """Report toolkit errors on stderr with exit status 2."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except RiskBoundError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_ERROR)

    return wrapper


def _emit(payload, out: str | None, name: str) -> None:
    if out:
        path = write_json(Path(out) / name, payload)
        click.echo(str(path))
    elif hasattr(payload, "model_dump_json"):
        click.echo(payload.model_dump_json(indent=2))
    else:
        click.echo(json.dumps(payload, indent=2, default=str))


@click.group()
@click.option("--verbose", is_flag=True, help="Log at DEBUG level.")
def cli(verbose: bool) -> None:
    """Adversarial surrogate-risk bounds on one-dimensional grids."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@cli.command()
@click.argument("name", type=click.Choice(["realizable", "massart", "gaussian"]))
@click.option("--delta", type=float, default=None)
@click.option("--mu0", type=float, default=None)
@click.option("--mu1", type=float, default=None)
@click.option("--sigma", type=float, default=None)
@click.option("--eps", type=float, default=0.25, show_default=True)
@click.option("--spacing", type=float, default=1e-3, show_default=True)
@click.option("--loss", "loss_spec", default="hinge", show_default=True)
@click.option("--kappa", type=float, default=KAPPA, show_default=True)
@click.option("--check-concavity", is_flag=True, help="Require mu1 < mu0 + sqrt(2) sigma.")
@click.option("--out", default=None, help="Output directory.")
@_handled
def example(name, delta, mu0, mu1, sigma, eps, spacing, loss_spec, kappa, check_concavity, out):
    """Build a worked example, its optimal attack and witness, and check duality."""
    params = {k: v for k, v in dict(delta=delta, mu0=mu0, mu1=mu1, sigma=sigma).items() if v is not None}
    report = run_example(
        name,
        params,
        eps,
        parse_loss_spec(loss_spec),
        spacing=spacing,
        out=out,
        kappa=kappa,
        check_concavity=check_concavity,
    )
    click.echo(report.model_dump_json(indent=2))


@cli.command()
@click.argument("config", required=False, type=click.Path(dir_okay=False))
@click.option("--example", "example_name", default=None)
@click.option("--params", default=None, help="k:v,k:v")
@click.option("--distribution", "distribution_csv", default=None)
@click.option("--loss", default=None)
@click.option("--eps", type=float, default=None)
@click.option("--spacing", type=float, default=None)
@click.option("--samples", type=int, default=None)
@click.option("--sampler", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--bounds", default=None, help="Comma-separated: massart,massart-slack,envelope,envelope-atom,massart-standard,envelope-r.")
@click.option("--alpha", type=float, default=None)
@click.option("--r", type=float, default=None)
@click.option("--kappa", type=float, default=None)
@click.option("--out", default=None)
@_handled
def verify(config, example_name, distribution_csv, **flags):
    """Sample classifiers and check the selected bounds.

    Exits 1 on any violation, or when R_phi* cannot be bracketed within the slack.
    """
    overrides = dict(flags, example=example_name, distribution_csv=distribution_csv)
    cfg = load_config(config, overrides)
    report = run_verify(cfg)
    out = write_report(report)
    s = report.summary
    click.echo(f"{s.rows} rows, {s.violations} violations, min margin {s.min_margin:.6g}; written to {out}")
    if not s.bracket_within_slack:
        click.echo(f"R_phi* bracket [{s.r_phi_lower:.6g}, {s.r_phi_star:.6g}] is wider than the slack", err=True)
    if report.failed:
        sys.exit(EXIT_VIOLATION)


@cli.command()
@click.option("--loss", "loss_spec", default="hinge", show_default=True)
@click.option("--alpha", type=float, default=0.25, show_default=True)
@click.option("--n", "ns", type=int, multiple=True, default=(1, 10, 100, 1000, 10**4, 10**5, 10**6))
@click.option("--eps", type=float, default=0.1, show_default=True)
@click.option("--out", default=None)
@_handled
def lowerbound(loss_spec, alpha, ns, eps, out):
    """Excess-risk ratios of the f_n sequence against n."""
    reports = lowerbound_series(parse_loss_spec(loss_spec), alpha, ns, eps, out=out)
    for r in reports:
        click.echo(f"n={r.n} ratio={r.ratio:.9g}")
    last = reports[-1]
    click.echo(f"proof constant {last.proof_constant:.6g}, conjectured {last.conjectured_constant:.6g}")


@cli.command()
@click.option("--loss", "loss_spec", default="hinge", show_default=True)
@click.option("--samples", type=int, default=201, show_default=True)
@click.option("--out", required=True)
@_handled
def losscurves(loss_spec, samples, out):
    """Write conditional-risk curves, Psi and the consistency report."""
    click.echo(str(loss_curves(parse_loss_spec(loss_spec), out, samples)))


@cli.command()
@click.option("--distribution", "distribution_csv", required=True)
@click.option("--function", "function_csv", required=True)
@click.option("--loss", "loss_spec", default=None)
@click.option("--eps", type=float, default=0.0, show_default=True)
@click.option("--out", default=None)
@_handled
def risk(distribution_csv, function_csv, loss_spec, eps, out):
    """Standard and adversarial risks of one classifier."""
    d = read_distribution(distribution_csv)
    f = read_function(function_csv)
    loss = parse_loss_spec(loss_spec) if loss_spec else None
    reports = evaluate_risks(d, f, eps, loss)
    _emit({"reports": [r.model_dump(mode="json") for r in reports]}, out, "risk.json")


@cli.command()
@click.option("--attack", "attack_csv", default=None, help="Attacked distribution to evaluate.")
@click.option("--source", "source_csv", default=None, help="Source distribution for feasibility or brute force.")
@click.option("--loss", "loss_spec", default="hinge", show_default=True)
@click.option("--eps", type=float, default=None)
@click.option("--brute-force", is_flag=True, help="Maximize over all attacks of a tiny source.")
@click.option("--out", default=None)
@_handled
def dual(attack_csv, source_csv, loss_spec, eps, brute_force, out):
    """Dual objectives of an attacked distribution, or their brute-force maximum."""
    loss = parse_loss_spec(loss_spec)
    source = read_distribution(source_csv) if source_csv else None
    if brute_force:
        if source is None or eps is None:
            raise click.UsageError("--brute-force needs --source and --eps")
        lattice = Grid(lo=source.grid.lo, spacing=source.grid.spacing, count=source.grid.count)
        reports = [brute_force_dual(source, loss, eps, lattice), brute_force_dual(source, None, eps, lattice)]
    else:
        if attack_csv is None:
            raise click.UsageError("give --attack or --brute-force")
        attacked = read_distribution(attack_csv)
        reports = [
            dual_surrogate_objective(attacked, loss, source=source, eps=eps),
            dual_classification_objective(attacked, source=source, eps=eps),
        ]
    payload = {
        "reports": [
            r.model_dump(mode="json", include={"value", "kind", "loss", "feasibility", "combinations", "spacing", "version"})
            for r in reports
        ]
    }
    _emit(payload, out, "dual.json")


@cli.command()
@click.option("--port", type=int, default=PORT, show_default=True)
@click.option("--host", default="0.0.0.0", show_default=True)
def serve(port, host):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("main:app", host=host, port=port)


if __name__ == "__main__":
    cli()
