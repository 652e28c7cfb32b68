import csv
import json

import numpy as np
import pytest

from models.campaign import ROW_HEADER, CampaignConfig
from models.grid import GridFunction
from services.attack_builder import certify_optimum, make_example
from services.bound_factory import near_half_mass
from services.campaign import SAMPLERS, build_distribution, load_config, optimal_values, run_verify, write_report
from services.loss_core import parse_loss_spec
from services.risk_engine import adv_surrogate_risk
from utils.csv_io import write_distribution
from utils.errors import ConfigError

MASSART_CONFIG = """\
# Massart example, margin loss
EXAMPLE=massart
PARAMS=delta:0.5
LOSS=rho_margin:rho=1
EPS=0.25
SPACING=0.01
SAMPLES=40
SEED=3
BOUNDS=massart,massart-slack
"""


def _massart_config(**overrides) -> CampaignConfig:
    values = dict(
        example="massart",
        params="delta:0.5",
        loss="rho_margin:rho=1",
        eps=0.25,
        spacing=0.01,
        samples=40,
        seed=3,
        bounds="massart",
    )
    values.update(overrides)
    return CampaignConfig(**values)


def test_load_config_from_file(tmp_path):
    path = tmp_path / "massart.env"
    path.write_text(MASSART_CONFIG)
    cfg = load_config(path)
    assert cfg.example == "massart"
    assert cfg.params == {"delta": 0.5}
    assert cfg.bounds == ["massart", "massart-slack"]
    assert cfg.samples == 40
    assert cfg.sampler == "random-threshold"


def test_flags_override_the_file(tmp_path):
    path = tmp_path / "massart.env"
    path.write_text(MASSART_CONFIG)
    cfg = load_config(path, {"samples": 5, "bounds": "massart", "loss": None})
    assert cfg.samples == 5
    assert cfg.bounds == ["massart"]
    assert cfg.loss == "rho_margin:rho=1"


def test_config_errors_name_field_and_line(tmp_path):
    path = tmp_path / "bad.env"
    path.write_text("EXAMPLE=massart\n\nEPS=-1\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "eps"
    assert info.value.line == 3

    path.write_text("EXAMPLE=massart\nCOLOR=red\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "color"
    assert info.value.line == 2


def test_config_needs_exactly_one_source(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, {"samples": 3})
    with pytest.raises(ConfigError):
        load_config(None, {"example": "massart", "distribution_csv": "d.csv"})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.env")


def test_config_rejects_malformed_params():
    with pytest.raises(ConfigError):
        load_config(None, {"example": "massart", "params": "delta=0.5"})
    with pytest.raises(ConfigError):
        load_config(None, {"example": "massart", "bounds": "massart99"})


def test_build_distribution_from_csv(tmp_path):
    d = make_example("massart", {"delta": 0.5}, spacing=0.01)
    path = write_distribution(tmp_path / "massart.csv", d)
    cfg = CampaignConfig(distribution_csv=str(path), spacing=0.01, eps=0.25)
    padded = build_distribution(cfg)
    assert padded.grid.count == d.grid.count + 50
    assert padded.total == pytest.approx(d.total)
    with pytest.raises(ConfigError):
        build_distribution(CampaignConfig(distribution_csv=str(path), spacing=0.02, eps=0.25))


def test_samplers_return_one_value_per_node(massart):
    loss = parse_loss_spec("hinge")
    *_, witness = optimal_values(massart, loss, 0.25)
    for name, sampler in SAMPLERS.items():
        values = sampler(massart, witness, np.random.default_rng(0), 4)
        assert values.shape == (massart.grid.count,), name
        assert not np.any(np.isnan(values)), name


def test_optimal_values_on_massart(massart):
    r_star, bracket, attack, _ = optimal_values(massart, parse_loss_spec("rho_margin:rho=1"), 0.25)
    assert r_star == pytest.approx(0.25, abs=1e-9)
    assert bracket.upper == pytest.approx(0.25, abs=1e-6)
    assert bracket.lower == pytest.approx(0.25, abs=1e-6)
    assert bracket.within_slack
    assert attack.attacked.name == massart.name


def test_massart_campaign_has_no_violations():
    report = run_verify(_massart_config())
    s = report.summary
    assert s.rows == 40
    assert s.violations == 0
    assert not report.failed
    assert s.alpha == pytest.approx(0.25)
    assert s.r_star == pytest.approx(0.25, abs=1e-9)


def test_campaign_is_deterministic():
    cfg = _massart_config(samples=12, sampler="random-piecewise", bounds="massart,massart-slack")
    first = run_verify(cfg)
    second = run_verify(cfg)
    assert [r.as_row() for r in first.rows] == [r.as_row() for r in second.rows]
    assert [r.bound for r in first.rows[:2]] == ["massart", "massart-slack"]
    other = run_verify(cfg.model_copy(update={"seed": 4}))
    assert [r.surr_excess for r in other.rows] != [r.surr_excess for r in first.rows]


def test_fn_sequence_keeps_the_witness_signs():
    report = run_verify(_massart_config(samples=6, sampler="fn-sequence"))
    class_excess = {round(r.class_excess, 12) for r in report.rows}
    surr = [r.surr_excess for r in report.rows]
    assert len(class_excess) == 1
    assert surr == sorted(surr)


def test_standard_massart_bound_needs_eps_zero():
    with pytest.raises(ConfigError):
        run_verify(_massart_config(bounds="massart-standard"))
    report = run_verify(_massart_config(bounds="massart-standard", eps=0.0, samples=10))
    assert report.summary.violations == 0


def test_gaussian_concave_campaign_has_no_violations():
    cfg = CampaignConfig(
        example="gaussian",
        params={"mu0": 0.0, "mu1": 1.0, "sigma": 1.0},
        loss="hinge",
        eps=0.25,
        spacing=0.01,
        samples=30,
        seed=11,
        bounds=["envelope", "envelope-r"],
    )
    report = run_verify(cfg)
    assert report.summary.violations == 0
    assert report.summary.attack.startswith("shift[")


def test_write_report(tmp_path):
    report = run_verify(_massart_config(samples=5, out=str(tmp_path / "run")))
    out = write_report(report)
    with (out / "rows.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == ROW_HEADER
    assert len(rows) == 6
    summary = json.loads((out / "summary.json").read_text())
    assert summary["summary"]["rows"] == 5
    assert summary["config"]["example"] == "massart"
    assert "rows" not in summary


@pytest.mark.parametrize("loss, constant, scale", [("hinge", 2.0, 2.0), ("rho_margin:rho=1", 4.0 / 3.0, 1.0)])
def test_overlapping_massart_campaign_with_slack_bound(loss, constant, scale):
    cfg = _massart_config(params="delta:0.25", eps=0.5, loss=loss, alpha=0.25, bounds="massart-slack", samples=20)
    report = run_verify(cfg)
    s = report.summary
    assert s.violations == 0
    assert not report.failed
    assert s.bracket_within_slack
    assert s.opt_gap <= 4 * 0.01
    assert s.r_star == pytest.approx(0.4375, abs=0.01)
    assert s.r_phi_lower == pytest.approx(scale * s.r_star, abs=1e-6)
    assert s.r_phi_lower <= s.r_phi_star
    assert s.attack.startswith("matched[")

    spec = report.bounds["massart-slack"]
    assert spec.constant == pytest.approx(constant, rel=1e-6)
    d = build_distribution(cfg)
    _, _, attack, _ = optimal_values(d, parse_loss_spec(loss), 0.5)
    assert spec.additive_offset == pytest.approx(0.75 * near_half_mass(attack, 0.25))
    # the shifted classes alone put 3/2 (eps - delta) at eta* = 1/2
    assert spec.additive_offset >= 0.75 * (1.5 * 0.25 - 0.02)


def test_surrogate_excess_is_measured_from_the_upper_end():
    report = run_verify(_massart_config(samples=4, sampler="fn-sequence"))
    d = build_distribution(report.config)
    loss = parse_loss_spec(report.config.loss)
    _, witness, bracket = certify_optimum(d, loss, 0.25)
    assert report.summary.r_phi_star == pytest.approx(bracket.upper)
    row = report.rows[0]
    f = np.where(witness.values > 0, 1.0, -1.0)
    risk = adv_surrogate_risk(d, loss, GridFunction(grid=d.grid, values=f), 0.25)
    assert row.surr_excess == pytest.approx(risk - bracket.upper)


def test_wide_bracket_fails_the_campaign():
    report = run_verify(_massart_config(samples=3))
    assert not report.failed
    summary = report.summary.model_copy(update={"bracket_within_slack": False, "opt_gap": 0.3})
    assert report.model_copy(update={"summary": summary}).failed


def test_write_report_includes_the_bounds(tmp_path):
    cfg = _massart_config(samples=3, bounds="massart,massart-slack", out=str(tmp_path / "run"))
    out = write_report(run_verify(cfg))
    bounds = json.loads((out / "bounds.json").read_text())
    assert set(bounds) == {"massart", "massart-slack"}
    assert bounds["massart"]["kind"] == "massart_linear"
    assert bounds["massart"]["constant"] == pytest.approx(4.0 / 3.0, rel=1e-6)
    assert bounds["massart-slack"]["additive_offset"] == pytest.approx(0.0, abs=1e-9)
