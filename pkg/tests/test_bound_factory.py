import math

import numpy as np
import pytest

from models.curve import MonotoneCurve
from services.attack_builder import shift_attack, unmoved_attack
from services.bound_factory import (
    argmin_r,
    best_massart_slack_bound,
    general_concave_bound,
    lambda_curve,
    massart_bound_with_slack,
    massart_constant,
    massart_linear_bound,
    near_half_mass,
    optimize_r,
    phi_tilde,
    phi_tilde_with_atom,
    standard_massart_constant,
    proto_bound_r,
    psi_bound,
)
from services.envelope import cdf_abs_eta
from utils.errors import DegenerateBoundError, DomainError, PreconditionError


@pytest.fixture(scope="module")
def linear_env(realizable):
    """H(t) = 2t on [0, 1/2]."""
    return cdf_abs_eta(unmoved_attack(realizable))


@pytest.fixture(scope="module")
def overlap_attack(massart_overlap):
    return shift_attack(massart_overlap, 0.5)


@pytest.mark.parametrize(
    "loss_name, alpha, expected",
    [("rho_loss", 0.0, 2.0), ("rho_loss", 0.25, 4.0 / 3.0), ("hinge_loss", 0.5, 1.0)],
)
def test_massart_constant(request, loss_name, alpha, expected):
    loss = request.getfixturevalue(loss_name)
    const = massart_constant(loss, alpha)
    assert const.proof == pytest.approx(expected, rel=1e-6)
    assert const.conjectured == pytest.approx((0.5 + alpha) * expected, rel=1e-6)
    assert standard_massart_constant(loss, alpha) == pytest.approx(expected, rel=1e-6)


def test_massart_constant_errors(hinge_loss, exp_loss):
    with pytest.raises(DomainError):
        massart_constant(hinge_loss, 0.6)
    with pytest.raises(DomainError):
        massart_constant(hinge_loss, -0.1)
    for loss in (hinge_loss, exp_loss):
        with pytest.raises(DegenerateBoundError):
            massart_constant(loss, 0.0)


def test_massart_linear_bound_evaluates(rho_loss):
    spec = massart_linear_bound(rho_loss, 0.25)
    assert spec.kind == "massart_linear"
    assert spec.evaluate(0.3) == pytest.approx(0.4, rel=1e-6)
    assert spec.evaluate(-1.0) == 0.0
    assert spec.evaluate([0.0, 0.75]) == pytest.approx([0.0, 1.0], rel=1e-6)
    assert massart_linear_bound(rho_loss, 0.25, kind="nonadv_linear").kind == "nonadv_linear"


def test_slack_bound_on_overlapping_massart(rho_loss, overlap_attack):
    spec = massart_bound_with_slack(rho_loss, 0.25, overlap_attack)
    assert spec.kind == "massart_slack"
    # band of mass 1.5 (eps - delta) at eta* = 1/2, weighted by 1/2 + alpha
    assert spec.additive_offset == pytest.approx(0.75 * 1.5 * 0.25, abs=0.01)
    assert spec.evaluate(0.0) == pytest.approx(spec.additive_offset)
    assert spec.constant == pytest.approx(4.0 / 3.0, rel=1e-6)


def test_slack_bound_without_near_half_mass(rho_loss, massart):
    attack = unmoved_attack(massart, 0.25)
    assert near_half_mass(attack, 0.25) == 0.0
    assert near_half_mass(attack, 0.3) == pytest.approx(1.0)
    assert massart_bound_with_slack(rho_loss, 0.25, attack).additive_offset == 0.0


def test_best_slack_bound_picks_the_massart_margin(hinge_loss, massart):
    value, spec = best_massart_slack_bound(hinge_loss, unmoved_attack(massart, 0.25), 0.1)
    assert spec.alpha == pytest.approx(0.25)
    assert value == pytest.approx(0.2, abs=1e-6)


def test_best_slack_bound_with_no_usable_alpha(hinge_loss, massart):
    with pytest.raises(DegenerateBoundError):
        best_massart_slack_bound(hinge_loss, unmoved_attack(massart), 0.1, alphas=[0.0])


def test_psi_bound_hinge_is_identity(hinge_loss):
    assert psi_bound(hinge_loss, 0.3) == pytest.approx(0.3, abs=1e-6)
    assert psi_bound(hinge_loss, 1.5) == pytest.approx(1.0, abs=1e-6)
    assert psi_bound(hinge_loss, -0.2) == pytest.approx(0.0, abs=1e-9)


def test_lambda_curve(hinge_loss, exp_loss):
    lam = lambda_curve(hinge_loss)
    assert lam(0.3) == pytest.approx(0.3, abs=1e-6)
    assert lam(1.0) == pytest.approx(1.0, abs=1e-6)
    # Psi(t) = 1 - sqrt(1 - t^2) for the exponential loss
    lam = lambda_curve(exp_loss)
    assert lam(0.5) == pytest.approx(math.sqrt(0.75), abs=1e-3)
    assert np.all(np.diff(lam.ys) >= 0)


def test_phi_tilde_values(hinge_loss, linear_env):
    spec = phi_tilde(hinge_loss, linear_env)
    assert spec.kind == "concave"
    assert spec.evaluate(0.0) == pytest.approx(0.0, abs=1e-9)
    # L(0.4) = 0.1, H(0.1) = 0.2
    expected = 4.0 * (0.1 + math.sqrt(-math.e * 0.2 * math.log(0.2)))
    assert spec.evaluate(0.4) == pytest.approx(expected, rel=1e-3)
    assert np.all(np.diff(spec.curve.ys) >= 0)


def test_phi_tilde_entropy_term_saturates_past_one_over_e(hinge_loss, linear_env):
    spec = phi_tilde(hinge_loss, linear_env)
    # L(0.8) = 0.2 and H(0.2) = 0.4 > 1/e
    assert spec.evaluate(0.8) == pytest.approx(4.0 * (0.2 + 1.0), rel=1e-3)
    assert spec.evaluate(3.0) == pytest.approx(4.0 * (0.75 + 1.0), rel=1e-3)
    for z in (0.2, 0.5, 0.8, 2.0):
        L = z / 4.0
        term = math.sqrt(optimize_r(min(2.0 * L, 1.0)))
        assert spec.evaluate(z) == pytest.approx(4.0 * (L + term), rel=1e-3)


def test_phi_tilde_preconditions(hinge_loss, rho_loss, linear_env, overlap_attack):
    with pytest.raises(PreconditionError):
        phi_tilde(rho_loss, linear_env)
    with pytest.raises(PreconditionError):
        phi_tilde(hinge_loss, cdf_abs_eta(overlap_attack))
    with pytest.raises(PreconditionError):
        phi_tilde(hinge_loss, cdf_abs_eta(overlap_attack, strict=True), atom_budget=1.0)
    assert phi_tilde(hinge_loss, cdf_abs_eta(overlap_attack), atom_budget=0.5).kind == "concave"


def test_phi_tilde_atom_budget_on_gaussians(hinge_loss, gaussian, gaussian_attack):
    env = cdf_abs_eta(gaussian_attack)
    slack = 4 * gaussian.grid.spacing * gaussian.total
    assert env.atom_tol < env.atom_at_half < slack
    with pytest.raises(PreconditionError):
        phi_tilde(hinge_loss, env)
    assert phi_tilde(hinge_loss, env, atom_budget=slack).evaluate(0.0) == pytest.approx(0.0, abs=1e-9)


def test_phi_tilde_with_atom(hinge_loss, overlap_attack):
    env = cdf_abs_eta(overlap_attack, strict=True)
    spec = phi_tilde_with_atom(hinge_loss, env)
    assert spec.kind == "concave_atom"
    assert spec.additive_offset == pytest.approx(0.5 * 1.5 * 0.25, abs=0.01)
    assert spec.evaluate(0.0) == pytest.approx(spec.additive_offset, abs=1e-9)
    with pytest.raises(PreconditionError):
        phi_tilde_with_atom(hinge_loss, cdf_abs_eta(overlap_attack))


def test_proto_bound_values(hinge_loss, linear_env):
    spec = proto_bound_r(hinge_loss, linear_env, 0.5)
    assert spec.kind == "proto_r"
    assert spec.r == 0.5
    # H(L(0.1) / 2) = 0.1, L(0.2) = 0.2
    expected = 4.0 * math.sqrt(math.sqrt(0.1) / 0.5) + 0.4
    assert spec.evaluate(0.4) == pytest.approx(expected, rel=1e-3)


@pytest.mark.parametrize("r", [0.0, 1.0, -0.5])
def test_proto_bound_rejects_r(hinge_loss, linear_env, r):
    with pytest.raises(DomainError):
        proto_bound_r(hinge_loss, linear_env, r)


@pytest.mark.parametrize("z", [0.1, 0.2, 0.4, 0.6])
def test_optimized_proto_bound_stays_below_phi_tilde(hinge_loss, linear_env, z):
    # here H(L(z/4)) = z/2 <= 1/e
    a = z / 4.0
    proto = proto_bound_r(hinge_loss, linear_env, argmin_r(a))
    assert proto.evaluate(z) == pytest.approx(4.0 * math.sqrt(optimize_r(a)) + 2.0 * (z / 2.0), rel=1e-3)
    assert proto.evaluate(z) <= phi_tilde(hinge_loss, linear_env).evaluate(z) + 1e-6


def test_optimize_r_closed_form():
    assert optimize_r(1.0) == 1.0
    assert optimize_r(0.5) == 1.0
    assert optimize_r(0.1) == pytest.approx(-math.e * 0.1 * math.log(0.1))
    assert argmin_r(0.5) == 0.0
    assert argmin_r(0.1) == pytest.approx(1.0 + 1.0 / math.log(0.1))


@pytest.mark.parametrize("a", [1e-6, 0.01, 0.1, 0.3, math.exp(-1.0), 0.6, 1.0])
def test_optimize_r_matches_a_scan(a):
    r = np.linspace(0.0, 0.9999, 100001)
    scanned = float(np.min(a**r / (1.0 - r)))
    assert optimize_r(a) == pytest.approx(scanned, rel=1e-4)
    best = argmin_r(a)
    assert a**best / (1.0 - best) == pytest.approx(optimize_r(a), rel=1e-9)


@pytest.mark.parametrize("a", [0.0, -0.1, 1.5])
def test_optimize_r_rejects(a):
    with pytest.raises(DomainError):
        optimize_r(a)
    with pytest.raises(DomainError):
        argmin_r(a)


def test_general_concave_bound():
    identity = MonotoneCurve(xs=[0.0, 2.0], ys=[0.0, 2.0], name="identity")
    spec = general_concave_bound(identity, identity, 1.0)
    assert spec.kind == "general"
    assert spec.evaluate(4.0) == pytest.approx(8.0)
    assert spec.evaluate(1.0) == pytest.approx(3.0)
    assert spec.evaluate(0.0) == 0.0
    assert np.all(np.diff(spec.curve.ys) >= 0)


def test_general_concave_bound_preconditions():
    identity = MonotoneCurve(xs=[0.0, 1.0], ys=[0.0, 1.0])
    convex = MonotoneCurve(xs=[0.0, 1.0, 2.0], ys=[0.0, 0.1, 2.0])
    lifted = MonotoneCurve(xs=[0.0, 1.0], ys=[0.5, 1.0])
    with pytest.raises(PreconditionError):
        general_concave_bound(identity, identity, 0.0)
    with pytest.raises(PreconditionError):
        general_concave_bound(identity, convex, 1.0)
    with pytest.raises(PreconditionError):
        general_concave_bound(convex, identity, 1.0)
    with pytest.raises(PreconditionError):
        general_concave_bound(identity, lifted, 1.0)
