import itertools

import numpy as np
import pytest

from models.grid import Grid, GridDistribution
from services.attack_builder import certify_optimum, matching_attack, primal_witness, shift_attack, unmoved_attack
from services.grid_dist import grid_function
from services.risk_engine import (
    adv_classification_risk,
    adv_surrogate_risk,
    attack_feasibility,
    brute_force_dual,
    classification_risk,
    compare_dual_maximizers,
    dual_classification_objective,
    dual_surrogate_objective,
    duality_gap,
    evaluate_risks,
    optimal_adv_classification_risk,
    risk_decomposition,
    surrogate_risk,
    w_infinity_1d,
)
from utils.errors import DomainError, InfeasibleAttackError, SizeLimitError


def _two_atoms():
    grid = Grid(lo=-1.5, spacing=0.05, count=61)
    mass0 = np.zeros(grid.count)
    mass1 = np.zeros(grid.count)
    mass0[20] = 0.5  # x = -0.5
    mass1[40] = 0.5  # x = 0.5
    return GridDistribution(grid=grid, mass0=mass0, mass1=mass1, name="two_atoms")


def test_surrogate_risk_of_zero_function(massart, hinge_loss, exp_loss):
    zero = grid_function(massart.grid, 0.0)
    for loss in (hinge_loss, exp_loss):
        assert surrogate_risk(massart, loss, zero) == pytest.approx(loss.value_at_zero * massart.total)
        assert adv_surrogate_risk(massart, loss, zero, 0.25) == pytest.approx(loss.value_at_zero * massart.total)


def test_surrogate_risk_of_pointwise_minimizer_on_massart(massart, rho_loss):
    f = primal_witness(unmoved_attack(massart), rho_loss)
    assert surrogate_risk(massart, rho_loss, f) == pytest.approx(0.25, abs=1e-6)


def test_surrogate_risk_of_confident_atom(hinge_loss):
    grid = Grid(lo=0.0, spacing=1.0, count=1)
    d = GridDistribution(grid=grid, mass0=[0.0], mass1=[1.0])
    assert surrogate_risk(d, hinge_loss, grid_function(grid, 1.0)) == 0.0


def test_adv_surrogate_risk_vanishes_on_realizable_example(realizable, rho_loss):
    f = grid_function(realizable.grid, np.where(realizable.grid.nodes >= 0, 1.0, -1.0))
    assert adv_surrogate_risk(realizable, rho_loss, f, 0.25) == pytest.approx(0.0, abs=1e-12)


def test_adv_classification_risk_two_atoms():
    d = _two_atoms()
    f = grid_function(d.grid, d.grid.nodes)
    assert adv_classification_risk(d, f, 0.25) == 0.0
    assert adv_classification_risk(d, f, 0.6) == pytest.approx(1.0)
    assert classification_risk(d, f) == 0.0


def test_evaluate_risks_reports_both_radii(massart, hinge_loss):
    f = grid_function(massart.grid, massart.grid.nodes)
    reports = evaluate_risks(massart, f, 0.25, hinge_loss)
    assert [(r.kind, r.adversarial) for r in reports] == [
        ("classification", False),
        ("surrogate", False),
        ("classification", True),
        ("surrogate", True),
    ]
    assert reports[2].value >= reports[0].value


def test_dual_objectives_on_unmoved_massart(massart, rho_loss):
    assert dual_surrogate_objective(massart, rho_loss).value == pytest.approx(0.25, abs=1e-6)
    assert dual_classification_objective(massart).value == pytest.approx(0.25, abs=1e-9)


def test_dual_objectives_vanish_on_separated_classes(realizable, exp_loss):
    assert dual_surrogate_objective(realizable, exp_loss).value == pytest.approx(0.0, abs=1e-9)
    assert dual_classification_objective(realizable).value == 0.0


def test_dual_objectives_on_balanced_atom(exp_loss):
    grid = Grid(lo=0.0, spacing=1.0, count=1)
    d = GridDistribution(grid=grid, mass0=[0.5], mass1=[0.5])
    assert dual_surrogate_objective(d, exp_loss).value == pytest.approx(1.0, abs=1e-7)
    assert dual_classification_objective(d).value == pytest.approx(0.5)


def test_w_infinity_examples():
    q = ([0.0, 1.0, 2.0], [0.2, 0.5, 0.3])
    assert w_infinity_1d(q, q) == 0.0
    shifted = ([0.25, 1.25, 2.25], [0.2, 0.5, 0.3])
    assert w_infinity_1d(q, shifted) == pytest.approx(0.25)
    assert w_infinity_1d(([0.0], [1.0]), ([0.5], [1.0])) == pytest.approx(0.5)
    with pytest.raises(InfeasibleAttackError):
        w_infinity_1d(([0.0], [1.0]), ([0.5], [0.7]))


def test_feasibility_of_unmoved_attack(massart):
    feasibility = attack_feasibility(massart, massart, 0.0)
    assert feasibility.w_inf0 == 0.0
    assert feasibility.feasible


def test_duality_gap_without_adversary_is_nonnegative(massart, hinge_loss):
    rng = np.random.default_rng(2)
    for _ in range(20):
        f = grid_function(massart.grid, rng.uniform(-2, 2, size=massart.grid.count))
        assert duality_gap(massart, hinge_loss, f, massart, 0.0) >= -1e-6


def test_duality_gap_rejects_far_attack(massart, hinge_loss):
    moved = GridDistribution(
        grid=massart.grid, mass0=np.roll(massart.mass0, 50), mass1=massart.mass1, name="moved"
    )
    f = grid_function(massart.grid, 0.0)
    with pytest.raises(InfeasibleAttackError):
        duality_gap(massart, hinge_loss, f, moved, 0.25)


def test_optimal_adv_classification_risk_on_examples(realizable, massart):
    assert optimal_adv_classification_risk(realizable, 0.25) == pytest.approx(0.0, abs=1e-12)
    assert optimal_adv_classification_risk(massart, 0.25) == pytest.approx(0.25, abs=1e-9)
    assert optimal_adv_classification_risk(massart, 0.0) == pytest.approx(0.25, abs=1e-9)


@pytest.mark.parametrize("eps", [0.0, 1.0, 2.0])
def test_optimal_adv_classification_risk_matches_labelling_scan(eps):
    rng = np.random.default_rng(int(eps * 10) + 1)
    grid = Grid(lo=0.0, spacing=1.0, count=10)
    for _ in range(10):
        mass0 = np.zeros(grid.count)
        mass1 = np.zeros(grid.count)
        mass0[2:8] = rng.uniform(0, 1, 6) * (rng.uniform(size=6) < 0.7)
        mass1[2:8] = rng.uniform(0, 1, 6) * (rng.uniform(size=6) < 0.7)
        mass0[2] += 0.1
        scale = mass0.sum() + mass1.sum()
        d = GridDistribution(grid=grid, mass0=mass0 / scale, mass1=mass1 / scale)
        best = min(
            adv_classification_risk(d, grid_function(grid, np.array(labels)), eps)
            for labels in itertools.product((-1.0, 1.0), repeat=grid.count)
        )
        assert optimal_adv_classification_risk(d, eps) == pytest.approx(best, abs=1e-12)


def test_brute_force_separated_atoms_have_zero_classification_value():
    grid = Grid(lo=0.0, spacing=0.1, count=11)
    mass0 = np.zeros(11)
    mass1 = np.zeros(11)
    mass0[2], mass1[8] = 0.5, 0.5
    d = GridDistribution(grid=grid, mass0=mass0, mass1=mass1)
    report = brute_force_dual(d, None, 0.2, grid)
    assert report.value == 0.0
    assert report.combinations == 25


def test_brute_force_balanced_atom_keeps_its_value(exp_loss):
    grid = Grid(lo=0.0, spacing=0.1, count=5)
    mass0 = np.zeros(5)
    mass1 = np.zeros(5)
    mass0[2] = mass1[2] = 0.5
    d = GridDistribution(grid=grid, mass0=mass0, mass1=mass1)
    report = brute_force_dual(d, exp_loss, 0.1, grid)
    assert report.value == pytest.approx(1.0, abs=1e-7)
    assert report.feasibility.feasible


def test_brute_force_massart_optimum_is_unmoved(rho_loss):
    grid = Grid(lo=-2.0, spacing=0.5, count=9)
    mass0 = np.zeros(9)
    mass1 = np.zeros(9)
    mass0[2], mass1[2] = 3 / 8, 1 / 8
    mass0[6], mass1[6] = 1 / 8, 3 / 8
    d = GridDistribution(grid=grid, mass0=mass0, mass1=mass1)
    report = brute_force_dual(d, rho_loss, 0.5, grid)
    assert report.combinations == 81
    assert report.value == pytest.approx(dual_surrogate_objective(d, rho_loss).value, abs=1e-7)
    assert report.value == pytest.approx(0.25, abs=1e-6)


def test_brute_force_dominates_any_feasible_attack(hinge_loss):
    rng = np.random.default_rng(4)
    grid = Grid(lo=0.0, spacing=0.25, count=9)
    for _ in range(5):
        mass0 = np.zeros(9)
        mass1 = np.zeros(9)
        spots = rng.choice(np.arange(2, 7), size=4, replace=False)
        mass0[spots[:2]] = 0.25
        mass1[spots[2:]] = 0.25
        d = GridDistribution(grid=grid, mass0=mass0, mass1=mass1)
        best = brute_force_dual(d, hinge_loss, 0.25, grid).value
        assert best >= dual_surrogate_objective(d, hinge_loss).value - 1e-7
        f = grid_function(grid, rng.uniform(-1, 1, size=9))
        # weak duality: every primal value sits above every dual value
        assert adv_surrogate_risk(d, hinge_loss, f, 0.25) >= best - 1e-6


def test_brute_force_size_limit():
    grid = Grid(lo=0.0, spacing=1.0, count=8)
    mass = np.full(8, 1 / 16)
    d = GridDistribution(grid=grid, mass0=mass, mass1=mass)
    with pytest.raises(SizeLimitError):
        brute_force_dual(d, None, 1.0, grid)


def test_surrogate_maximizers_maximize_classification_dual(exp_loss):
    rng = np.random.default_rng(8)
    grid = Grid(lo=0.0, spacing=0.1, count=21)
    for _ in range(10):
        mass0 = np.zeros(21)
        mass1 = np.zeros(21)
        k = int(rng.integers(2, 5))
        spots = rng.choice(np.arange(4, 17), size=k + 1, replace=False)
        mass0[spots[:k]] = rng.choice([0.05, 0.1, 0.15], size=k)
        mass1[spots[k]] = rng.choice([0.1, 0.2])
        d = GridDistribution(grid=grid, mass0=mass0, mass1=mass1)
        comparison = compare_dual_maximizers(d, exp_loss, 0.2, grid)
        assert comparison.maximizers >= 1
        assert comparison.worst_deficit == pytest.approx(0.0, abs=1e-12)


def _random_atoms(rng, grid, atoms):
    spots = rng.choice(np.arange(3, grid.count - 3), size=atoms, replace=False)
    mass0 = np.zeros(grid.count)
    mass1 = np.zeros(grid.count)
    weights = rng.uniform(0.2, 1.0, size=atoms)
    weights /= weights.sum()
    classes = rng.integers(0, 2, size=atoms)
    classes[0], classes[-1] = 0, 1
    for spot, cls, weight in zip(spots, classes, weights):
        (mass1 if cls else mass0)[spot] += weight
    return GridDistribution(grid=grid, mass0=mass0, mass1=mass1)


def _moved(rng, d, w):
    """Every atom of d moved to a random node at most w steps away."""
    mass0 = np.zeros(d.grid.count)
    mass1 = np.zeros(d.grid.count)
    for source, target in ((d.mass0, mass0), (d.mass1, mass1)):
        for i in np.flatnonzero(source > 0):
            target[i + int(rng.integers(-w, w + 1))] += source[i]
    return GridDistribution(grid=d.grid, mass0=mass0, mass1=mass1, name="moved")


def test_weak_duality_on_random_small_instances(hinge_loss, exp_loss, logistic_loss):
    rng = np.random.default_rng(12)
    grid = Grid(lo=0.0, spacing=0.25, count=13)
    losses = (hinge_loss, exp_loss, logistic_loss)
    for trial in range(100):
        d = _random_atoms(rng, grid, int(rng.integers(2, 7)))
        w = int(rng.integers(0, 3))
        attack = _moved(rng, d, w)
        assert attack_feasibility(d, attack, 0.25 * w).feasible
        loss = losses[trial % 3]
        f = grid_function(grid, rng.uniform(-2.0, 2.0, size=grid.count))
        gap = adv_surrogate_risk(d, loss, f, 0.25 * w) - dual_surrogate_objective(attack, loss).value
        assert gap >= -1e-6, trial
        class_gap = adv_classification_risk(d, f, 0.25 * w) - dual_classification_objective(attack).value
        assert class_gap >= -1e-12, trial


@pytest.mark.parametrize("eps, spacing", [(0.1, 0.05), (0.25, 0.25), (0.5, 0.25)])
def test_brute_force_on_separated_example_atoms(hinge_loss, eps, spacing):
    lo = -2.0
    grid = Grid(lo=lo, spacing=spacing, count=int(round(4.0 / spacing)) + 1)
    mass0 = np.zeros(grid.count)
    mass1 = np.zeros(grid.count)
    for x in (-1.5, -1.0, -0.75):
        mass0[int(round((x - lo) / spacing))] = 1.0 / 6.0
    for x in (0.75, 1.0, 1.5):
        mass1[int(round((x - lo) / spacing))] = 1.0 / 6.0
    d = GridDistribution(grid=grid, mass0=mass0, mass1=mass1, name="separated")
    assert brute_force_dual(d, None, eps, grid).value == pytest.approx(0.0, abs=1e-12)
    surrogate = brute_force_dual(d, hinge_loss, eps, grid)
    assert surrogate.value == pytest.approx(0.0, abs=1e-7)
    attacked = surrogate.attack
    eta = attacked.eta[attacked.mass > 0]
    assert np.all((eta == 0.0) | (eta == 1.0))


def test_adversarial_risks_grow_with_eps(massart, hinge_loss):
    rng = np.random.default_rng(8)
    nodes = massart.grid.nodes
    for _ in range(5):
        knots = np.sort(rng.uniform(nodes[0], nodes[-1], size=5))
        f = grid_function(massart.grid, np.interp(nodes, knots, rng.uniform(-2.0, 2.0, size=5)))
        radii = [0.01 * k for k in range(26)]
        cls = [adv_classification_risk(massart, f, r) for r in radii]
        surr = [adv_surrogate_risk(massart, hinge_loss, f, r) for r in radii]
        assert np.all(np.diff(cls) >= -1e-12)
        assert np.all(np.diff(surr) >= -1e-12)


def _sampled_function(rng, d):
    nodes = d.grid.nodes
    knots = np.sort(rng.uniform(nodes[0], nodes[-1], size=6))
    return grid_function(d.grid, np.interp(nodes, knots, rng.uniform(-2.0, 2.0, size=6)), name="sampled")


def test_decomposition_against_the_optimal_attack(massart_overlap, hinge_loss):
    attack = matching_attack(massart_overlap, 0.5).attacked
    r_star = optimal_adv_classification_risk(massart_overlap, 0.5)
    rng = np.random.default_rng(21)
    for _ in range(8):
        f = _sampled_function(rng, massart_overlap)
        report = risk_decomposition(massart_overlap, hinge_loss, f, attack, 0.5)
        cls, surr = report.classification, report.surrogate
        assert cls.excess == pytest.approx(adv_classification_risk(massart_overlap, f, 0.5) - r_star, abs=1e-8)
        assert surr.excess == pytest.approx(adv_surrogate_risk(massart_overlap, hinge_loss, f, 0.5) - 2 * r_star, abs=1e-6)
        for split in (cls, surr):
            assert split.i0 + split.i1 == pytest.approx(split.excess, abs=1e-9)
            assert split.residual == pytest.approx(0.0, abs=1e-9)
            assert min(split.attack0, split.attack1) >= -1e-6
            assert min(split.conditional0, split.conditional1) >= -1e-6
        assert report.nonnegative


def test_decomposition_of_the_certified_witness_is_small(massart, hinge_loss):
    attack, f, bracket = certify_optimum(massart, hinge_loss, 0.25)
    report = risk_decomposition(massart, hinge_loss, f, attack.attacked, 0.25)
    surr = report.surrogate
    assert report.nonnegative
    assert surr.excess == pytest.approx(
        adv_surrogate_risk(massart, hinge_loss, f, 0.25) - dual_surrogate_objective(attack.attacked, hinge_loss).value,
        abs=1e-9,
    )
    for name in ("attack0", "attack1", "conditional0", "conditional1"):
        assert -1e-6 <= getattr(surr, name) <= 2 * bracket.slack, name


def test_decomposition_rejects_bad_input(massart, hinge_loss):
    f = grid_function(massart.grid, 1.0)
    with pytest.raises(InfeasibleAttackError):
        risk_decomposition(massart, hinge_loss, f, shift_attack(massart, 0.25).attacked, 0.1)
    infinite = grid_function(massart.grid, np.where(massart.grid.nodes > 0, np.inf, -1.0))
    with pytest.raises(DomainError):
        risk_decomposition(massart, hinge_loss, infinite, massart, 0.25)
