from __future__ import annotations

import pytest

from services.attack_builder import make_example, shift_attack
from services.loss_core import exponential, hinge, logistic, rho_margin

SPACING = 0.01


@pytest.fixture(scope="module")
def hinge_loss():
    return hinge()


@pytest.fixture(scope="module")
def rho_loss():
    return rho_margin(1.0)


@pytest.fixture(scope="module")
def exp_loss():
    return exponential()


@pytest.fixture(scope="module")
def logistic_loss():
    return logistic()


@pytest.fixture(scope="module")
def realizable():
    return make_example("realizable", {"delta": 0.5}, spacing=SPACING, pad=0.25)


@pytest.fixture(scope="module")
def massart():
    return make_example("massart", {"delta": 0.5}, spacing=SPACING, pad=0.25)


@pytest.fixture(scope="module")
def massart_overlap():
    """delta = 0.25 < eps = 0.5: the shifted classes overlap on [-0.25, 0.25]."""
    return make_example("massart", {"delta": 0.25}, spacing=SPACING, pad=0.5)


@pytest.fixture(scope="module")
def gaussian():
    return make_example("gaussian", {"mu0": 0.0, "mu1": 1.0, "sigma": 1.0, "eps": 0.25}, spacing=SPACING, pad=0.25)


@pytest.fixture(scope="module")
def gaussian_attack(gaussian):
    return shift_attack(gaussian, 0.25)
