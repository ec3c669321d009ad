"""The reference routes are checked against each other and frozen first."""
import math

import pytest

from heavytail_ou import InvalidInputError
from heavytail_ou.shooting import homoclinic_action, shooting_action

# frozen outputs of the reference routes (gamma = 1)
SHOOTING_P4_H20 = 1.1547005383930538
HOMOCLINIC = {3.0: 0.96548938461, 4.0: 2 / math.sqrt(3), 6.0: 1.27688322055}


def test_homoclinic_closed_form_p4():
    # for p = 4 the orbit is a sech and the ratio is 2/sqrt(3)
    assert homoclinic_action(1.0, 4.0) == pytest.approx(2 / math.sqrt(3), rel=1e-13)


@pytest.mark.parametrize("p", [3.0, 6.0])
def test_homoclinic_frozen(p):
    assert homoclinic_action(1.0, p) == pytest.approx(HOMOCLINIC[p], rel=1e-10)


def test_shooting_frozen_and_close_to_whole_line_value():
    res = shooting_action(1.0, 4.0, 20.0)
    assert res.action == pytest.approx(SHOOTING_P4_H20, rel=1e-9)
    # a bump at H = 20 is already indistinguishable from the homoclinic orbit
    assert res.action == pytest.approx(HOMOCLINIC[4.0], rel=1e-8)
    assert 5.0 < res.peak_time < 20.0 and res.slope > 0


def test_shooting_p3_agrees_with_homoclinic():
    assert shooting_action(1.0, 3.0, 20.0).action == pytest.approx(HOMOCLINIC[3.0], rel=1e-7)


def test_shooting_short_horizon_costs_more():
    assert shooting_action(1.0, 4.0, 5.0).action > shooting_action(1.0, 4.0, 10.0).action


@pytest.mark.parametrize("gamma", [0.5, 2.0])
def test_gamma_scaling_of_homoclinic(gamma):
    p = 4.0
    assert homoclinic_action(gamma, p) == pytest.approx(
        gamma ** (1 + 2 / p) * homoclinic_action(1.0, p), rel=1e-11)


def test_bad_inputs():
    with pytest.raises(InvalidInputError):
        shooting_action(1.0, 2.0, 10.0)
    with pytest.raises(InvalidInputError):
        homoclinic_action(-1.0, 4.0)
