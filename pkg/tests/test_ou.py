import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heavytail_ou import InvalidInputError
from heavytail_ou.ou import (ModelParams, PathSample, TimeGrid, action_JH, constraint_F,
                             constraint_Fbar, f_p_eval, ou_transition, reversed_action,
                             sample_path, scale_path, time_average, transition_coefficients)
from heavytail_ou.rare_events import path_integrals


def test_model_params():
    m = ModelParams(1.5, 4.0)
    assert m.alpha == 0.5 and m.subexponential
    assert not ModelParams(1.0, 2.0).subexponential
    assert ModelParams(1.0, 4.0).eps_T(16.0) == 0.5
    for bad in [(0.0, 4.0), (1.0, -1.0), (math.nan, 4.0), (1.0, math.inf)]:
        with pytest.raises(InvalidInputError):
            ModelParams(*bad)


def test_time_grid():
    g = TimeGrid(0.5, 0.25, 4)
    assert g.horizon == 1.0
    assert np.allclose(g.times, [0.5, 0.75, 1.0, 1.25, 1.5])
    assert TimeGrid.over(10.0, 0.03).horizon == pytest.approx(10.0, abs=1e-12)
    with pytest.raises(InvalidInputError):
        TimeGrid(0.0, 0.0, 3)
    with pytest.raises(InvalidInputError):
        TimeGrid(0.0, 0.1, 0)


# --- ou_transition ----------------------------------------------------------

def test_transition_stationary_limit():
    assert ou_transition(0.0, math.inf, 1.0) == (0.0, 0.5)
    m, v = ou_transition(0.0, 60.0, 1.0)
    assert m == 0.0 and v == pytest.approx(0.5, abs=1e-15)


def test_transition_zero_time():
    assert ou_transition(3.0, 0.0, 1.0) == (3.0, 0.0)


def test_transition_closed_form():
    m, v = ou_transition(1.0, math.log(2.0), 1.0)
    assert m == pytest.approx(0.5, abs=1e-15)
    assert v == pytest.approx(3 / 8, abs=1e-15)


@pytest.mark.parametrize("x,dt", [(math.nan, 1.0), (math.inf, 1.0), (1.0, -0.1)])
def test_transition_rejects_bad_input(x, dt):
    with pytest.raises(InvalidInputError):
        ou_transition(x, dt, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 3), st.floats(0, 3), st.floats(0.1, 5))
def test_transition_composes(x, d1, d2, gamma):
    # two steps of the exact kernel equal one step of the summed length
    m1, v1 = ou_transition(x, d1, gamma)
    m2, v2 = ou_transition(m1, d2, gamma)
    m, v = ou_transition(x, d1 + d2, gamma)
    assert m2 == pytest.approx(m, rel=1e-12, abs=1e-14)
    assert v2 + v1 * math.exp(-2 * gamma * d2) == pytest.approx(v, rel=1e-12, abs=1e-15)


# --- sample_path --------------------------------------------------------------

def test_sample_path_determinism_and_start():
    params = ModelParams(1.0, 4.0)
    grid = TimeGrid.over(5.0, 0.01)
    a = sample_path(params, grid, x0=0.3, seed=11, replicate_id=5)
    b = sample_path(params, grid, x0=0.3, seed=11, replicate_id=5)
    assert a.values[0] == 0.3
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, sample_path(params, grid, 0.3, 11, 6).values)


def test_sample_path_stationary_moments():
    # 10^4 replicates at gamma=1, dt=0.01, T=100: N(0, 1/2) at t=T
    params = ModelParams(1.0, 4.0)
    grid = TimeGrid.over(100.0, 0.01)
    ends = np.array([sample_path(params, grid, seed=2024, replicate_id=r).values[-1]
                     for r in range(10_000)])
    n = ends.size
    assert abs(ends.mean()) < 4 * math.sqrt(0.5 / n)
    # var of the sample variance for a normal is 2 sigma^4 / (n-1)
    assert abs(ends.var(ddof=1) - 0.5) < 4 * math.sqrt(2 * 0.25 / (n - 1))


@pytest.mark.parametrize("dt", [0.5, 2.0])
def test_exact_sampler_has_no_step_bias(dt):
    params = ModelParams(1.0, 4.0)
    grid = TimeGrid(0.0, dt, 4)
    x0 = 1.0
    ends = np.array([sample_path(params, grid, x0=x0, seed=99, replicate_id=r).values[-1]
                     for r in range(10_000)])
    m, v = ou_transition(x0, grid.horizon, 1.0)
    n = ends.size
    assert abs(ends.mean() - m) < 4 * math.sqrt(v / n)
    assert abs(ends.var(ddof=1) - v) < 4 * math.sqrt(2 * v * v / (n - 1))


def test_euler_mode_is_a_different_scheme():
    a_e, s_e = transition_coefficients(1.0, 0.1, method="euler")
    assert (a_e, s_e) == (0.9, math.sqrt(0.1))
    with pytest.raises(InvalidInputError):
        transition_coefficients(1.0, 0.1, method="milstein")


def test_sample_path_matches_batched_kernel():
    # the path sampler and the batched estimator draw from the same streams
    params = ModelParams(1.0, 4.0)
    grid = TimeGrid.over(3.0, 0.05)
    ints, _ = path_integrals(params, 3.0, 4, seed=5, dt=0.05)
    for r in range(4):
        path = sample_path(params, grid, seed=5, replicate_id=r)
        assert time_average(path, 4.0) * 3.0 == pytest.approx(ints[r], rel=1e-12)


# --- f_p and time averages ---------------------------------------------------

def test_f_p_examples():
    assert f_p_eval(-2.0, 3) == -8.0
    assert f_p_eval(0.0, 2.7) == 0.0
    assert f_p_eval(1.5, 4) == 5.0625
    assert np.array_equal(f_p_eval(np.array([-2.0, 0.0, 1.5]), 3), [-8.0, 0.0, 3.375])
    with pytest.raises(InvalidInputError):
        f_p_eval(1.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(0.1, 8))
def test_f_p_is_odd(x, p):
    assert f_p_eval(-x, p) == -f_p_eval(x, p)


def test_time_average_constant_path():
    for T in (0.5, 3.0, 40.0):
        path = PathSample.from_values(np.ones(101), T / 100)
        assert time_average(path, 4.0) == pytest.approx(1.0, rel=1e-14)


def test_time_average_linear_path():
    t = np.linspace(0.0, 1.0, 10_001)
    path = PathSample.from_values(t, 1e-4)
    assert abs(time_average(path, 1.0) - 0.5) < 1e-6


def test_long_path_p3_average_centered():
    params = ModelParams(1.0, 3.0)
    grid = TimeGrid.over(1e4, 0.05)
    L = np.array([time_average(sample_path(params, grid, seed=314, replicate_id=r), 3.0)
                  for r in range(40)])
    assert abs(L.mean()) < 4 * L.std(ddof=1) / math.sqrt(L.size)


def test_time_average_oddness_exact():
    params = ModelParams(1.0, 3.0)
    path = sample_path(params, TimeGrid.over(20.0, 0.01), seed=3)
    assert time_average(-path, 3.0) == -time_average(path, 3.0)


def test_time_average_rejects_zero_horizon():
    # a grid cannot be built with zero horizon, so the error surfaces there
    with pytest.raises(InvalidInputError):
        PathSample.from_values([1.0, 1.0], 0.0)


# --- scale_path ---------------------------------------------------------------

def test_scale_path_examples():
    path = sample_path(ModelParams(1.0, 4.0), TimeGrid.over(2.0, 0.01), seed=8)
    half = scale_path(path, 16.0, 4.0)
    assert np.array_equal(half.values, path.values / 2)
    assert half.meta["eps_T"] == 0.5
    assert np.array_equal(scale_path(path, 1.0, 4.0).values, path.values)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([2.0, 4.0, 8.0, 16.0, 0.25]), st.sampled_from([2.0, 4.0, 0.5]))
def test_scale_path_composes(t1, t2):
    # power-of-two factors keep both sides exactly representable
    path = sample_path(ModelParams(1.0, 4.0), TimeGrid.over(1.0, 0.01), seed=1)
    once = scale_path(path, t1 * t2, 1.0)
    twice = scale_path(scale_path(path, t1, 1.0), t2, 1.0)
    assert np.array_equal(once.values, twice.values)


def test_scaled_process_matches_small_noise_simulation():
    # X_t / T^(1/p) in law equals the OU process driven by eps_T dW
    params = ModelParams(1.0, 4.0)
    T, H = 16.0, 3.0
    grid = TimeGrid.over(H, 0.01)
    n = 10_000
    scaled = np.array([scale_path(sample_path(params, grid, seed=77, replicate_id=r), T, 4.0)
                       .values[-1] for r in range(n)])
    direct = np.array([sample_path(params, grid, seed=78, replicate_id=r,
                                   noise=params.eps_T(T)).values[-1] for r in range(n)])
    v = 0.25 * ou_transition(0.0, H, 1.0)[1]
    assert abs(scaled.mean() - direct.mean()) < 4 * math.sqrt(2 * v / n)
    assert abs(scaled.var() - direct.var()) < 4 * math.sqrt(2 * 2 * v * v / n)


# --- action and constraints ---------------------------------------------------

def test_action_examples():
    assert action_JH(np.zeros(11), 0.1, 1.0).value == 0.0
    t = np.linspace(0.0, 1.0, 10_001)
    a = action_JH(t, 1e-4, 1.0)
    assert a.quadrature == "midpoint" and a.horizon == pytest.approx(1.0)
    assert abs(a.value - 7 / 6) < 1e-6
    assert action_JH(np.exp(-t), 1e-4, 1.0).value < 1e-10


def test_trapezoid_action_agrees_on_smooth_paths():
    t = np.linspace(0.0, 1.0, 10_001)
    assert action_JH(t, 1e-4, 1.0, "trapezoid").value == pytest.approx(7 / 6, abs=1e-6)


def test_action_needs_two_points():
    with pytest.raises(InvalidInputError):
        action_JH([1.0], 0.1, 1.0)


def test_constraint_examples():
    t = np.linspace(0.0, 1.0, 10_001)
    assert constraint_F(t, 1e-4, 4) == pytest.approx(0.2, abs=1e-6)
    assert constraint_Fbar(t, 1e-4, 4) == pytest.approx(0.2, abs=1e-6)
    assert constraint_F(-t, 1e-4, 3) == pytest.approx(-0.25, abs=1e-6)
    assert constraint_Fbar(-t, 1e-4, 3) == pytest.approx(0.25, abs=1e-6)
    assert (constraint_F(np.zeros(5), 0.1, 3), constraint_Fbar(np.zeros(5), 0.1, 3)) == (0.0, 0.0)


paths = st.lists(st.floats(-3, 3), min_size=3, max_size=40).map(np.array)


@settings(max_examples=100, deadline=None)
@given(paths, st.floats(0.01, 1.0), st.floats(0.1, 4.0), st.floats(1.0, 6.0))
def test_action_nonnegative_and_Fbar_dominates(phi, dt, gamma, p):
    assert action_JH(phi, dt, gamma).value >= 0
    assert constraint_Fbar(phi, dt, p) >= abs(constraint_F(phi, dt, p)) * (1 - 1e-12)


@settings(max_examples=100, deadline=None)
@given(paths, st.floats(0.01, 1.0), st.floats(0.1, 4.0))
def test_reversed_action_identity(phi, dt, gamma):
    # pinned ends kill the boundary term gamma [phi^2]
    phi = np.concatenate(([0.0], phi, [0.0]))
    a = action_JH(phi, dt, gamma).value
    assert reversed_action(phi, dt, gamma) == pytest.approx(a, rel=1e-8, abs=1e-8)
