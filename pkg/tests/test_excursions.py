import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heavytail_ou import EmptyDataError, InvalidInputError
from heavytail_ou import excursions as exc
from heavytail_ou.ou import (ModelParams, PathSample, TimeGrid, constraint_Fbar, path_integral,
                             sample_path, time_average)

P3 = ModelParams(1.0, 3.0)


def test_hand_traced_crossings():
    path = PathSample.from_values([0.0, 0.05, 0.12, 0.30, 0.10, -0.02, 0.01], 1.0)
    records, stats = exc.detect_excursions(path, 0.1, 3.0)
    assert len(records) == 1
    r = records[0]
    assert r.depart_time == pytest.approx(1 + 0.05 / 0.07, abs=1e-12)
    assert r.return_time == pytest.approx(4 + 0.10 / 0.12, abs=1e-12)
    assert round(r.depart_time, 3) == 1.714 and round(r.return_time, 3) == 4.833
    assert stats.n_cycles == 1
    assert r.duration == pytest.approx(r.return_time)


def test_no_departure_means_no_cycles():
    path = PathSample.from_values([0.0, 0.05, -0.3, 0.09, 0.0], 0.5)
    records, stats = exc.detect_excursions(path, 0.1, 4.0)
    assert records == [] and stats.n_cycles == 0
    assert stats.remainder_integral == pytest.approx(path_integral(path, 4.0), rel=1e-14)


def test_eps0_must_be_positive():
    path = PathSample.from_values([0.0, 1.0], 1.0)
    for bad in (0.0, -0.1, math.nan):
        with pytest.raises(InvalidInputError):
            exc.detect_excursions(path, bad, 3.0)


def test_count_completed():
    assert exc.count_completed([3.2, 7.9, 12.5], 10.0) == 2
    assert exc.count_completed([3.2, 7.9, 12.5], 0.0) == 0
    assert exc.count_completed([], 5.0) == 0


def test_scaled_cycle_integrals():
    stats = exc.CycleStats(1, 0.0, 1.0, np.array([1.0]), np.array([5.0]), 10.0, 5.0)
    assert exc.cycle_integrals_scaled(stats, 10.0)[0] == 0.5
    zero = exc.CycleStats(3, 0.0, 1.0, np.ones(3), np.zeros(3), 10.0, 0.0)
    assert np.array_equal(exc.cycle_integrals_scaled(zero, 7.0), np.zeros(3))
    with pytest.raises(InvalidInputError):
        exc.cycle_integrals_scaled(stats, 0.0)


def test_simulated_cycle_mean_is_zero():
    cyc = exc.simulate_cycles(P3, 0.1, 100_000, seed=4242, dt=0.01)
    c = cyc.integrals
    assert cyc.truncated == 0
    assert abs(c.mean()) < 4 * c.std(ddof=1) / math.sqrt(c.size)
    assert np.all(cyc.durations > 0)
    assert np.all(cyc.depart_times < cyc.durations)


def test_tau_statistics_degenerate():
    with pytest.warns(UserWarning):
        ts = exc.tau_statistics([1.0, 1.0, 1.0])
    assert ts.mean_tau == 1.0 and ts.var_tau == 0.0
    assert ts.mgf_at_1 == pytest.approx(math.e, rel=1e-15)
    with pytest.raises(EmptyDataError):
        exc.tau_statistics([])


def _taus(seed, eps0=0.1, n=100_000):
    return exc.simulate_cycles(P3, eps0, n, seed, 0.01).durations


def test_mean_tau_is_stable_across_seeds():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        a = exc.tau_statistics(_taus(1))
        b = exc.tau_statistics(_taus(2))
    for s in (a, b):
        assert (s.mean_ci[1] - s.mean_ci[0]) / 2 / s.mean_tau < 0.02
    joint = math.hypot(*(math.sqrt(s.var_tau / s.n) for s in (a, b)))
    assert abs(a.mean_tau - b.mean_tau) < 1.96 * joint * 2


def test_mean_tau_increases_with_eps0():
    # common random numbers: the same streams for all three levels
    means = [_taus(3, e, 50_000).mean() for e in (0.05, 0.1, 0.2)]
    assert means[0] < means[1] < means[2]


def _sim_path(T=200.0, seed=9, rep=0, p=3.0):
    return sample_path(ModelParams(1.0, p), TimeGrid.over(T, 0.01), seed=seed, replicate_id=rep)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([3.0, 4.0, 2.5]), st.sampled_from([0.05, 0.1, 0.3]))
def test_decomposition_is_exact(rep, p, eps0):
    path = _sim_path(50.0, 17, rep, p)
    records, stats = exc.detect_excursions(path, eps0, p)
    total = T_L = time_average(path, p) * path.horizon
    recon = math.fsum(stats.cycle_integrals) + stats.remainder_integral
    scale = constraint_Fbar(path.values, path.grid, p)
    assert abs(recon - total) <= 1e-10 * scale
    assert T_L == pytest.approx(stats.total_integral, rel=1e-12, abs=1e-12)
    # records are ordered, non-overlapping and N_T counts completions in [0, T]
    ends = [r.return_time for r in records]
    assert all(r.start_time < r.depart_time < r.return_time for r in records)
    assert all(a.return_time == b.start_time for a, b in zip(records, records[1:]))
    assert stats.n_cycles == exc.count_completed(ends, path.horizon)


def test_crossings_strictly_inside_cells():
    path = _sim_path(100.0, 5)
    records, _ = exc.detect_excursions(path, 0.1, 3.0)
    v, dt = path.values, path.grid.dt
    for r in records:
        k = int(r.depart_time // dt)
        assert k * dt < r.depart_time < (k + 1) * dt
        assert v[k] < 0.1 <= v[k + 1]
        k = int(r.return_time // dt)
        assert k * dt < r.return_time <= (k + 1) * dt
        assert v[k] > 0.0 >= v[k + 1]


def test_cycle_integrals_uncorrelated():
    path = _sim_path(20_000.0, 21)
    _, stats = exc.detect_excursions(path, 0.1, 3.0)
    r, se = exc.lag1_autocorrelation(stats.cycle_integrals)
    assert abs(r) < 4 * se


def test_cycle_rate_approaches_inverse_mean_tau():
    m, m_se = exc.mean_tau(1.0, 3.0, 0.1, 0.01, n_cycles=200_000, seed=55)
    target = 1 / m
    est = {}
    for T in (100.0, 200.0):
        n = exc.cycle_counts(P3, 0.1, T, 4000, seed=56, dt=0.01) / T
        est[T] = (n.mean(), n.std(ddof=1) / math.sqrt(n.size))
    d100 = abs(est[100.0][0] - target)
    d200 = abs(est[200.0][0] - target)
    joint = math.hypot(est[100.0][1], est[200.0][1]) + target * m_se / m
    assert d200 <= d100 + 2 * joint


def test_cycle_counts_agree_with_detection():
    # the counting kernel and the path detector see the same streams
    counts = exc.cycle_counts(P3, 0.1, 30.0, 5, seed=8, dt=0.01)
    for r in range(5):
        path = sample_path(P3, TimeGrid.over(30.0, 0.01), seed=8, replicate_id=r)
        assert exc.detect_excursions(path, 0.1, 3.0)[1].n_cycles == counts[r]


def test_count_deviation_edges():
    wide = exc.cycle_count_deviation(P3, 0.1, 1e9, 20.0, 200, seed=1, mean_tau_value=0.67)
    assert wide.p_hat == 0.0 and wide.bound_only
    # T = 0: N_0 = 0 lies on the closed boundary of the empty interval, so it is outside
    zero = exc.cycle_count_deviation(P3, 0.1, 0.5, 0.0, 50, seed=1, mean_tau_value=0.67)
    assert zero.p_hat == 1.0
    with pytest.raises(InvalidInputError):
        exc.cycle_count_deviation(P3, 0.1, 0.0, 10.0, 10, seed=1, mean_tau_value=0.67)


def test_simulated_cycles_are_cut_like_paths():
    # stream 0 is a path cut at its returns; the first cycle is burn-in
    cyc = exc.simulate_cycles(P3, 0.1, 5, seed=9, dt=0.01)
    path = sample_path(P3, TimeGrid.over(20.0, 0.01), seed=9, replicate_id=0)
    _, stats = exc.detect_excursions(path, 0.1, 3.0)
    assert np.allclose(cyc.integrals, stats.cycle_integrals[1:6], rtol=1e-12, atol=1e-15)
    assert np.allclose(cyc.durations, stats.durations[1:6], rtol=1e-9)
