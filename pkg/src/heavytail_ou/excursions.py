"""Regeneration cycles of an OU path.

A cycle starts at a visit to 0, waits for the first upcrossing of level
``eps0`` (departure) and ends at the next downcrossing of 0 (return).
Crossings are located by linear interpolation inside the bracketing grid
cell.  Cycle integrals integrate the piecewise-linear interpolant of
``f_p(X)``, so splitting a cell at a crossing partitions that cell's
trapezoid contribution and the cycles plus the tail add up to the
trapezoid integral of the whole path.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np
from scipy import stats as sps

from .errors import EmptyDataError, InvalidInputError
from .ou import ModelParams, PathSample, fp_scalar, path_integral, power_code, transition_coefficients
from .rng import normal_pair, split_seed
from .stats import wilson_interval

SEEK_DEPART = 0
SEEK_RETURN = 1


@dataclass(frozen=True)
class ExcursionRecord:
    start_time: float
    depart_time: float
    return_time: float
    cycle_integral_raw: float

    @property
    def duration(self) -> float:
        return self.return_time - self.start_time


@dataclass(frozen=True, eq=False)
class CycleStats:
    n_cycles: int
    remainder_integral: float
    mean_duration: float
    durations: np.ndarray
    cycle_integrals: np.ndarray
    horizon: float
    total_integral: float


@nb.njit(inline="always", cache=True)
def _neumaier(total, comp, value):
    t = total + value
    if abs(total) >= abs(value):
        comp += (total - t) + value
    else:
        comp += (value - t) + total
    return t, comp


@nb.njit(cache=True, nogil=True)
def _detect(values, dt, t0, eps0, p):
    n = values.shape[0] - 1
    cap = n // 2 + 1
    starts = np.empty(cap)
    departs = np.empty(cap)
    returns = np.empty(cap)
    integrals = np.empty(cap)
    ncyc = 0
    phase = SEEK_DEPART
    acc = 0.0
    comp = 0.0
    start = t0
    depart = 0.0
    xa = values[0]
    fa = math.copysign(abs(xa) ** p, xa)
    for k in range(n):
        xb = values[k + 1]
        fb = math.copysign(abs(xb) ** p, xb)
        if phase == SEEK_DEPART:
            if xa < eps0 <= xb:
                depart = t0 + (k + (eps0 - xa) / (xb - xa)) * dt
                phase = SEEK_RETURN
            acc, comp = _neumaier(acc, comp, 0.5 * dt * (fa + fb))
        elif xa > 0.0 >= xb:
            theta = xa / (xa - xb)
            fmid = fa + theta * (fb - fa)
            acc, comp = _neumaier(acc, comp, 0.5 * theta * dt * (fa + fmid))
            ret = t0 + (k + theta) * dt
            starts[ncyc] = start
            departs[ncyc] = depart
            returns[ncyc] = ret
            integrals[ncyc] = acc + comp
            ncyc += 1
            acc = 0.5 * (1.0 - theta) * dt * (fmid + fb)
            comp = 0.0
            start = ret
            phase = SEEK_DEPART
        else:
            acc, comp = _neumaier(acc, comp, 0.5 * dt * (fa + fb))
        xa = xb
        fa = fb
    return starts[:ncyc], departs[:ncyc], returns[:ncyc], integrals[:ncyc], acc + comp


def detect_excursions(path: PathSample, eps0: float, p: float):
    """Split ``path`` into completed cycles and the trailing remainder.

    Returns ``(records, stats)``.  A path that never completes a cycle
    yields no records and a remainder equal to the whole integral.
    """
    eps0 = float(eps0)
    if not (math.isfinite(eps0) and eps0 > 0):
        raise InvalidInputError(f"eps0 must be positive, got {eps0}")
    g = path.grid
    starts, departs, returns, integrals, remainder = _detect(path.values, g.dt, g.t_start, eps0, float(p))
    records = [ExcursionRecord(*row) for row in zip(starts.tolist(), departs.tolist(),
                                                     returns.tolist(), integrals.tolist())]
    durations = returns - starts
    stats = CycleStats(
        n_cycles=len(records),
        remainder_integral=float(remainder),
        mean_duration=float(durations.mean()) if len(records) else float("nan"),
        durations=durations,
        cycle_integrals=integrals.copy(),
        horizon=g.horizon,
        total_integral=path_integral(path, p),
    )
    return records, stats


def count_completed(completion_times, T: float) -> int:
    """``N_T``: how many cumulative cycle completions fall in ``[0, T]``."""
    return int(np.searchsorted(np.asarray(completion_times, dtype=float), T, side="right"))


def cycle_integrals_scaled(stats: CycleStats, T: float, p: float | None = None) -> np.ndarray:
    """``C_i^T = C_i / T`` (rescaled-path cycle integrals)."""
    T = float(T)
    if not T > 0:
        raise InvalidInputError("T must be positive")
    return np.asarray(stats.cycle_integrals, dtype=float) / T


def default_eps0(gamma: float) -> float:
    """One tenth of the stationary standard deviation."""
    return 0.1 / math.sqrt(2.0 * gamma)


def default_dt(gamma: float) -> float:
    return 0.01 / gamma


# ---------------------------------------------------------------------------
# simulated cycles

#: cycles drawn per counter stream; each stream is one path cut at its returns
CYCLES_PER_STREAM = 1024


@dataclass(frozen=True, eq=False)
class CycleSample:
    """Consecutive cycles cut from simulated paths.

    Stream ``first_replicate + j`` supplies cycles ``j*K .. j*K+K-1`` with
    ``K = CYCLES_PER_STREAM``.  A path is cut exactly as
    :func:`detect_excursions` cuts it, so a cycle starts where the previous
    return step landed (a small negative overshoot), not at exactly 0.
    The first cycle of each stream starts at 0 instead and is discarded as
    burn-in.  Times are relative to the cycle start.
    """

    depart_times: np.ndarray
    durations: np.ndarray
    integrals: np.ndarray
    pre_depart_integrals: np.ndarray
    eps0: float
    dt: float
    truncated: int


@nb.njit(cache=True, nogil=True)
def _cycles_kernel(key0, key1, rep0, n, per_stream, a, s, dt, eps0, p, code, max_steps,
                   departs, durations, integrals, pre_integrals):
    truncated = 0
    i = 0
    stream = 0
    while i < n:
        rep = np.uint64(rep0 + stream)
        stream += 1
        xa = 0.0
        fa = 0.0
        k = 0
        z1 = 0.0
        # the part of the return step past the crossing opens the next cycle
        carry = 0.0
        t0 = 0.0
        kept = -1
        while kept < per_stream and i < n:
            acc = carry
            comp = 0.0
            pre = 0.0
            depart = math.nan
            phase = SEEK_DEPART
            done = False
            k_end = k + max_steps
            while k < k_end:
                if k & 1 == 0:
                    z, z1 = normal_pair(key0, key1, rep, np.uint64(k >> 1))
                else:
                    z = z1
                xb = a * xa + s * z
                fb = fp_scalar(xb, p, code)
                if phase == SEEK_DEPART:
                    if xa < eps0 <= xb:
                        theta = (eps0 - xa) / (xb - xa)
                        depart = (k + theta) * dt - t0
                        fmid = fa + theta * (fb - fa)
                        pre = acc + comp + 0.5 * theta * dt * (fa + fmid)
                        phase = SEEK_RETURN
                    acc, comp = _neumaier(acc, comp, 0.5 * dt * (fa + fb))
                elif xa > 0.0 >= xb:
                    theta = xa / (xa - xb)
                    fmid = fa + theta * (fb - fa)
                    acc, comp = _neumaier(acc, comp, 0.5 * theta * dt * (fa + fmid))
                    carry = 0.5 * (1.0 - theta) * dt * (fmid + fb)
                    t_ret = (k + theta) * dt
                    done = True
                else:
                    acc, comp = _neumaier(acc, comp, 0.5 * dt * (fa + fb))
                xa = xb
                fa = fb
                k += 1
                if done:
                    break
            if kept >= 0:
                departs[i] = depart
                integrals[i] = acc + comp
                pre_integrals[i] = pre
                durations[i] = t_ret - t0 if done else math.nan
                i += 1
            kept += 1
            if not done:
                # the chain lost its regeneration point; start a fresh stream
                truncated += 1
                break
            t0 = t_ret
    return truncated


def simulate_cycles(params: ModelParams, eps0: float, n_cycles: int, seed: int,
                    dt: float | None = None, first_replicate: int = 0,
                    max_steps: int = 50_000_000) -> CycleSample:
    """Simulate ``n_cycles`` regeneration cycles (see :class:`CycleSample`)."""
    eps0 = float(eps0)
    if not eps0 > 0:
        raise InvalidInputError("eps0 must be positive")
    dt = default_dt(params.gamma) if dt is None else float(dt)
    a, s = transition_coefficients(params.gamma, dt)
    k0, k1 = split_seed(seed)
    n = int(n_cycles)
    out = [np.full(n, np.nan) for _ in range(4)]
    truncated = _cycles_kernel(k0, k1, int(first_replicate), n, CYCLES_PER_STREAM, a, s, dt,
                               eps0, float(params.p), power_code(params.p), int(max_steps), *out)
    return CycleSample(out[0], out[1], out[2], out[3], eps0, dt, int(truncated))


@dataclass(frozen=True)
class TauStatistics:
    n: int
    mean_tau: float
    var_tau: float
    mean_ci: tuple[float, float]
    mgf_at_1: float
    mgf_ci: tuple[float, float]


def tau_statistics(durations, confidence: float = 0.95) -> TauStatistics:
    """Sample moments of cycle durations and the empirical ``E[exp(tau)]``.

    The MGF estimate is dominated by the longest cycles; its interval is a
    normal approximation and should be read as indicative only.
    """
    d = np.asarray(durations, dtype=float)
    d = d[np.isfinite(d)]
    if d.size == 0:
        raise EmptyDataError("no cycle durations")
    z = sps.norm.ppf(0.5 + confidence / 2)
    n = d.size
    mean = math.fsum(d) / n
    var = float(np.var(d, ddof=1)) if n > 1 else 0.0
    half = z * math.sqrt(var / n)
    e = np.exp(d)
    mgf = math.fsum(e) / n
    mgf_half = z * (float(np.std(e, ddof=1)) / math.sqrt(n) if n > 1 else 0.0)
    if n > 1:
        warnings.warn("empirical E[exp(tau)] is sensitive to the heaviest cycles", stacklevel=2)
    return TauStatistics(n, mean, var, (mean - half, mean + half), mgf, (mgf - mgf_half, mgf + mgf_half))


@lru_cache(maxsize=64)
def mean_tau(gamma: float, p: float, eps0: float, dt: float, n_cycles: int = 1_000_000,
             seed: int = 0x5EED_7A0) -> tuple[float, float]:
    """High-budget estimate of ``E[tau]`` with its standard error (cached)."""
    sample = simulate_cycles(ModelParams(gamma, p), eps0, n_cycles, seed, dt)
    d = sample.durations[np.isfinite(sample.durations)]
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))


# ---------------------------------------------------------------------------
# number of completed cycles on [0, T]


@nb.njit(cache=True, nogil=True)
def _count_kernel(key0, key1, rep0, n, n_steps, a, s, eps0, counts):
    for i in range(n):
        rep = np.uint64(rep0 + i)
        xa = 0.0
        phase = SEEK_DEPART
        c = 0
        z1 = 0.0
        for k in range(n_steps):
            if k & 1 == 0:
                z, z1 = normal_pair(key0, key1, rep, np.uint64(k >> 1))
            else:
                z = z1
            xb = a * xa + s * z
            if phase == SEEK_DEPART:
                if xa < eps0 <= xb:
                    phase = SEEK_RETURN
            elif xa > 0.0 >= xb:
                c += 1
                phase = SEEK_DEPART
            xa = xb
        counts[i] = c
    return counts


def cycle_counts(params: ModelParams, eps0: float, T: float, n_replicates: int, seed: int,
                 dt: float | None = None, first_replicate: int = 0) -> np.ndarray:
    """``N_T`` for independent paths started at 0."""
    dt = default_dt(params.gamma) if dt is None else float(dt)
    n_steps = int(round(T / dt))
    a, s = transition_coefficients(params.gamma, dt)
    k0, k1 = split_seed(seed)
    counts = np.empty(int(n_replicates), dtype=np.int64)
    return _count_kernel(k0, k1, int(first_replicate), int(n_replicates), n_steps, a, s,
                         float(eps0), counts)


@dataclass(frozen=True)
class CountDeviation:
    T: float
    eps_bar: float
    mean_tau: float
    interval: tuple[float, float]
    n_replicates: int
    n_hits: int
    p_hat: float
    ci: tuple[float, float]
    log_rate: float
    log_rate_se: float
    bound_only: bool


def cycle_count_deviation(params: ModelParams, eps0: float, eps_bar: float, T: float,
                          n_replicates: int, seed: int, dt: float | None = None,
                          mean_tau_value: float | None = None) -> CountDeviation:
    """Estimate ``P(N_T not in (T(1/E tau - eps_bar), T(1/E tau + eps_bar)))``.

    ``log_rate`` is ``log(p_hat)/T``.  Without hits it is computed from the
    upper Wilson bound and ``bound_only`` is set.
    """
    eps_bar = float(eps_bar)
    if not eps_bar > 0:
        raise InvalidInputError("eps_bar must be positive")
    dt = default_dt(params.gamma) if dt is None else float(dt)
    if mean_tau_value is None:
        mean_tau_value = mean_tau(params.gamma, params.p, float(eps0), dt)[0]
    rate = 1.0 / mean_tau_value
    lo, hi = T * (rate - eps_bar), T * (rate + eps_bar)
    if T > 0:
        counts = cycle_counts(params, eps0, T, n_replicates, seed, dt)
    else:
        counts = np.zeros(int(n_replicates), dtype=np.int64)
    outside = (counts <= lo) | (counts >= hi)
    hits = int(outside.sum())
    n = int(n_replicates)
    p_hat = hits / n
    ci = wilson_interval(hits, n)
    if T <= 0:
        log_rate, se, bound_only = float("nan"), float("nan"), False
    elif hits == 0:
        log_rate, se, bound_only = math.log(ci[1]) / T, float("nan"), True
    else:
        log_rate = math.log(p_hat) / T
        se = math.sqrt((1.0 - p_hat) / (n * p_hat)) / T
        bound_only = False
    return CountDeviation(float(T), eps_bar, mean_tau_value, (lo, hi), n, hits, p_hat, ci,
                          log_rate, se, bound_only)


def lag1_autocorrelation(x) -> tuple[float, float]:
    """Lag-1 sample autocorrelation and its standard error under independence."""
    x = np.asarray(x, dtype=float)
    if x.size < 3:
        raise EmptyDataError("need at least three values")
    y = x - x.mean()
    r = float(np.dot(y[:-1], y[1:]) / np.dot(y, y))
    return r, 1.0 / math.sqrt(x.size)
