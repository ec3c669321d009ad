"""Monte Carlo estimates of tail and window probabilities of ``L_T^p``.

All estimators draw replicate ``i`` from Philox stream ``(seed, i)``, so an
estimate is a pure function of its inputs and seed.  Thresholds evaluated on
the same seed see the same paths, which makes nested events exactly ordered.

Importance sampling adds a deterministic drift ``g_k`` to each exact
transition, ``x_{k+1} = a x_k + s Z_k + g_k``.  For a mixture of ``M`` drifts
the replicate ``i`` uses component ``i mod M`` and receives the balance
weight ``1 / sum_j c_j L_j`` with ``c_j`` the share of replicates on
component ``j`` and ``L_j = exp(sum_k g^j_k R_k / s - (g^j_k)^2 / (2 s^2))``
evaluated on the realised residuals ``R_k = (x_{k+1} - a x_k) / s``.  This
is the exact likelihood ratio of the discrete Gaussian chain, so the
weighted estimator is unbiased for any budget.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import InvalidInputError
from .excursions import simulate_cycles
from .instanton import InstantonSolution
from .ou import ModelParams, fp_scalar, power_code, transition_coefficients
from .rng import derive_seed, normal_pair, split_seed
from .stats import Z95, TailEstimate, wilson_interval

#: step used by the tail estimators unless a caller overrides it
TAIL_DT = 0.05


def tail_dt(gamma: float) -> float:
    return TAIL_DT / gamma


@nb.njit(cache=True, nogil=True)
def _integral_kernel(key0, key1, rep0, n, n_steps, a, s, dt, p, code, x0, controls, shares,
                     integrals, log_weights):
    """Trapezoid integral of ``f_p`` per replicate, optionally under a drift mixture."""
    m = controls.shape[0]
    width = controls.shape[1] if m > 0 else 0
    resid = np.empty(width)
    log_shares = np.log(shares) if m > 0 else np.empty(0)
    lse = np.empty(m)
    for i in range(n):
        rep_id = rep0 + i
        rep = np.uint64(rep_id)
        comp_id = rep_id % m if m > 0 else 0
        x = x0
        f_first = fp_scalar(x, p, code)
        acc = 0.0
        comp = 0.0
        z1 = 0.0
        f = f_first
        for k in range(n_steps):
            if k & 1 == 0:
                z, z1 = normal_pair(key0, key1, rep, np.uint64(k >> 1))
            else:
                z = z1
            if k < width:
                g = controls[comp_id, k]
                x = a * x + s * z + g
                resid[k] = z + g / s
            else:
                x = a * x + s * z
            f = fp_scalar(x, p, code)
            if k < n_steps - 1:
                t = acc + f
                if abs(acc) >= abs(f):
                    comp += (acc - t) + f
                else:
                    comp += (f - t) + acc
                acc = t
        integrals[i] = dt * ((acc + comp) + 0.5 * (f_first + f))
        if m > 0:
            top = -math.inf
            for j in range(m):
                v = 0.0
                for k in range(width):
                    g = controls[j, k]
                    v += g * resid[k] / s - g * g / (2.0 * s * s)
                lse[j] = log_shares[j] + v
                if lse[j] > top:
                    top = lse[j]
            tot = 0.0
            for j in range(m):
                tot += math.exp(lse[j] - top)
            log_weights[i] = -(top + math.log(tot))
        else:
            log_weights[i] = 0.0


def _component_shares(n: int, m: int) -> np.ndarray:
    if m == 0:
        return np.ones(0)
    counts = np.full(m, n // m, dtype=float)
    counts[: n % m] += 1
    if np.any(counts == 0):
        raise InvalidInputError(f"need at least one replicate per mixture component ({m})")
    return counts / n


def path_integrals(params: ModelParams, horizon: float, n_samples: int, seed: int,
                   dt: float | None = None, noise: float = 1.0, x0: float = 0.0,
                   controls=None, first_replicate: int = 0, workers: int = 1):
    """``int_0^horizon f_p(X_t) dt`` for each replicate and its log-weight.

    ``controls`` is an ``(M, K)`` array of per-step drift increments applied
    to the first ``K`` steps (``None`` for plain sampling).  ``workers``
    splits the replicate range into contiguous chunks run on threads; the
    outputs do not depend on it.
    """
    n = int(n_samples)
    if n < 1:
        raise InvalidInputError("n_samples must be >= 1")
    if not (math.isfinite(horizon) and horizon > 0):
        raise InvalidInputError("horizon must be positive")
    dt = tail_dt(params.gamma) if dt is None else float(dt)
    n_steps = max(1, int(round(horizon / dt)))
    dt = horizon / n_steps
    a, s = transition_coefficients(params.gamma, dt, noise)
    controls = np.zeros((0, 0)) if controls is None else np.ascontiguousarray(controls, dtype=float)
    if controls.ndim != 2 or controls.shape[1] > n_steps:
        raise InvalidInputError("controls must be (M, K) with K <= number of steps")
    shares = _component_shares(n, controls.shape[0])
    k0, k1 = split_seed(seed)
    integrals = np.empty(n)
    log_w = np.empty(n)
    bounds = np.linspace(0, n, max(1, int(workers)) + 1).astype(int)

    def run(lo, hi):
        if hi > lo:
            _integral_kernel(k0, k1, int(first_replicate) + lo, hi - lo, n_steps, a, s, dt,
                             float(params.p), power_code(params.p), float(x0), controls, shares,
                             integrals[lo:hi], log_w[lo:hi])

    if len(bounds) == 2:
        run(0, n)
    else:
        with ThreadPoolExecutor(len(bounds) - 1) as pool:
            list(pool.map(run, bounds[:-1], bounds[1:]))
    return integrals, log_w


def time_averages(params: ModelParams, T: float, n_samples: int, seed: int,
                  dt: float | None = None, workers: int = 1) -> np.ndarray:
    """``L_T^p`` for replicates ``0..n_samples-1`` of stream ``seed``."""
    integrals, _ = path_integrals(params, T, n_samples, seed, dt, workers=workers)
    return integrals / T


def _check_T(T):
    T = float(T)
    if not (math.isfinite(T) and T > 0):
        raise InvalidInputError("T must be positive")
    return T


def estimate_tail(params: ModelParams, x: float, T: float, n_samples: int, seed: int,
                  dt: float | None = None, workers: int = 1) -> TailEstimate:
    """Naive estimate of ``P(L_T^p >= x)``."""
    return estimate_tails(params, [x], T, n_samples, seed, dt, workers)[0]


def estimate_tails(params: ModelParams, xs, T: float, n_samples: int, seed: int,
                   dt: float | None = None, workers: int = 1) -> list[TailEstimate]:
    """Tail estimates at several thresholds from one shared sample."""
    T = _check_T(T)
    xs = [float(x) for x in xs]
    if any(math.isnan(x) for x in xs):
        raise InvalidInputError("threshold is NaN")
    L = time_averages(params, T, n_samples, seed, dt, workers)
    return [TailEstimate.from_counts(x, T, int(np.count_nonzero(L >= x)), L.size, params.p)
            for x in xs]


def estimate_window(params: ModelParams, x: float, delta: float, T: float, n_samples: int,
                    seed: int, dt: float | None = None, workers: int = 1) -> TailEstimate:
    """Naive estimate of ``P(x - delta < L_T^p < x + delta)``."""
    T = _check_T(T)
    delta = float(delta)
    if not delta > 0:
        raise InvalidInputError("delta must be positive")
    L = time_averages(params, T, n_samples, seed, dt, workers)
    hits = int(np.count_nonzero((L > x - delta) & (L < x + delta)))
    return TailEstimate.from_counts(float(x), T, hits, L.size, params.p)


def calibrate_threshold(params: ModelParams, T: float, target: float, n_pilot: int, seed: int,
                        dt: float | None = None) -> float:
    """Threshold whose exceedance probability is about ``target``.

    Uses the empirical upper ``target`` quantile of a pilot sample drawn on
    a sub-seed distinct from any estimation seed derived the same way.
    """
    if not 0 < target < 1:
        raise InvalidInputError("target must lie in (0, 1)")
    if n_pilot * target < 10:
        raise InvalidInputError("pilot too small to locate the quantile")
    L = time_averages(params, _check_T(T), n_pilot, derive_seed(seed, "pilot", float(T)), dt)
    return float(np.quantile(L, 1.0 - target))


def single_excursion_tail(params: ModelParams, eps0: float, x: float, T: float,
                          n_cycles: int, seed: int, dt: float | None = None) -> TailEstimate:
    """Estimate ``P(C_1 / T >= x)`` from independent cycles started at 0."""
    T = _check_T(T)
    cyc = simulate_cycles(params, eps0, n_cycles, seed, dt)
    # a truncated cycle never completed, so its integral so far is all it has
    hits = int(np.count_nonzero(cyc.integrals / T >= x))
    return TailEstimate.from_counts(float(x), T, hits, int(n_cycles), params.p)


# ---------------------------------------------------------------------------
# importance sampling


@dataclass(frozen=True)
class ISEstimate:
    p_hat: float
    effective_sample_size: float
    weight_variance: float
    n_samples: int
    n_hits: int
    ci_low: float
    ci_high: float
    std_error: float
    flagged: bool
    n_components: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def log_p(self) -> float:
        return math.log(self.p_hat) if self.p_hat > 0 else -math.inf


def weighted_estimate(hits: np.ndarray, log_w: np.ndarray, n_components: int = 1,
                      ess_floor: float = 10.0) -> ISEstimate:
    """Unbiased weighted mean of an indicator with a normal 95% interval.

    The effective sample size is Kish's ``(sum w)^2 / sum w^2`` over the
    hits, the samples that actually carry the estimate.
    """
    hits = np.asarray(hits, dtype=bool)
    n = hits.size
    if n < 2:
        raise InvalidInputError("need at least two samples")
    w = np.exp(np.asarray(log_w, dtype=float))
    vals = np.where(hits, w, 0.0)
    p_hat = math.fsum(vals) / n
    var = math.fsum((vals - p_hat) ** 2) / (n - 1)
    se = math.sqrt(var / n)
    wh = w[hits]
    if wh.size:
        ess = math.fsum(wh) ** 2 / math.fsum(wh * wh)
    else:
        ess = 0.0
    n_hits = int(hits.sum())
    if n_hits == n and np.all(w == 1.0):
        lo, hi = 1.0, 1.0
    elif np.all(w == 1.0):
        lo, hi = wilson_interval(n_hits, n)
    else:
        lo, hi = max(0.0, p_hat - Z95 * se), p_hat + Z95 * se
    wvar = float(np.var(w, ddof=1))
    return ISEstimate(p_hat, ess, wvar, n, n_hits, lo, hi, se, bool(ess < ess_floor), n_components)


def instanton_controls(phi: np.ndarray, phi_dt: float, gamma: float, scale: float,
                       sim_dt: float, n_steps: int, shifts=(0.0,)) -> np.ndarray:
    """Per-step drift increments that make the mean path follow ``scale * phi``.

    ``phi`` lives on ``[0, H]`` with step ``phi_dt``; beyond ``H`` the mean
    path is left to relax, which costs nothing.  Each entry of ``shifts``
    delays the profile by that much time (negative values advance it).
    """
    phi = np.asarray(phi, dtype=float)
    H = phi_dt * (phi.size - 1)
    a = math.exp(-gamma * sim_dt)
    t_src = phi_dt * np.arange(phi.size)
    rows = []
    for shift in shifts:
        width = min(n_steps, int(math.ceil((H + max(shift, 0.0)) / sim_dt)))
        t = sim_dt * np.arange(width + 1) - shift
        path = np.interp(t, t_src, phi, left=0.0, right=phi[-1])
        path[t < 0] = 0.0
        tail = t > H
        path[tail] = phi[-1] * np.exp(-gamma * (t[tail] - H))
        path = scale * path
        # the walk starts at 0 even when the profile is advanced
        path[0] = 0.0
        rows.append(path[1:] - a * path[:-1])
    width = max(r.size for r in rows)
    out = np.zeros((len(rows), width))
    for j, r in enumerate(rows):
        out[j, : r.size] = r
    # zero drift would be reproduced by the tail anyway; trim for speed
    return out


def default_shifts(instanton: InstantonSolution, horizon: float, gamma: float) -> np.ndarray:
    """Offsets that sweep the instanton peak across ``[0, horizon]`` at spacing ``1/gamma``."""
    peak = float(instanton.times[np.argmax(np.abs(instanton.phi))])
    return np.arange(0.0, horizon + 0.5 / gamma, 1.0 / gamma) - peak


def tilted_tail_IS(params: ModelParams, x: float, T: float, n_samples: int, seed: int,
                   instanton: InstantonSolution | None, dt: float | None = None,
                   shifts=None, workers: int = 1) -> ISEstimate:
    """Importance-sampled ``P(L_T^p >= x)`` with drift along the rescaled instanton.

    The level-one profile is scaled by ``(x T)^(1/p)`` so that its
    observable integral equals the target ``x T``.  The excursion can occur
    anywhere in ``[0, T]``, so by default the proposal mixes copies of the
    drift whose peaks tile the horizon; ``shifts=(0.0,)`` keeps the single
    drift on the leading window.  ``instanton=None`` is the null tilt and
    reproduces :func:`estimate_tail` hit for hit.
    """
    T = _check_T(T)
    dt = tail_dt(params.gamma) if dt is None else float(dt)
    n_steps = max(1, int(round(T / dt)))
    sim_dt = T / n_steps
    if instanton is None:
        controls = None
        m = 1
    else:
        if not x > 0:
            raise InvalidInputError("a tilted estimate needs x > 0")
        level = instanton.constraint_signed if instanton.constraint == "signed" else instanton.constraint_abs
        scale = (x * T / level) ** (1.0 / params.p)
        if shifts is None:
            shifts = default_shifts(instanton, T, params.gamma)
        controls = instanton_controls(instanton.phi, instanton.grid.dt, params.gamma, scale,
                                      sim_dt, n_steps, shifts)
        m = controls.shape[0]
    integrals, log_w = path_integrals(params, T, n_samples, seed, sim_dt, controls=controls,
                                      workers=workers)
    est = weighted_estimate(integrals / T >= x, log_w, m)
    return est


# ---------------------------------------------------------------------------
# small-noise sandwich


@dataclass(frozen=True)
class SmallNoiseRow:
    eps: float
    p_hat: float
    eps2_log_p: float
    std_error: float
    n_hits: int
    bound_only: bool
    method: str
    effective_sample_size: float


def _window_hits(F, lo, hi):
    return (F > lo) & (F < hi)


def small_noise_check(params: ModelParams, H: float, interval, eps_list, n_samples: int,
                      seed: int, dt: float = 0.01, method: str = "naive",
                      instanton: InstantonSolution | None = None, shifts=(0.0,),
                      workers: int = 1) -> list[SmallNoiseRow]:
    """Rows ``(eps, eps^2 log p_hat)`` for ``P(F_H in (lo, hi))`` at noise ``eps``.

    The process ``dY = -gamma Y dt + eps dW`` is simulated directly.  With
    ``method="is"`` the paths carry a drift toward ``instanton`` rescaled to
    the cheapest point of the interval, ``max(lo, 0)`` capped inside.
    """
    lo, hi = (float(v) for v in interval)
    if not lo < hi:
        raise InvalidInputError("interval must satisfy lo < hi")
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise InvalidInputError("eps_list must be positive and decreasing")
    if method not in ("naive", "is"):
        raise InvalidInputError(f"unknown method {method!r}")
    n_steps = max(1, int(round(H / dt)))
    sim_dt = H / n_steps
    rows = []
    for i, eps in enumerate(eps_list):
        sub = derive_seed(seed, "small-noise", i)
        controls = None
        if method == "is":
            if instanton is None:
                raise InvalidInputError("method='is' needs an instanton")
            target = lo if lo > 0 else min(hi, 1.0) / 2
            level = instanton.constraint_abs
            scale = (target / level) ** (1.0 / params.p)
            controls = instanton_controls(instanton.phi, instanton.grid.dt, params.gamma, scale,
                                          sim_dt, n_steps, shifts)
        F, log_w = path_integrals(params, H, n_samples, sub, sim_dt, noise=eps,
                                  controls=controls, workers=workers)
        hits = _window_hits(F, lo, hi)
        if method == "naive":
            n_hits = int(hits.sum())
            p_hat = n_hits / n_samples
            ess = float(n_hits)
            if n_hits:
                se_p = math.sqrt(p_hat * (1 - p_hat) / n_samples)
                value = eps * eps * math.log(p_hat)
                se = eps * eps * se_p / p_hat
                bound = False
            else:
                value = eps * eps * math.log(wilson_interval(0, n_samples)[1])
                se, bound = float("nan"), True
        else:
            est = weighted_estimate(hits, log_w, controls.shape[0])
            p_hat, n_hits, ess = est.p_hat, est.n_hits, est.effective_sample_size
            if p_hat > 0:
                value = eps * eps * math.log(p_hat)
                se = eps * eps * est.std_error / p_hat
                bound = False
            else:
                value, se, bound = float("nan"), float("nan"), True
        rows.append(SmallNoiseRow(eps, p_hat, value, se, n_hits, bound, method, ess))
    return rows


# ---------------------------------------------------------------------------
# convergence in T


@dataclass(frozen=True)
class RateFit:
    a: float
    b: float
    c: float
    rss: float
    reliable: bool
    reasons: tuple = ()


def fit_power_decay(T, y, c_grid=None) -> RateFit:
    """Least squares ``y = a + b T^(-c)`` with ``c`` scanned on ``(0, 1]``."""
    T = np.asarray(T, dtype=float)
    y = np.asarray(y, dtype=float)
    if T.size < 3:
        raise InvalidInputError("need at least three horizons")
    c_grid = np.linspace(0.01, 1.0, 100) if c_grid is None else np.asarray(c_grid, dtype=float)
    spread = float(y.max() - y.min())
    if spread <= 1e-14 * max(1.0, float(np.abs(y).max())):
        return RateFit(float(y.mean()), 0.0, float("nan"), 0.0, True)
    best = None
    for c in c_grid:
        X = np.column_stack((np.ones_like(T), T ** (-c)))
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        r = y - X @ coef
        rss = float(r @ r)
        if best is None or rss < best[0]:
            best = (rss, float(coef[0]), float(coef[1]), float(c))
    rss, a, b, c = best
    reasons = []
    if c in (float(c_grid[0]), float(c_grid[-1])):
        reasons.append("decay exponent at the edge of the scan")
    return RateFit(a, b, c, rss, not reasons, tuple(reasons))


def rate_convergence_fit(estimates, c_grid=None, noise_sigmas: float = 2.0):
    """Extrapolate ``scaled_rate(T)`` to ``T = infinity``.

    Returns ``(a, diagnostics)``.  The fit is flagged unreliable when the
    rates are not monotone in ``T`` beyond ``noise_sigmas`` standard errors
    or the exponent sits on the edge of the scan.
    """
    ests = sorted(estimates, key=lambda e: e.horizon_T)
    if len(ests) < 3:
        raise InvalidInputError("need at least three horizons")
    if any(e.n_hits == 0 for e in ests):
        raise InvalidInputError("every horizon needs at least one hit")
    if len({e.threshold_x for e in ests}) != 1:
        raise InvalidInputError("estimates must share the threshold x")
    T = np.array([e.horizon_T for e in ests])
    y = np.array([e.scaled_rate for e in ests])
    se = np.array([e.scaled_rate_se for e in ests])
    fit = fit_power_decay(T, y, c_grid)
    reasons = list(fit.reasons)
    steps = np.diff(y)
    joint = noise_sigmas * np.hypot(se[1:], se[:-1])
    direction = np.sign(steps[np.abs(steps) > joint])
    if direction.size and not (np.all(direction > 0) or np.all(direction < 0)):
        reasons.append("scaled rates are not monotone in T beyond noise")
    diag = {"a": fit.a, "b": fit.b, "c": fit.c, "rss": fit.rss, "reliable": not reasons,
            "reasons": reasons, "T": T.tolist(), "scaled_rate": y.tolist(),
            "scaled_rate_se": se.tolist()}
    return fit.a, diag


def wilson_coverage(p: float, n: int, repetitions: int, seed: int) -> float:
    """Fraction of Wilson 95% intervals that contain ``p`` on Bernoulli streams."""
    rng = np.random.default_rng(seed)
    hits = rng.binomial(int(n), float(p), size=int(repetitions))
    covered = 0
    for h in hits:
        lo, hi = wilson_interval(int(h), int(n))
        covered += lo <= p <= hi
    return covered / repetitions
