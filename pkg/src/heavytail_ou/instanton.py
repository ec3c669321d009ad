"""Constrained minimisation of the OU action.

Discretisation: uniform grid ``t_k = k*dt`` on ``[0, H]``, ``phi_0`` fixed
to the boundary value, midpoint rule for the action and trapezoid rule for
the constraint.  With ``a = 1/dt + gamma/2`` and ``b = 1/dt - gamma/2`` the
action is ``(dt/2) sum_k (a phi_{k+1} - b phi_k)^2``, a quadratic
``u' K u / 2 + l' u + const`` in the free nodes ``u = phi_1..phi_n``.  ``K``
is tridiagonal with negative off-diagonal, so ``K^{-1}`` is entrywise
positive.

For ``phi_0 = 0`` the action is 2-homogeneous and the constraint
p-homogeneous, and the problem reduces to minimising the scale-free ratio
``R = action / Fbar**(2/p)``.  A unit preconditioned gradient step on ``R``
(preconditioner ``K^{-1}``) is ``u <- K^{-1} grad Fbar(u)`` followed by
renormalisation, and by convexity of ``Fbar`` it never increases ``R``.
The same step generalises to ``phi_0 != 0``: move from the free-relaxation
path ``u_c`` (zero action) along ``K^{-1} grad Fbar(u)`` until the
constraint is met.  A bordered Newton solve on the stationarity system
then polishes the iterate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import optimize

from .errors import ExtrapolationError, InvalidInputError, OutOfRegimeError
from .ou import ModelParams, TimeGrid, action_JH, constraint_F, constraint_Fbar
from .rng import derive_seed

GRAD_FLOOR = 1e-12


@dataclass(frozen=True)
class SolverOptions:
    n_starts: int = 8
    seed: int = 20240607
    max_iter: int = 500
    rtol: float = 1e-15
    newton_iter: int = 400
    el_tol: float = 1e-6
    method: str = "ratio"


@dataclass(frozen=True, eq=False)
class InstantonSolution:
    horizon_H: float
    grid: TimeGrid
    phi: np.ndarray
    action: float
    constraint_signed: float
    constraint_abs: float
    multiplier: float
    el_residual: float
    converged: bool
    boundary_x0: float = 0.0
    level: float = 1.0
    constraint: str = "absolute"
    el_residual_continuum: float = float("nan")
    iterations: int = 0
    start_index: int = -1
    diagnostics: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times


class _Problem:
    """Discrete action/constraint pair for one (gamma, p, H, n, phi_0)."""

    def __init__(self, gamma: float, p: float, H: float, n_grid: int, x0: float,
                 constraint: str = "absolute"):
        self.gamma, self.p, self.H, self.n, self.x0 = gamma, p, H, n_grid, x0
        self.dt = dt = H / n_grid
        self.constraint = constraint
        self.a = a = 1.0 / dt + gamma / 2
        self.b = b = 1.0 / dt - gamma / 2
        n = n_grid
        self.diag = np.full(n, dt * (a * a + b * b))
        self.diag[-1] = dt * a * a
        self.off = np.full(n - 1, -dt * a * b)
        self.lin = np.zeros(n)
        self.lin[0] = -dt * a * b * x0
        self.w = np.full(n, dt)
        self.w[-1] = dt / 2
        self.c_head = 0.5 * dt * abs(x0) ** p
        self.c_head_signed = 0.5 * dt * math.copysign(abs(x0) ** p, x0) if x0 else 0.0
        ab = np.zeros((2, n))
        ab[0, 1:] = self.off
        ab[1] = self.diag
        self.chol = sla.cholesky_banded(ab)
        # zero-action reference: free relaxation from x0
        self.center = -self.solveK(self.lin)

    def solveK(self, r):
        return sla.cho_solve_banded((self.chol, False), r)

    def Ku(self, u):
        out = self.diag * u
        out[:-1] += self.off * u[1:]
        out[1:] += self.off * u[:-1]
        return out

    def action(self, u):
        # sum of squares rather than u'Ku: the quadratic form cancels ~1/dt^2
        # of magnitude, and the translation direction needs ~1e-12 resolution
        r = self.a * u
        r[0] -= self.b * self.x0
        r[1:] -= self.b * u[:-1]
        return 0.5 * self.dt * math.fsum(r * r)

    def action_grad(self, u):
        return self.Ku(u) + self.lin

    def cons(self, u):
        if self.constraint == "absolute":
            return float(self.w @ np.abs(u) ** self.p) + self.c_head
        return float(self.w @ (np.sign(u) * np.abs(u) ** self.p)) + self.c_head_signed

    def cons_grad(self, u):
        m = np.maximum(np.abs(u), GRAD_FLOOR) ** (self.p - 1)
        if self.constraint == "absolute":
            return self.p * self.w * m * np.sign(u)
        return self.p * self.w * m

    def cons_hess_diag(self, u):
        m = self.p * (self.p - 1) * self.w * np.maximum(np.abs(u), GRAD_FLOOR) ** (self.p - 2)
        if self.constraint == "absolute":
            return m
        return m * np.sign(u)

    def full(self, u):
        return np.concatenate(([self.x0], u))

    def multiplier(self, u):
        g = self.cons_grad(u)
        return float(self.action_grad(u) @ g / (g @ g))

    def residual(self, u, mu):
        """Discrete stationarity residual, per node, in units of phi''."""
        return (self.action_grad(u) - mu * self.cons_grad(u)) / self.dt


def _ray_to_level(prob: _Problem, d: np.ndarray, level: float, t_hi: float | None = None):
    """Point ``center + t d`` (t > 0) on the constraint surface."""
    if prob.x0 == 0.0:
        val = prob.cons(d)
        if val <= 0:
            return None
        return d * (level / val) ** (1.0 / prob.p)
    c = prob.center
    f = lambda t: prob.cons(c + t * d) - level
    if f(0.0) >= 0:
        return c.copy()
    hi = 1.0 if t_hi is None else t_hi
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e12:
            return None
    t = optimize.brentq(f, 0.0, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    return c + t * d


def _descend(prob: _Problem, u: np.ndarray, level: float, opts: SolverOptions):
    """Monotone fixed-point descent; returns (u, action, iterations)."""
    A = prob.action(u)
    it = 0
    for it in range(1, opts.max_iter + 1):
        d = prob.solveK(prob.cons_grad(u))
        new = _ray_to_level(prob, d, level)
        if new is None:
            break
        A_new = prob.action(new)
        if A_new > A * (1 + 1e-14) + 1e-300:
            break
        done = A - A_new <= opts.rtol * abs(A)
        u, A = new, A_new
        if done:
            break
    return u, A, it


def _bordered_solve(prob: _Problem, hess_diag, shift, g, r, e):
    """Solve ``[[(1+shift)K - diag(hess), -g], [g', 0]] [x; nu] = [-r; -e]``."""
    n = prob.n
    ab = np.zeros((3, n))
    ab[0, 1:] = (1 + shift) * prob.off
    ab[1] = (1 + shift) * prob.diag - hess_diag
    ab[2, :-1] = (1 + shift) * prob.off
    x = sla.solve_banded((1, 1), ab, np.column_stack((r, g)), check_finite=False)
    x1, x2 = x[:, 0], x[:, 1]
    nu = (g @ x1 - e) / (g @ x2)
    return -x1 + nu * x2, nu


def _polish(prob: _Problem, u: np.ndarray, level: float, opts: SolverOptions):
    """Damped Newton on ``grad A = mu grad C``, ``C = level``.

    The damping adds ``shift * K`` to the Lagrangian Hessian; large shifts
    turn the step into a preconditioned gradient step.  A step is kept only
    if the action does not increase, which tames the nearly flat
    time-translation direction of long horizons.
    """
    A = prob.action(u)
    mu = prob.multiplier(u)
    shift = 1e-3
    it = 0
    for it in range(1, opts.newton_iter + 1):
        g = prob.cons_grad(u)
        r = prob.action_grad(u) - mu * g
        if np.abs(r[:-1]).max() / prob.dt <= 1e-12 * max(1.0, abs(mu)) or shift > 1e12:
            break
        try:
            step, _ = _bordered_solve(prob, mu * prob.cons_hess_diag(u), shift, g, r,
                                      prob.cons(u) - level)
        except (np.linalg.LinAlgError, ValueError):
            shift = max(shift * 10, 1e-6)
            continue
        trial = u + step
        if not np.all(np.isfinite(trial)):
            trial = None
        elif prob.x0 == 0.0:
            trial = _ray_to_level(prob, trial, level)
        else:
            # back onto the active constraint along the ray from the zero-cost path
            trial = _ray_to_level(prob, trial - prob.center, level)
        if trial is None:
            shift = max(shift * 10, 1e-6)
            continue
        A_trial = prob.action(trial)
        if A_trial <= A * (1 + 4e-16):
            u, A = trial, A_trial
            mu = prob.multiplier(u)
            shift = shift / 4 if shift > 1e-10 else 0.0
        else:
            shift = max(shift * 5, 1e-6)
    return u, mu, it


def _initial_paths(prob: _Problem, opts: SolverOptions, warm_start=None):
    t = prob.dt * np.arange(1, prob.n + 1)
    g, H = prob.gamma, prob.H
    starts = []
    if warm_start is not None:
        starts.append(np.asarray(warm_start, dtype=float)[1:].copy())
    base = t * np.exp(-g * t)
    if prob.x0 != 0.0:
        base = prob.center + base
    starts.append(base)
    for j in range(opts.n_starts):
        rng = np.random.default_rng(derive_seed(opts.seed, "start", j))
        # stratified so some start always sits near the optimal bump position
        center = (0.2 + 0.65 * (j + rng.uniform()) / opts.n_starts) * H
        width = min(rng.uniform(0.5, 2.0) / g, H / 3)
        bump = np.exp(-(((t - center) / width) ** 2))
        if prob.constraint == "signed" and j % 2 == 1:
            # sign-flipped start: a negative lobe ahead of the positive bump
            bump = bump - 0.8 * np.exp(-(((t - 0.5 * center) / width) ** 2))
        if prob.x0 != 0.0:
            bump = prob.center + bump * np.exp(-g * np.maximum(t - center, 0.0))
        starts.append(bump)
    return starts


def _continuum_residual(phi, dt, gamma, p, lam):
    d2 = (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / (dt * dt)
    m = phi[1:-1]
    r = d2 - gamma * gamma * m + lam * p * np.sign(m) * np.abs(m) ** (p - 1)
    return float(np.abs(r).max())


def _solution(prob: _Problem, u, mu, level, iterations, start_index, opts, diagnostics):
    phi = prob.full(u)
    grid = TimeGrid(0.0, prob.dt, prob.n)
    res = prob.residual(u, mu)
    el = float(np.abs(res[:-1]).max())
    Fbar = constraint_Fbar(phi, grid, prob.p)
    cons = Fbar if prob.constraint == "absolute" else constraint_F(phi, grid, prob.p)
    converged = el <= opts.el_tol * max(1.0, abs(mu)) and cons >= level * (1 - 1e-8)
    diagnostics = dict(diagnostics, end_residual=float(abs(res[-1])))
    return InstantonSolution(
        horizon_H=prob.H, grid=grid, phi=phi,
        action=action_JH(phi, grid, prob.gamma).value,
        constraint_signed=constraint_F(phi, grid, prob.p), constraint_abs=Fbar,
        multiplier=mu, el_residual=el, converged=bool(converged),
        boundary_x0=prob.x0, level=level, constraint=prob.constraint,
        el_residual_continuum=_continuum_residual(phi, prob.dt, prob.gamma, prob.p, mu),
        iterations=iterations, start_index=start_index, diagnostics=diagnostics,
    )


def _check(params: ModelParams, H: float, n_grid: int, level: float):
    if not (math.isfinite(H) and H > 0):
        raise InvalidInputError("H must be positive")
    if int(n_grid) != n_grid or n_grid < 100:
        raise InvalidInputError("n_grid must be an integer >= 100")
    if not (math.isfinite(level) and level > 0):
        raise InvalidInputError(f"constraint level must be positive, got {level}")


def solve_finite_horizon(params: ModelParams, H: float, n_grid: int, boundary_x0: float = 0.0,
                         level: float = 1.0, opts: SolverOptions | None = None,
                         constraint: str = "absolute", warm_start=None) -> InstantonSolution:
    """Minimise the discrete action subject to ``Fbar >= level`` (or ``F``).

    Multi-start: the ``t exp(-gamma t)`` bump plus ``opts.n_starts``
    randomised bumps.  The lowest action wins; near-ties (1e-10) go to the
    lowest residual, then the lowest start index.
    """
    opts = opts or SolverOptions()
    level = float(level)
    _check(params, H, n_grid, level)
    if constraint not in ("absolute", "signed"):
        raise InvalidInputError(f"unknown constraint {constraint!r}")
    if opts.method == "augmented_lagrangian":
        return _solve_auglag(params, H, int(n_grid), float(boundary_x0), level, opts, constraint)
    prob = _Problem(params.gamma, params.p, float(H), int(n_grid), float(boundary_x0), constraint)
    # the homogeneous problem is solved at level 1 and rescaled exactly
    solve_level = 1.0 if prob.x0 == 0.0 else level
    candidates = []
    for idx, u0 in enumerate(_initial_paths(prob, opts, warm_start)):
        u = _ray_to_level(prob, u0, solve_level) if prob.x0 == 0.0 else u0
        if u is None:
            continue
        if prob.x0 != 0.0 and prob.cons(u) < solve_level:
            u = _ray_to_level(prob, u - prob.center, solve_level)
            if u is None:
                continue
        u, A, iters = _descend(prob, u, solve_level, opts)
        u, mu, newton_iters = _polish(prob, u, solve_level, opts)
        res = float(np.abs(prob.residual(u, mu)[:-1]).max())
        candidates.append((prob.action(u), res, idx, u, mu, iters, newton_iters))
    if not candidates:
        raise InvalidInputError("no feasible starting path")
    best_A = min(c[0] for c in candidates)
    near = [c for c in candidates if c[0] - best_A <= 1e-10 * max(1.0, abs(best_A))]
    A, res, idx, u, mu, iters, newton_iters = min(near, key=lambda c: (c[1], c[2]))
    if prob.x0 == 0.0 and level != 1.0:
        s = level ** (1.0 / prob.p)
        u = u * s
        mu = mu * s ** (2 - prob.p)
    diag = {"start_actions": [c[0] for c in sorted(candidates, key=lambda c: c[2])],
            "newton_iterations": newton_iters}
    return _solution(prob, u, mu, level, iters, idx, opts, diag)


def _solve_auglag(params, H, n_grid, x0, level, opts, constraint):
    """Augmented-Lagrangian cross-check (L-BFGS inner solves)."""
    prob = _Problem(params.gamma, params.p, H, n_grid, x0, constraint)
    u = _initial_paths(prob, SolverOptions(n_starts=0))[0]
    u = _ray_to_level(prob, u, level) if x0 == 0.0 else u
    mu, rho = 0.0, 10.0
    for _ in range(60):
        def fun(v):
            g = prob.cons(v) - level
            # inequality C >= level via the standard shifted penalty
            s = max(0.0, mu / rho - g)
            val = prob.action(v) + 0.5 * rho * s * s - 0.5 * mu * mu / rho
            grad = prob.action_grad(v) - rho * s * prob.cons_grad(v)
            return val, grad
        r = optimize.minimize(fun, u, jac=True, method="L-BFGS-B",
                              options={"maxiter": 20000, "ftol": 1e-15, "gtol": 1e-11})
        u = r.x
        g = prob.cons(u) - level
        mu = max(0.0, mu - rho * g)
        if abs(g) < 1e-10 * level:
            break
        rho = min(rho * 4, 1e8)
    mu_el = prob.multiplier(u)
    return _solution(prob, u, mu_el, level, 0, 0, opts, {"method": "augmented_lagrangian"})


# ---------------------------------------------------------------------------
# horizon sweep


@dataclass(frozen=True, eq=False)
class RatePrefactor:
    J_inf: float
    per_horizon: list
    extrapolation_model: dict
    tolerance_achieved: float
    solutions: list = field(default_factory=list, repr=False)


def fit_exponential_limit(H, J) -> dict:
    """Least-squares fit of ``J_H = J_inf + b exp(-beta H)``, ``b >= 0``.

    ``beta`` is profiled out: for fixed ``beta`` the model is linear.
    """
    H = np.asarray(H, dtype=float)
    J = np.asarray(J, dtype=float)
    if H.size < 2:
        raise InvalidInputError("need at least two horizons")
    scale = max(1.0, float(np.abs(J).max()))
    if float(J.max() - J.min()) <= 1e-14 * scale:
        return {"J_inf": float(J[-1]), "b": 0.0, "beta": float("inf"), "rss": 0.0}

    def linear(beta):
        X = np.column_stack((np.ones_like(H), np.exp(-beta * H)))
        coef, *_ = np.linalg.lstsq(X, J, rcond=None)
        if coef[1] < 0:
            coef = np.array([J.mean(), 0.0])
        r = J - X @ coef
        return coef, float(r @ r)

    betas = np.geomspace(1e-3, 50.0, 400) / H.min()
    rss = [linear(b)[1] for b in betas]
    i = int(np.argmin(rss))
    lo, hi = betas[max(i - 1, 0)], betas[min(i + 1, betas.size - 1)]
    res = optimize.minimize_scalar(lambda lb: linear(math.exp(lb))[1],
                                   bounds=(math.log(lo), math.log(hi)), method="bounded",
                                   options={"xatol": 1e-12})
    beta = math.exp(res.x) if res.fun <= rss[i] else betas[i]
    coef, r = linear(beta)
    return {"J_inf": float(coef[0]), "b": float(coef[1]), "beta": float(beta), "rss": r}


def extrapolate_Jinf(params: ModelParams, H_list=None, dt: float | None = None,
                     boundary_x0: float = 0.0, opts: SolverOptions | None = None,
                     monotone_tol: float = 1e-8) -> RatePrefactor:
    """Solve each horizon at a common step and extrapolate ``H -> infinity``."""
    g = params.gamma
    H_list = [5 / g, 10 / g, 20 / g, 40 / g] if H_list is None else [float(h) for h in H_list]
    if len(H_list) < 4:
        raise InvalidInputError("need at least four horizons to extrapolate")
    if any(b <= a for a, b in zip(H_list, H_list[1:])):
        raise InvalidInputError("H_list must be increasing")
    dt = 0.005 / g if dt is None else float(dt)
    sols = [solve_finite_horizon(params, H, max(100, int(round(H / dt))), boundary_x0, 1.0, opts)
            for H in H_list]
    J = [s.action for s in sols]
    for (h1, j1), (h2, j2) in zip(zip(H_list, J), zip(H_list[1:], J[1:])):
        if j2 > j1 + monotone_tol * max(1.0, abs(j1)):
            raise ExtrapolationError(f"J_H increased from H={h1} ({j1!r}) to H={h2} ({j2!r})")
    model = fit_exponential_limit(H_list, J)
    J_inf = model["J_inf"]
    return RatePrefactor(J_inf, list(zip(H_list, J)), model, abs(J[-1] - J_inf), sols)


def refinement_check(params: ModelParams, H: float, dt: float, boundary_x0: float = 0.0,
                     opts: SolverOptions | None = None, tol: float = 1e-4):
    """Solve at ``dt`` and ``dt/2``; return ``(J_dt, J_half, rel_gap, ok)``."""
    n = max(100, int(round(H / dt)))
    coarse = solve_finite_horizon(params, H, n, boundary_x0, opts=opts)
    fine = solve_finite_horizon(params, H, 2 * n, boundary_x0, opts=opts)
    gap = abs(coarse.action - fine.action) / abs(fine.action)
    return coarse.action, fine.action, gap, bool(gap <= tol)


def rate_function(x: float, prefactor, params: ModelParams) -> float:
    """``I(x) = J_inf |x|^(2/p)``; defined for p > 2 only."""
    if not params.subexponential:
        raise OutOfRegimeError(f"the subexponential rate function needs p > 2, got p={params.p}")
    J = prefactor.J_inf if isinstance(prefactor, RatePrefactor) else float(prefactor)
    return J * abs(float(x)) ** params.alpha


def gamma_scaling_check(p: float, gamma1: float, gamma2: float, H_list=(5, 10, 20, 40),
                        dt: float = 0.005, opts: SolverOptions | None = None) -> float:
    """Relative gap in ``J_inf(gamma2) = (gamma2/gamma1)^(1+2/p) J_inf(gamma1)``.

    Horizons and steps are given in units of ``1/gamma``.
    """
    def jinf(gamma):
        pre = extrapolate_Jinf(ModelParams(gamma, p), [h / gamma for h in H_list], dt / gamma,
                               opts=opts)
        return pre.J_inf

    j1 = jinf(gamma1)
    j2 = j1 if gamma2 == gamma1 else jinf(gamma2)
    return abs(j2 - (gamma2 / gamma1) ** (1 + 2 / p) * j1) / j2


def constraint_equivalence_check(params: ModelParams, H: float, n_grid: int,
                                 opts: SolverOptions | None = None):
    """Solve with the signed and the absolute constraint; return both and the gap."""
    signed = solve_finite_horizon(params, H, n_grid, opts=opts, constraint="signed")
    absolute = solve_finite_horizon(params, H, n_grid, opts=opts, constraint="absolute")
    return signed, absolute, abs(signed.action - absolute.action)


def connector_cost(eps0: float, gamma: float) -> float:
    """Action of ``t -> eps0 t`` on ``[0, 1]`` by numerical quadrature."""
    from scipy.integrate import quad

    val, _ = quad(lambda t: 0.5 * (eps0 + gamma * eps0 * t) ** 2, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13)
    return val


@dataclass(frozen=True)
class ShiftedStartResult:
    eps0: float
    J_eps0: float
    J_zero: float
    connector: float
    bound_check: bool
    slack: float


def shifted_start_comparison(params: ModelParams, eps0: float, H_list=None, dt: float | None = None,
                             opts: SolverOptions | None = None, tol: float = 1e-6,
                             zero: RatePrefactor | None = None) -> ShiftedStartResult:
    """Compare the infinite-horizon values started at ``eps0`` and at 0."""
    if not eps0 > 0:
        raise InvalidInputError("eps0 must be positive")
    shifted = extrapolate_Jinf(params, H_list, dt, boundary_x0=eps0, opts=opts)
    zero = zero or extrapolate_Jinf(params, H_list, dt, opts=opts)
    conn = connector_cost(eps0, params.gamma)
    slack = conn + shifted.J_inf + tol - zero.J_inf
    return ShiftedStartResult(eps0, shifted.J_inf, zero.J_inf, conn, bool(slack >= 0), slack)
