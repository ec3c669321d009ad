"""Ornstein-Uhlenbeck simulation and path functionals.

The process is ``dX = -gamma X dt + eps dW``; ``eps = 1`` is the model
itself and ``eps = T**(-1/p)`` is its rescaled small-noise version.
Sampling uses the exact Gaussian transition, so marginals carry no
time-step bias; an Euler-Maruyama mode exists only for comparison.

Path integrals of the observable use the trapezoid rule on the grid.  The
action uses the staggered midpoint rule, where the derivative lives on
cell midpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Union

import numba as nb
import numpy as np

from .errors import InvalidInputError
from .rng import normal_pair, split_seed


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InvalidInputError(f"{name} must be finite, got {value}")
    return value


def _positive(name: str, value: float) -> float:
    value = _finite(name, value)
    if value <= 0:
        raise InvalidInputError(f"{name} must be positive, got {value}")
    return value


@dataclass(frozen=True)
class ModelParams:
    """Mean-reversion rate ``gamma`` and observable power ``p``."""

    gamma: float
    p: float

    def __post_init__(self):
        object.__setattr__(self, "gamma", _positive("gamma", self.gamma))
        object.__setattr__(self, "p", _positive("p", self.p))

    @property
    def alpha(self) -> float:
        return 2.0 / self.p

    @property
    def subexponential(self) -> bool:
        return self.p > 2.0

    def eps_T(self, T: float) -> float:
        """Noise level of the rescaled process, ``T**(-1/p)``."""
        return _positive("T", T) ** (-1.0 / self.p)

    @property
    def stationary_variance(self) -> float:
        return 1.0 / (2.0 * self.gamma)


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    dt: float
    n_steps: int

    def __post_init__(self):
        object.__setattr__(self, "t_start", _finite("t_start", self.t_start))
        object.__setattr__(self, "dt", _positive("dt", self.dt))
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidInputError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def over(cls, horizon: float, dt: float, t_start: float = 0.0) -> "TimeGrid":
        """Grid covering ``[t_start, t_start + horizon]`` with step close to ``dt``.

        The step is adjusted so the horizon is hit exactly.
        """
        horizon = _positive("horizon", horizon)
        n = max(1, int(round(horizon / _positive("dt", dt))))
        return cls(t_start, horizon / n, n)

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True, eq=False)
class PathSample:
    """One trajectory on a uniform grid.

    ``scale`` is the cumulative divisor applied by :func:`scale_path`
    (``1`` for a raw path) and ``noise`` the noise level it was simulated
    with, so ``noise / scale`` is the effective noise of the stored values.
    """

    grid: TimeGrid
    values: np.ndarray
    seed: int
    replicate_id: int
    x0: float = 0.0
    noise: float = 1.0
    scale: float = 1.0
    method: str = "exact"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_steps + 1,):
            raise InvalidInputError(
                f"values must have length n_steps+1={self.grid.n_steps + 1}, got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    def __neg__(self) -> "PathSample":
        return replace(self, values=-self.values, x0=-self.x0)

    @classmethod
    def from_values(cls, values, dt: float, t_start: float = 0.0) -> "PathSample":
        """Wrap a synthetic array (no seed provenance)."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise InvalidInputError("a path needs at least two grid values")
        grid = TimeGrid(t_start, dt, values.size - 1)
        return cls(grid, values, seed=0, replicate_id=-1, x0=float(values[0]), method="synthetic")


@dataclass(frozen=True)
class ActionValue:
    value: float
    horizon: float
    quadrature: Literal["midpoint", "trapezoid"] = "midpoint"


def ou_transition(x: float, dt: float, gamma: float) -> tuple[float, float]:
    """Mean and variance of ``X_{t+dt}`` given ``X_t = x`` (unit noise)."""
    x = _finite("x", x)
    gamma = _positive("gamma", gamma)
    dt = float(dt)
    if math.isnan(dt) or dt < 0:
        raise InvalidInputError(f"dt must be >= 0, got {dt}")
    if math.isinf(dt):
        return 0.0, 1.0 / (2.0 * gamma)
    decay = math.exp(-gamma * dt)
    return x * decay, -math.expm1(-2.0 * gamma * dt) / (2.0 * gamma)


def transition_coefficients(gamma: float, dt: float, noise: float = 1.0,
                            method: str = "exact") -> tuple[float, float]:
    """``(a, s)`` such that one step is ``x -> a*x + s*z``."""
    if method == "exact":
        _, var = ou_transition(0.0, dt, gamma)
        return math.exp(-gamma * dt), noise * math.sqrt(var)
    if method == "euler":
        return 1.0 - gamma * dt, noise * math.sqrt(dt)
    raise InvalidInputError(f"unknown sampling method {method!r}")


@nb.njit(cache=True, nogil=True)
def _ou_recursion(key0, key1, replicate, x0, a, s, drift, out):
    n = out.shape[0] - 1
    rep = np.uint64(replicate)
    out[0] = x0
    x = x0
    z1 = 0.0
    has_drift = drift.shape[0] > 0
    for k in range(n):
        if k & 1 == 0:
            z, z1 = normal_pair(key0, key1, rep, np.uint64(k >> 1))
        else:
            z = z1
        x = a * x + s * z
        if has_drift:
            x += drift[k]
        out[k + 1] = x
    return out


def sample_path(params: ModelParams, grid: TimeGrid, x0: float = 0.0, seed: int = 0,
                replicate_id: int = 0, noise: float = 1.0, method: str = "exact") -> PathSample:
    """Simulate one path; ``Z_k`` is drawn from stream ``(seed, replicate_id, k)``."""
    x0 = _finite("x0", x0)
    noise = _positive("noise", noise)
    a, s = transition_coefficients(params.gamma, grid.dt, noise, method)
    k0, k1 = split_seed(seed)
    values = _ou_recursion(k0, k1, int(replicate_id), x0, a, s, np.empty(0),
                           np.empty(grid.n_steps + 1))
    return PathSample(grid, values, seed=int(seed), replicate_id=int(replicate_id), x0=x0,
                      noise=noise, method=method)


def f_p_eval(x, p: float):
    """``sign(x) |x|**p``; works elementwise on arrays."""
    if p <= 0:
        raise InvalidInputError(f"p must be positive, got {p}")
    if np.ndim(x) == 0:
        x = float(x)
        return math.copysign(abs(x) ** p, x) if x != 0 else 0.0
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.abs(x) ** p


def power_code(p: float) -> int:
    """Small integer exponents get a multiply chain in the kernels; -1 means pow."""
    return int(p) if float(p).is_integer() and 1 <= p <= 8 else -1


@nb.njit(inline="always", cache=True)
def fp_scalar(x, p, code):
    """``sign(x) |x|**p`` for the simulation kernels (``code`` from power_code)."""
    if code < 0:
        return math.copysign(abs(x) ** p, x)
    y = abs(x)
    r = y
    for _ in range(code - 1):
        r *= y
    return math.copysign(r, x)


def _trapezoid(f: np.ndarray, dt: float) -> float:
    # exactly rounded interior sum keeps decompositions consistent to ~1 ulp
    return dt * (math.fsum(f[1:-1]) + 0.5 * (f[0] + f[-1]))


def path_integral(path: PathSample, p: float) -> float:
    """``int f_p(X_t) dt`` over the path by the trapezoid rule."""
    return _trapezoid(f_p_eval(path.values, p), path.grid.dt)


def time_average(path: PathSample, p: float) -> float:
    """``L_T^p``: the trapezoid integral of ``f_p`` along the path over ``T``."""
    T = path.horizon
    if not T > 0:
        raise InvalidInputError("path horizon must be positive")
    return path_integral(path, p) / T


def scale_path(path: PathSample, T: float, p: float) -> PathSample:
    """Divide every value by ``T**(1/p)`` (the small-noise rescaling)."""
    T = _positive("T", T)
    factor = T ** (1.0 / p)
    scale = path.scale * factor
    meta = dict(path.meta, eps_T=path.noise / scale)
    return replace(path, values=path.values / factor, x0=path.x0 / factor, scale=scale, meta=meta)


def _as_dt(grid: Union[TimeGrid, float]) -> float:
    return grid.dt if isinstance(grid, TimeGrid) else _positive("dt", grid)


def _check_phi(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 1 or phi.size < 2:
        raise InvalidInputError("a discretised path needs at least 2 grid points")
    if not np.all(np.isfinite(phi)):
        raise InvalidInputError("path contains non-finite values")
    return phi


def action_JH(phi, grid: Union[TimeGrid, float], gamma: float,
              quadrature: str = "midpoint") -> ActionValue:
    """Discrete ``(1/2) int |phi' + gamma phi|^2 dt``.

    The boundary value ``phi[0]`` is taken as given; callers that need
    ``phi_0 = 0`` enforce it themselves.
    """
    phi = _check_phi(phi)
    dt = _as_dt(grid)
    gamma = _positive("gamma", gamma)
    if quadrature == "midpoint":
        r = np.diff(phi) / dt + gamma * 0.5 * (phi[1:] + phi[:-1])
        value = 0.5 * dt * math.fsum(r * r)
    elif quadrature == "trapezoid":
        r = np.gradient(phi, dt, edge_order=2) + gamma * phi
        value = 0.5 * _trapezoid(r * r, dt)
    else:
        raise InvalidInputError(f"unknown quadrature {quadrature!r}")
    return ActionValue(value, dt * (phi.size - 1), quadrature)


def reversed_action(phi, grid: Union[TimeGrid, float], gamma: float) -> float:
    """Midpoint ``(1/2) int |phi' - gamma phi|^2 dt`` (self-check companion)."""
    phi = _check_phi(phi)
    dt = _as_dt(grid)
    r = np.diff(phi) / dt - gamma * 0.5 * (phi[1:] + phi[:-1])
    return 0.5 * dt * math.fsum(r * r)


def constraint_F(phi, grid: Union[TimeGrid, float], p: float) -> float:
    """Signed constraint ``int f_p(phi) dt`` (trapezoid)."""
    return _trapezoid(f_p_eval(_check_phi(phi), p), _as_dt(grid))


def constraint_Fbar(phi, grid: Union[TimeGrid, float], p: float) -> float:
    """Absolute constraint ``int |phi|^p dt`` (trapezoid)."""
    return _trapezoid(np.abs(_check_phi(phi)) ** p, _as_dt(grid))
