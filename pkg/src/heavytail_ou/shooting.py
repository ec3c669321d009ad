"""Independent reference values for the constrained action minimum.

Two routes that share no code with the discrete solver:

* ``shooting_action`` integrates the Euler-Lagrange ODE
  ``phi'' = gamma^2 phi - p phi^(p-1)`` (multiplier fixed to 1) from
  ``phi(0) = 0`` and tunes the initial slope until the free-end condition
  ``phi'(H) + gamma phi(H) = 0`` holds.  The ratio
  ``action / Fbar^(2/p)`` of that trajectory is the minimum at level 1.
* ``homoclinic_action`` evaluates the same ratio on the whole-line
  homoclinic orbit, which is the infinite-horizon limit, by quadrature in
  the phase variable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import InvalidInputError


@dataclass(frozen=True)
class ShootingResult:
    action: float
    slope: float
    peak_time: float
    raw_action: float
    raw_Fbar: float


def _rhs(gamma, p):
    def f(t, y):
        phi, v = y[0], y[1]
        a = abs(phi)
        force = p * math.copysign(a ** (p - 1), phi) if a > 0 else 0.0
        r = v + gamma * phi
        return [v, gamma * gamma * phi - force, 0.5 * r * r, a ** p]
    return f


def _shoot(gamma, p, H, s, rtol):
    sol = integrate.solve_ivp(_rhs(gamma, p), (0.0, H), [0.0, s, 0.0, 0.0], method="DOP853",
                              rtol=rtol, atol=1e-14 * s, dense_output=False)
    if sol.status != 0:
        raise RuntimeError(sol.message)
    return sol.y[:, -1], sol


def _mismatch(gamma, p, H, s, rtol):
    y, _ = _shoot(gamma, p, H, s, rtol)
    return (y[1] + gamma * y[0]) / s


def shooting_action(gamma: float, p: float, H: float, rtol: float = 1e-11,
                    n_scan: int = 200) -> ShootingResult:
    """Minimal action at ``Fbar = 1`` on ``[0, H]`` by single shooting.

    Small slopes stay in the linear regime where the end mismatch is
    positive; the first sign change on a logarithmic slope scan is the
    single-bump (decaying) branch.
    """
    if not (gamma > 0 and p > 2 and H > 0):
        raise InvalidInputError("need gamma > 0, p > 2 and H > 0")
    # the bump height is bounded by the homoclinic amplitude, which caps the slope
    s_max = gamma * (gamma * gamma / 2) ** (1 / (p - 2)) * 2.0
    slopes = np.geomspace(s_max * 1e-30, s_max, n_scan)
    prev_s, prev_g = None, None
    bracket = None
    for s in slopes:
        g = _mismatch(gamma, p, H, float(s), rtol)
        if prev_g is not None and prev_g > 0 >= g:
            bracket = (prev_s, float(s))
            break
        prev_s, prev_g = float(s), g
    if bracket is None:
        raise RuntimeError("no sign change of the end mismatch on the slope scan")
    s_star = optimize.brentq(lambda s: _mismatch(gamma, p, H, s, rtol), *bracket,
                             xtol=1e-300, rtol=1e-14, maxiter=500)
    y, _ = _shoot(gamma, p, H, s_star, rtol)
    A, Fbar = y[2], y[3]
    ts = np.linspace(0.0, H, 4001)
    dense = integrate.solve_ivp(_rhs(gamma, p), (0.0, H), [0.0, s_star, 0.0, 0.0],
                                method="DOP853", rtol=rtol, atol=1e-14 * s_star, t_eval=ts)
    peak = float(ts[np.argmax(dense.y[0])])
    return ShootingResult(A / Fbar ** (2.0 / p), s_star, peak, A, Fbar)


def homoclinic_action(gamma: float, p: float) -> float:
    """Ratio ``action / Fbar^(2/p)`` of the whole-line homoclinic orbit.

    With unit multiplier the orbit obeys ``phi'^2 = gamma^2 phi^2 - 2 phi^p``
    and peaks at ``m = (gamma^2/2)^(1/(p-2))``.  Substituting ``phi = m u``
    turns both integrals into integrals over ``u`` in ``(0, 1)``.
    """
    if not (gamma > 0 and p > 2):
        raise InvalidInputError("need gamma > 0 and p > 2")
    m = (gamma * gamma / 2) ** (1.0 / (p - 2))

    def root_ratio(u):
        # sqrt(1-u) / sqrt(1-u^(p-2)), smooth on [0, 1]; the endpoint
        # singularity itself is carried by the quadrature weight
        if u >= 1.0:
            return 1.0 / math.sqrt(p - 2)
        return math.sqrt((1.0 - u) / (1.0 - u ** (p - 2)))

    # on the orbit phi'^2 + gamma^2 phi^2 = 2 gamma^2 phi^2 - 2 phi^p, and the
    # cross term gamma d(phi^2)/dt integrates to zero over the whole line
    def a_term(u):
        return (2 * gamma * u - 2 * m ** (p - 2) * u ** (p - 1) / gamma) * root_ratio(u)

    def f_term(u):
        return u ** (p - 1) / gamma * root_ratio(u)

    a_int, _ = integrate.quad(a_term, 0.0, 1.0, weight="alg", wvar=(0.0, -0.5),
                              epsabs=0, epsrel=1e-13)
    f_int, _ = integrate.quad(f_term, 0.0, 1.0, weight="alg", wvar=(0.0, -0.5),
                              epsabs=0, epsrel=1e-13)
    # both halves of the orbit contribute, and phi = m u, dt = m du / (m speed)
    action = 2 * 0.5 * m * m * a_int
    Fbar = 2 * m ** p * f_int
    return action / Fbar ** (2.0 / p)
