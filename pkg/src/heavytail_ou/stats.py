"""Binomial intervals and the tail-estimate record."""
from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import stats as sps

Z95 = float(sps.norm.ppf(0.975))


def wilson_interval(hits: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= hits <= n:
        raise ValueError(f"hits must lie in [0, n], got {hits} of {n}")
    z = Z95 if confidence == 0.95 else float(sps.norm.ppf(0.5 + confidence / 2))
    p = hits / n
    z2n = z * z / n
    denom = 1.0 + z2n
    center = (p + z2n / 2) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2n / (4 * n)) / denom
    lo = 0.0 if hits == 0 else max(0.0, center - half)
    hi = 1.0 if hits == n else min(1.0, center + half)
    # guard the ordering lo <= p <= hi against rounding at the extremes
    return min(lo, p), max(hi, p)


@dataclass(frozen=True)
class TailEstimate:
    """Naive Monte Carlo estimate of a tail or window probability.

    ``scaled_rate`` is ``-T**(-2/p) log(p_hat)``.  With no hits it is
    computed from ``ci_high`` instead, making it a lower bound, and
    ``rate_is_bound`` is set.
    """

    threshold_x: float
    horizon_T: float
    n_samples: int
    n_hits: int
    p_hat: float
    ci_low: float
    ci_high: float
    scaled_rate: float
    scaled_rate_se: float
    rate_is_bound: bool
    speed: float

    @classmethod
    def from_counts(cls, x: float, T: float, hits: int, n: int, p: float) -> "TailEstimate":
        lo, hi = wilson_interval(hits, n)
        p_hat = hits / n
        speed = T ** (2.0 / p)
        if hits > 0:
            rate = -math.log(p_hat) / speed
            se = math.sqrt((1.0 - p_hat) / (n * p_hat)) / speed
            bound = False
        else:
            rate = -math.log(hi) / speed
            se = float("nan")
            bound = True
        # -0.0 when p_hat == 1
        rate = rate + 0.0
        return cls(float(x), float(T), int(n), int(hits), p_hat, lo, hi, rate, se, bound, speed)
