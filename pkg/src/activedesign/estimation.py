"""Streaming variance estimation and the confidence radii built on it.

The adaptive policies only ever see per-arm observation streams.  This
module keeps one-pass sufficient statistics per arm (Welford update,
population convention: divide by n, not n-1) and turns sample counts into
deviation radii for the empirical variance of sub-Gaussian noise, plus
the derived quantities the policies consume: lower confidence bounds on
variances, sample counts that guarantee a factor-two variance estimate,
and the exploration bonus added to gradient estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Absolute constant in the variance concentration bound,
# (e - 1) / (2e(2e - 1)); approximately 0.0712.
BERNSTEIN_C = (math.e - 1.0) / (2.0 * math.e * (2.0 * math.e - 1.0))

# Relative floor applied to variance lower bounds so downstream ratios
# stay finite: lcb >= LCB_FLOOR * kappa2.
LCB_FLOOR = 1e-12


@dataclass
class ArmStats:
    """One-pass moments of a single arm's observation stream.

    ``variance`` is the population variance m2 / n, defined from the
    second observation on; before that it is None.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, y: float) -> None:
        self.count += 1
        delta = y - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (y - self.mean)

    def update_many(self, ys) -> None:
        for y in np.asarray(ys, dtype=np.float64).reshape(-1):
            self.update(float(y))

    @property
    def variance(self) -> float | None:
        if self.count < 2:
            return None
        return self.m2 / self.count


@dataclass(frozen=True)
class ConfidenceParams:
    """Failure probability and sub-Gaussian proxy for one arm's radii."""

    delta: float
    kappa2: float

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.kappa2 <= 0.0:
            raise ValueError("kappa2 must be positive")


def variance_radius(n: int, kappa2: float, delta: float) -> float:
    """Deviation radius r with P(|var_hat - var| > r) <= delta.

    r = 3 kappa^2 * max(u, sqrt(u)),  u = log(4/delta) / (c n),

    where c is :data:`BERNSTEIN_C`.  The sqrt branch is the useful
    regime; the linear branch takes over for very small n.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    u = math.log(4.0 / delta) / (BERNSTEIN_C * n)
    return 3.0 * kappa2 * max(u, math.sqrt(u))


def halving_sample_count(kappa2: float, sigma2: float, horizon: int) -> int:
    """Samples per arm that pin the variance within a factor two.

    n = ceil(72 kappa^4 / (c sigma^4) * log(2 T)) makes
    variance_radius(n, kappa^2, 1/T^2) <= sigma^2 / 2, so the estimate
    lands in [sigma^2/2, 3 sigma^2/2] with probability at least
    1 - 1/T^2.
    """
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    if kappa2 <= 0.0 or sigma2 <= 0.0:
        raise ValueError("kappa2 and sigma2 must be positive")
    ratio = kappa2 / sigma2
    return math.ceil(72.0 * ratio * ratio / BERNSTEIN_C * math.log(2.0 * horizon))


def lcb_variance(stats: ArmStats, params: ConfidenceParams) -> float:
    """Optimistic (lower) variance estimate, floored away from zero.

    max(var_hat - variance_radius(n, kappa2, delta), LCB_FLOOR * kappa2).
    Undefined (raises) before the arm has two observations.
    """
    var = stats.variance
    if var is None:
        raise ValueError("variance undefined with fewer than two observations")
    radius = variance_radius(stats.count, params.kappa2, params.delta)
    return max(var - radius, LCB_FLOOR * params.kappa2)


def gradient_bonus(t: int, t_k: int, scale: float = 2.0, log_coeff: float = 3.0) -> float:
    """Exploration bonus subtracted from gradient estimates.

    Default form 2 sqrt(3 log(t) / T_k) for round t and arm count T_k.
    """
    if t < 1 or t_k < 1:
        raise ValueError("round index and arm count must be positive")
    return scale * math.sqrt(log_coeff * math.log(t) / t_k)


def gradient_deviation_bound(
    arm: int,
    weights,
    sigma2,
    kappa2,
    lambda_min_moment: float,
    samples_of_arm: int,
    horizon: int,
    delta: float,
) -> float:
    """Diagnostic high-probability bound on one gradient coordinate's error.

    Evaluates, for arm i with T_i samples out of a horizon-T run,

        678 K (sigma_max / sigma_min^4)
            * ((1 / (sigma_i lambda_min)) max_k sigma_k^2 / p_k)^3
            * kappa_max^2 * max(u, sqrt(u)),
        u = log(4 T K / delta) / T_i.

    The constant is conservative; the value is reported for diagnostics
    and is not used to drive any policy decision.
    """
    p = np.asarray(weights, dtype=np.float64).reshape(-1)
    s2 = np.asarray(sigma2, dtype=np.float64).reshape(-1)
    k2 = np.asarray(kappa2, dtype=np.float64).reshape(-1)
    k = p.shape[0]
    if not 0 <= arm < k:
        raise ValueError("arm index out of range")
    if np.any(p <= 0.0):
        raise ValueError("weights must be strictly positive")
    if samples_of_arm < 1 or horizon < 1:
        raise ValueError("sample counts must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if lambda_min_moment <= 0.0:
        raise ValueError("lambda_min must be positive")
    sigma = np.sqrt(s2)
    u = math.log(4.0 * horizon * k / delta) / samples_of_arm
    inner = float(np.max(s2 / p)) / (sigma[arm] * lambda_min_moment)
    return (
        678.0
        * k
        * float(sigma.max() / sigma.min() ** 4)
        * inner**3
        * float(k2.max())
        * max(u, math.sqrt(u))
    )
