"""Non-parametric channel statistics: outage capacities, empirical CDFs,
Wasserstein distances, and a Rician maximum-likelihood fit.

Quantiles follow the conservative lower-order-statistic convention: the
eps-quantile of n samples is the ceil(eps*n)-th smallest sample, and the
estimate is only admitted when n > 1/eps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import i0e

from .errors import (
    DegenerateInputError,
    FitError,
    InsufficientSamplesError,
)

__all__ = [
    "EmpiricalDistribution",
    "OutageCapacityEstimate",
    "RicianFit",
    "capacity_from_power",
    "empirical_quantile",
    "empirical_cdf",
    "wasserstein1",
    "fit_rician_ml",
    "sample_rician",
    "dkw_band",
    "estimate_outage_capacity",
]


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Immutable sorted sample set. Build with :meth:`from_samples`."""

    sorted_samples: np.ndarray

    @classmethod
    def from_samples(cls, samples) -> "EmpiricalDistribution":
        arr = np.asarray(samples, dtype=float).ravel()
        if arr.size < 1:
            raise ValueError("empirical distribution needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must be finite")
        out = np.sort(arr)
        out.flags.writeable = False
        return cls(sorted_samples=out)

    @property
    def n(self) -> int:
        return int(self.sorted_samples.size)

    def cdf(self, x) -> np.ndarray:
        """Right-continuous empirical CDF evaluated at ``x``."""
        ranks = np.searchsorted(self.sorted_samples, np.asarray(x, dtype=float),
                                side="right")
        return ranks / self.n


@dataclass(frozen=True)
class OutageCapacityEstimate:
    """Empirical eps-outage capacity derived from power samples."""

    epsilon: float
    value: float  # bits/s/Hz
    n_samples: int

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0,1), got {self.epsilon}")
        if self.value < 0.0:
            raise ValueError("outage capacity cannot be negative")
        if self.n_samples * self.epsilon <= 1.0:
            raise InsufficientSamplesError(
                self.n_samples, self.epsilon,
                required=math.floor(1.0 / self.epsilon) + 1)


@dataclass(frozen=True)
class RicianFit:
    """Rician fading parameters: K factor and mean power omega."""

    K: float
    omega: float
    log_likelihood: float

    def envelope_logpdf(self, r) -> np.ndarray:
        return _rician_logpdf(np.asarray(r, dtype=float), self.K, self.omega)

    def power_cdf(self, y) -> np.ndarray:
        """CDF of the received power ``|h|^2`` under the fitted parameters.

        The power is a scaled noncentral chi-square with 2 degrees of
        freedom: P(|h|^2 <= y) = F_ncx2(2(1+K)y/omega; df=2, nc=2K).
        """
        from scipy.stats import ncx2

        y = np.asarray(y, dtype=float)
        return ncx2.cdf(2.0 * (1.0 + self.K) * y / self.omega, df=2,
                        nc=2.0 * self.K)


def capacity_from_power(power: float, noise_power: float) -> float:
    """Shannon capacity log2(1 + power/noise_power) in bits/s/Hz.

    Accepts scalars or arrays; power must be nonnegative.
    """
    if noise_power <= 0:
        raise ValueError(f"noise power must be positive, got {noise_power}")
    p = np.asarray(power, dtype=float)
    if np.any(p < 0):
        raise ValueError("power must be nonnegative")
    out = np.log2(1.0 + p / noise_power)
    return float(out) if out.ndim == 0 else out


def _order_statistic_index(epsilon: float, n: int) -> int:
    """ceil(eps*n), computed robustly against float fuzz at integer points."""
    t = epsilon * n
    k = math.floor(t)
    if t - k > 1e-9:
        k += 1
    return max(k, 1)


def empirical_quantile(dist: EmpiricalDistribution, epsilon: float) -> float:
    """Lower eps-quantile: the ceil(eps*n)-th smallest sample.

    Requires n > 1/eps; otherwise the order statistic would sit at or below
    the first sample and carry no tail information.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0,1), got {epsilon}")
    n = dist.n
    if n * epsilon <= 1.0:
        raise InsufficientSamplesError(
            n, epsilon, required=math.floor(1.0 / epsilon) + 1)
    k = _order_statistic_index(epsilon, n)
    return float(dist.sorted_samples[k - 1])


def empirical_cdf(dist: EmpiricalDistribution) -> np.ndarray:
    """Step-function table: row i is (i-th sorted sample, i/n).

    Returned as an (n, 2) array; the CDF at the largest sample is 1.
    """
    n = dist.n
    probs = np.arange(1, n + 1, dtype=float) / n
    return np.column_stack([dist.sorted_samples, probs])


def wasserstein1(a: EmpiricalDistribution, b: EmpiricalDistribution) -> float:
    """Exact 1-Wasserstein distance between two empirical distributions.

    Integrates |F_a^-1(u) - F_b^-1(u)| over u in (0,1) using the merged
    quantile breakpoints, so unequal sample counts are handled without
    resampling. For equal counts this reduces to the mean absolute
    difference of the sorted samples.
    """
    xs, ys = a.sorted_samples, b.sorted_samples
    n, m = xs.size, ys.size
    if n == m:
        return float(np.mean(np.abs(xs - ys)))
    # Quantile functions are constant between breakpoints i/n and j/m.
    u = np.union1d(np.arange(1, n, dtype=float) / n,
                   np.arange(1, m, dtype=float) / m)
    edges = np.concatenate([[0.0], u, [1.0]])
    mids = 0.5 * (edges[:-1] + edges[1:])
    widths = np.diff(edges)
    qa = xs[np.ceil(mids * n).astype(int) - 1]
    qb = ys[np.ceil(mids * m).astype(int) - 1]
    return float(np.sum(np.abs(qa - qb) * widths))


def estimate_outage_capacity(power_samples, epsilon: float,
                             noise_power: float) -> OutageCapacityEstimate:
    """Map power samples to capacities and take the lower eps-quantile."""
    caps = capacity_from_power(np.asarray(power_samples, dtype=float),
                               noise_power)
    dist = EmpiricalDistribution.from_samples(caps)
    value = empirical_quantile(dist, epsilon)
    return OutageCapacityEstimate(epsilon=epsilon, value=value,
                                  n_samples=dist.n)


def _rician_logpdf(r: np.ndarray, K: float, omega: float) -> np.ndarray:
    """Log-density of the Rician envelope parameterized by (K, omega).

    f(r) = 2(1+K)r/omega * exp(-K - (1+K)r^2/omega) * I0(2r*sqrt(K(1+K)/omega))
    I0 is evaluated through the exponentially scaled i0e to avoid overflow:
    log I0(x) = x + log(i0e(x)).
    """
    z = 2.0 * r * math.sqrt(K * (1.0 + K) / omega)
    log_i0 = z + np.log(i0e(z))
    return (math.log(2.0 * (1.0 + K) / omega) + np.log(r)
            - K - (1.0 + K) * r * r / omega + log_i0)


def sample_rician(K: float, omega: float, n: int, rng) -> np.ndarray:
    """Draw n Rician envelope samples with Rician factor K and mean power omega."""
    if K < 0 or omega <= 0:
        raise ValueError("need K >= 0 and omega > 0")
    nu = math.sqrt(K * omega / (1.0 + K))
    sigma = math.sqrt(omega / (2.0 * (1.0 + K)))
    re = rng.normal(nu, sigma, size=n)
    im = rng.normal(0.0, sigma, size=n)
    return np.hypot(re, im)


def fit_rician_ml(samples, k_max: float = 1e4,
                  max_iterations: int = 500) -> RicianFit:
    """Maximum-likelihood Rician fit to envelope (amplitude) samples.

    omega is profiled out as the sample mean power, reducing the problem to
    a bounded 1-D search over the Rician factor K.
    """
    r = np.asarray(samples, dtype=float).ravel()
    if r.size < 100:
        raise ValueError(f"need at least 100 samples, got {r.size}")
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise ValueError("envelope samples must be positive and finite")
    omega = float(np.mean(r * r))
    spread = float(np.std(r * r))
    if spread < 1e-12 * omega:
        raise DegenerateInputError(
            "zero-variance samples: Rician likelihood is unbounded in K")

    def negloglik(K):
        return -float(np.sum(_rician_logpdf(r, K, omega)))

    res = minimize_scalar(negloglik, bounds=(0.0, k_max), method="bounded",
                          options={"xatol": 1e-8, "maxiter": max_iterations})
    if not res.success:
        raise FitError(f"Rician ML search did not converge: {res.message} "
                       f"(iterations={res.nfev}, omega={omega:g})")
    return RicianFit(K=float(res.x), omega=omega,
                     log_likelihood=-float(res.fun))


def dkw_band(n: int, confidence: float) -> float:
    """Half-width of the DKW uniform confidence band around an empirical CDF."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0,1), got {confidence}")
    return math.sqrt(math.log(2.0 / (1.0 - confidence)) / (2.0 * n))
