"""Gaussian-process regression over 2-D coordinates (geographic or latent).

The statistical radio map regresses per-location outage-capacity estimates
with a squared-exponential kernel plus nugget. Hyperparameters maximize the
log marginal likelihood via a multi-start Nelder-Mead simplex search in log
space; the prior mean is profiled out in closed form at every evaluation.
A fitted map is immutable: it freezes the Cholesky factor of K + nugget*I
and the solved weight vector, and prediction is pure linear algebra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .errors import ConfigurationError, FitError, IllConditionedError

__all__ = [
    "Hyperparams",
    "TrainingSet",
    "FittedMap",
    "PredictiveDistribution",
    "FitDiagnostics",
    "kernel",
    "kernel_matrix",
    "log_marginal_likelihood",
    "fit",
    "predict",
    "predict_batch",
    "default_bounds",
]

LOG2PI = math.log(2.0 * math.pi)
JITTER_REL = 1e-9  # relative jitter when a noise-free Cholesky fails


@dataclass(frozen=True)
class Hyperparams:
    """GP hyperparameters: prior mean, signal variance, length scale, nugget."""

    prior_mean: float
    signal_var: float
    length_scale: float
    noise_var: float

    def __post_init__(self):
        if self.signal_var <= 0 or self.length_scale <= 0:
            raise ConfigurationError(
                "signal_var and length_scale must be positive, got "
                f"{self.signal_var}, {self.length_scale}")
        if self.noise_var < 0:
            raise ConfigurationError(f"noise_var must be >= 0, got {self.noise_var}")


@dataclass(frozen=True)
class TrainingSet:
    """Paired 2-D coordinates and scalar targets (bits/s/Hz)."""

    coords: np.ndarray
    targets: np.ndarray

    @classmethod
    def new(cls, coords, targets) -> "TrainingSet":
        c = np.atleast_2d(np.asarray(coords, dtype=float))
        t = np.asarray(targets, dtype=float).ravel()
        if c.shape[1] != 2:
            raise ConfigurationError("coordinates must be 2-D points")
        if c.shape[0] != t.size:
            raise ConfigurationError(
                f"{c.shape[0]} coordinates vs {t.size} targets")
        if c.shape[0] < 2:
            raise ConfigurationError("need at least 2 training points")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(t))):
            raise ConfigurationError("coordinates and targets must be finite")
        c.flags.writeable = False
        t.flags.writeable = False
        return cls(coords=c, targets=t)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def has_duplicates(self) -> bool:
        return np.unique(self.coords, axis=0).shape[0] < self.n


@dataclass(frozen=True)
class PredictiveDistribution:
    """Gaussian posterior of the outage capacity at a query point."""

    mean: float
    variance: float


@dataclass(frozen=True)
class FitDiagnostics:
    log_marginal_likelihood: float
    iterations: int
    restarts: int
    converged: bool
    jitter_applied: bool


@dataclass(frozen=True)
class FittedMap:
    """Immutable GP posterior machinery; build via :func:`fit`."""

    hyper: Hyperparams
    train: TrainingSet
    chol: np.ndarray            # lower-triangular factor of K + noise_var*I
    alpha: np.ndarray           # (K + noise_var*I)^-1 (y - m0)
    diagnostics: FitDiagnostics = field(
        default_factory=lambda: FitDiagnostics(float("nan"), 0, 0, True, False))


def kernel(x, x_prime, hyper: Hyperparams) -> float:
    """Squared-exponential covariance between two 2-D points (no nugget)."""
    d2 = float(np.sum((np.asarray(x, dtype=float)
                       - np.asarray(x_prime, dtype=float)) ** 2))
    return hyper.signal_var * math.exp(-d2 / (2.0 * hyper.length_scale ** 2))


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sum(diff * diff, axis=-1)


def kernel_matrix(coords: np.ndarray, hyper: Hyperparams,
                  with_nugget: bool = True) -> np.ndarray:
    """Dense training covariance; the nugget rides on the diagonal only."""
    k = hyper.signal_var * np.exp(
        -_sq_dists(coords, coords) / (2.0 * hyper.length_scale ** 2))
    if with_nugget:
        k[np.diag_indices_from(k)] += hyper.noise_var
    return k


def _cholesky_with_jitter(k: np.ndarray, hyper: Hyperparams):
    """Lower Cholesky factor; retries once with a tiny jitter when noise-free."""
    try:
        return cholesky(k, lower=True), False
    except np.linalg.LinAlgError:
        pass
    if hyper.noise_var == 0.0:
        bumped = k.copy()
        bumped[np.diag_indices_from(bumped)] += JITTER_REL * hyper.signal_var
        try:
            return cholesky(bumped, lower=True), True
        except np.linalg.LinAlgError:
            pass
    raise IllConditionedError(
        "kernel matrix is not positive definite for hyperparameters "
        f"(signal_var={hyper.signal_var:g}, length_scale={hyper.length_scale:g}, "
        f"noise_var={hyper.noise_var:g})")


def _validate_duplicates(train: TrainingSet, hyper: Hyperparams):
    if hyper.noise_var == 0.0 and train.has_duplicates():
        raise ConfigurationError(
            "duplicate training coordinates require a positive nugget")


def log_marginal_likelihood(hyper: Hyperparams, train: TrainingSet) -> float:
    """-0.5 r^T C^-1 r - 0.5 ln det C - n/2 ln 2pi with C = K + noise_var*I."""
    _validate_duplicates(train, hyper)
    k = kernel_matrix(train.coords, hyper)
    low, _ = _cholesky_with_jitter(k, hyper)
    r = train.targets - hyper.prior_mean
    alpha = cho_solve((low, True), r)
    logdet = 2.0 * np.sum(np.log(np.diag(low)))
    return float(-0.5 * r @ alpha - 0.5 * logdet - 0.5 * train.n * LOG2PI)


def default_bounds(train: TrainingSet) -> dict:
    """Data-driven box bounds for (signal_var, length_scale, noise_var)."""
    var = max(float(np.var(train.targets)), 1e-12)
    d2 = _sq_dists(train.coords, train.coords)
    pos = d2[d2 > 0]
    if pos.size == 0:
        raise ConfigurationError("all training coordinates coincide")
    dmin = math.sqrt(float(pos.min()))
    dmax = math.sqrt(float(pos.max()))
    return {
        "signal_var": (1e-6 * var, 1e3 * var),
        "length_scale": (0.1 * dmin, 10.0 * dmax),
        "noise_var": (1e-9 * var, 10.0 * var),
    }


def _profiled_mean(low: np.ndarray, targets: np.ndarray) -> float:
    """GLS-optimal prior mean given the Cholesky factor of C."""
    ones = np.ones_like(targets)
    ci_y = cho_solve((low, True), targets)
    ci_1 = cho_solve((low, True), ones)
    return float(ones @ ci_y) / float(ones @ ci_1)


def fit(train: TrainingSet, init: Hyperparams | None = None,
        bounds: dict | None = None, restarts: int = 3, seed: int = 0,
        max_iterations: int = 400) -> FittedMap:
    """Maximize the log marginal likelihood and freeze the posterior solves.

    The search runs in (log signal_var, log length_scale, log noise_var)
    with the prior mean profiled out analytically at each evaluation; out of
    bounds proposals are clipped with a soft penalty. Multi-start jitters are
    seeded, so the whole fit is deterministic.
    """
    if bounds is None:
        bounds = default_bounds(train)
    lo = np.log([bounds["signal_var"][0], bounds["length_scale"][0],
                 bounds["noise_var"][0]])
    hi = np.log([bounds["signal_var"][1], bounds["length_scale"][1],
                 bounds["noise_var"][1]])
    if not np.all(lo < hi):
        raise ConfigurationError("bounds must be positive with low < high")
    if init is None:
        var = max(float(np.var(train.targets)), 1e-10)
        d2 = _sq_dists(train.coords, train.coords)
        med = math.sqrt(float(np.median(d2[d2 > 0])))
        init = Hyperparams(prior_mean=float(np.mean(train.targets)),
                           signal_var=var, length_scale=med,
                           noise_var=0.1 * var)

    jitter_seen = False

    def objective(theta):
        nonlocal jitter_seen
        clipped = np.clip(theta, lo, hi)
        penalty = float(np.sum((theta - clipped) ** 2))
        hyper = Hyperparams(prior_mean=0.0,
                            signal_var=float(np.exp(clipped[0])),
                            length_scale=float(np.exp(clipped[1])),
                            noise_var=float(np.exp(clipped[2])))
        k = kernel_matrix(train.coords, hyper)
        try:
            low_f, jit = _cholesky_with_jitter(k, hyper)
        except IllConditionedError:
            return 1e12 + penalty
        jitter_seen = jitter_seen or jit
        m0 = _profiled_mean(low_f, train.targets)
        r = train.targets - m0
        alpha = cho_solve((low_f, True), r)
        logdet = 2.0 * np.sum(np.log(np.diag(low_f)))
        lml = -0.5 * r @ alpha - 0.5 * logdet - 0.5 * train.n * LOG2PI
        return -float(lml) + 1e3 * penalty

    x0 = np.clip(np.log([init.signal_var, init.length_scale,
                         max(init.noise_var, math.exp(lo[2]))]), lo, hi)
    rng = np.random.default_rng(seed)
    starts = [x0] + [np.clip(x0 + rng.normal(0.0, 0.7, 3), lo, hi)
                     for _ in range(max(restarts - 1, 0))]

    best_x, best_val, total_iter, converged = None, np.inf, 0, False
    for start in starts:
        res = minimize(objective, start, method="Nelder-Mead",
                       options={"maxfev": max_iterations, "xatol": 1e-6,
                                "fatol": 1e-9})
        total_iter += int(res.nfev)
        if res.fun < best_val:
            best_val, best_x = float(res.fun), np.clip(res.x, lo, hi)
            converged = bool(res.success)
    if best_x is None or not np.isfinite(best_val) or best_val >= 1e12:
        raise FitError("all restarts failed to factorize the kernel matrix")

    hyper0 = Hyperparams(prior_mean=0.0,
                         signal_var=float(np.exp(best_x[0])),
                         length_scale=float(np.exp(best_x[1])),
                         noise_var=float(np.exp(best_x[2])))
    _validate_duplicates(train, hyper0)
    k = kernel_matrix(train.coords, hyper0)
    low_f, jit = _cholesky_with_jitter(k, hyper0)
    m0 = _profiled_mean(low_f, train.targets)
    hyper = Hyperparams(prior_mean=m0, signal_var=hyper0.signal_var,
                        length_scale=hyper0.length_scale,
                        noise_var=hyper0.noise_var)
    alpha = cho_solve((low_f, True), train.targets - m0)
    final_lml = log_marginal_likelihood(hyper, train)
    diag = FitDiagnostics(log_marginal_likelihood=final_lml,
                          iterations=total_iter, restarts=len(starts),
                          converged=converged,
                          jitter_applied=jitter_seen or jit)
    return FittedMap(hyper=hyper, train=train, chol=low_f, alpha=alpha,
                     diagnostics=diag)


def build_map(train: TrainingSet, hyper: Hyperparams) -> FittedMap:
    """Freeze a map at fixed hyperparameters (no optimization)."""
    _validate_duplicates(train, hyper)
    k = kernel_matrix(train.coords, hyper)
    low, jit = _cholesky_with_jitter(k, hyper)
    alpha = cho_solve((low, True), train.targets - hyper.prior_mean)
    lml = log_marginal_likelihood(hyper, train)
    return FittedMap(hyper=hyper, train=train, chol=low, alpha=alpha,
                     diagnostics=FitDiagnostics(lml, 0, 0, True, jit))


def _predict_one(fmap: FittedMap, q: np.ndarray) -> PredictiveDistribution:
    hyper = fmap.hyper
    diff = fmap.train.coords - q
    kx = hyper.signal_var * np.exp(
        -np.sum(diff * diff, axis=1) / (2.0 * hyper.length_scale ** 2))
    mean = hyper.prior_mean + kx @ fmap.alpha
    v = solve_triangular(fmap.chol, kx, lower=True)
    var = hyper.signal_var - v @ v
    return PredictiveDistribution(mean=float(mean), variance=max(float(var), 0.0))


def predict_batch(fmap: FittedMap, queries) -> list[PredictiveDistribution]:
    """Posterior at each query point.

    Evaluated query by query so results are bit-identical to sequential
    :func:`predict` calls regardless of batch size.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    if q.shape[1] != 2:
        raise ConfigurationError("queries must be 2-D points")
    return [_predict_one(fmap, row) for row in q]


def predict(fmap: FittedMap, query) -> PredictiveDistribution:
    """Posterior at one query point (identical to a batch of one)."""
    q = np.asarray(query, dtype=float).reshape(2)
    return _predict_one(fmap, q)
