"""Transmission-rate selection from a statistical radio map.

The map policy picks the delta-quantile of the Gaussian predictive
distribution of the outage capacity, so delta is the meta-probability that
the selected rate exceeds the true outage capacity. The baseline policy
copies the estimate of the nearest training point, without interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .gpmap import PredictiveDistribution, TrainingSet

__all__ = [
    "RateDecision",
    "POLICY_MAP",
    "POLICY_BASELINE",
    "gaussian_quantile",
    "select_rate_map",
    "select_rate_baseline",
]

POLICY_MAP = "map_quantile"
POLICY_BASELINE = "nearest_neighbor"


@dataclass(frozen=True)
class RateDecision:
    rate: float                 # bits/s/Hz, clamped at 0 ("do not transmit")
    policy: str
    delta: float | None = None  # meta-probability, map policy only

    def __post_init__(self):
        if self.rate < 0.0:
            raise ValueError("rate must be clamped at 0")
        if self.policy == POLICY_MAP and not (
                self.delta is not None and 0.0 < self.delta < 1.0):
            raise ValueError("map policy needs delta in (0,1)")


def gaussian_quantile(delta: float) -> float:
    """Standard normal inverse CDF, accurate to well below 1e-9."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0,1), got {delta}")
    return float(ndtri(delta))


def select_rate_map(pred: PredictiveDistribution, delta: float) -> RateDecision:
    """Conservative delta-quantile of the predicted outage capacity."""
    if pred.variance < 0.0:
        raise ValueError("predictive variance must be >= 0")
    rate = pred.mean + math.sqrt(pred.variance) * gaussian_quantile(delta)
    return RateDecision(rate=max(rate, 0.0), policy=POLICY_MAP, delta=delta)


def select_rate_baseline(train: TrainingSet, query) -> RateDecision:
    """Outage-capacity estimate of the Euclidean-nearest training point.

    Ties resolve to the lowest training index, so the choice is deterministic.
    """
    q = np.asarray(query, dtype=float).reshape(2)
    d2 = np.sum((train.coords - q) ** 2, axis=1)
    idx = int(np.argmin(d2))  # argmin returns the first minimum
    return RateDecision(rate=max(float(train.targets[idx]), 0.0),
                        policy=POLICY_BASELINE)
