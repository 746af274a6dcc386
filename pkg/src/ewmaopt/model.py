"""Exponential change-point model: densities, likelihood ratio, sampling.

Observations are independent and exponentially distributed with mean 1
before the change and mean 1 + theta after it, theta > 0 known.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = ["Regime", "ExpChangeModel", "density", "cdf", "likelihood_ratio", "sample"]


class Regime(enum.Enum):
    """Which of the two observation distributions is in force."""

    PRE_CHANGE = "pre"
    POST_CHANGE = "post"


@dataclass(frozen=True)
class ExpChangeModel:
    """Exponential model with a known upward shift of the mean.

    ``theta`` is the size of the shift; the post-change mean is 1 + theta.
    """

    theta: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")

    @property
    def post_mean(self) -> float:
        return 1.0 + self.theta

    def mean(self, regime: Regime) -> float:
        return 1.0 if regime is Regime.PRE_CHANGE else self.post_mean


def density(model: ExpChangeModel, regime: Regime, x):
    """Observation density, zero for negative arguments.

    Accepts scalars or arrays and broadcasts accordingly.
    """
    x = np.asarray(x, dtype=float)
    m = model.mean(regime)
    out = np.where(x < 0.0, 0.0, np.exp(-np.maximum(x, 0.0) / m) / m)
    return out if out.ndim else float(out)


def cdf(model: ExpChangeModel, regime: Regime, x):
    """Observation distribution function, zero for negative arguments."""
    x = np.asarray(x, dtype=float)
    m = model.mean(regime)
    out = np.where(x < 0.0, 0.0, -np.expm1(-np.maximum(x, 0.0) / m))
    return out if out.ndim else float(out)


def likelihood_ratio(model: ExpChangeModel, x):
    """Post-over-pre density ratio of a single observation.

    Equals exp(x * theta / (1 + theta)) / (1 + theta), strictly increasing
    in x with minimum 1/(1+theta) at x = 0.  Negative observations are
    rejected rather than clamped: the model only generates nonnegative
    values, so a negative input is an upstream bug.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise ValueError("observations must be nonnegative")
    m = model.post_mean
    out = np.exp(x * model.theta / m) / m
    return out if out.ndim else float(out)


def sample(model: ExpChangeModel, regime: Regime, rng: np.random.Generator, size=None):
    """Draw exponential variates via inverse-CDF from ``rng``.

    Uses -mean * log(1 - U) with U uniform on [0, 1) so that a given
    generator state always yields the same stream.
    """
    m = model.mean(regime)
    u = rng.random(size)
    return -m * np.log1p(-u)
