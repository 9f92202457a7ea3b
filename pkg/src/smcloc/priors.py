"""Prior distributions over source parameters and the source count."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError
from .sensor_model import SourceParams, _frozen

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class LocationPrior:
    """Independent Gaussian prior over each source position."""

    mu: np.ndarray
    var: np.ndarray  # diagonal of the 2x2 covariance

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        var = np.asarray(self.var, dtype=float)
        if mu.shape != (2,) or var.shape != (2,):
            raise ConfigError("location prior needs a 2-vector mean and variance diagonal")
        if np.any(var <= 0):
            raise ConfigError("location prior variances must be positive")
        object.__setattr__(self, "mu", _frozen(mu))
        object.__setattr__(self, "var", _frozen(var))

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)


@dataclass(frozen=True)
class PowerPrior:
    """Inverse-gamma prior over each transmitted power."""

    a: float
    b: float

    def __post_init__(self):
        # a > 3 keeps the moments used by the information-bound calculator finite.
        if self.a <= 3:
            raise ConfigError("power prior shape must exceed 3")
        if self.b <= 0:
            raise ConfigError("power prior scale must be positive")

    @property
    def mean(self) -> float:
        return self.b / (self.a - 1.0)

    @property
    def mode(self) -> float:
        return self.b / (self.a + 1.0)

    @property
    def var(self) -> float:
        return self.b * self.b / ((self.a - 1.0) ** 2 * (self.a - 2.0))


@dataclass(frozen=True, eq=False)
class SourcePriors:
    """Bundle of the per-source priors used throughout the samplers."""

    location: LocationPrior
    power: PowerPrior


@dataclass(frozen=True, eq=False)
class ModelPrior:
    """Prior over the candidate source counts 1..k_max."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0):
            raise ConfigError("model prior must be a non-negative vector")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ConfigError("model prior must sum to 1")
        object.__setattr__(self, "probs", _frozen(p))

    @classmethod
    def uniform(cls, k_max: int) -> "ModelPrior":
        if k_max < 1:
            raise ConfigError("k_max must be at least 1")
        return cls(np.full(k_max, 1.0 / k_max))

    @property
    def k_max(self) -> int:
        return self.probs.size

    def log_probs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs)


def default_hyperparams(roi_side: float) -> tuple[LocationPrior, PowerPrior]:
    """Coarse default priors for a square region of side ``roi_side``.

    The location prior is centered on the region and its circular 99%
    region covers the circumscribed circle (radius roi_side * sqrt(2)/2),
    so the whole square including the corners falls inside it.
    """
    if roi_side <= 0:
        raise ConfigError("roi_side must be positive")
    r = roi_side * math.sqrt(2.0) / 2.0
    sigma_p = r / math.sqrt(-2.0 * math.log(1.0 - 0.99))
    center = np.array([roi_side / 2.0, roi_side / 2.0])
    return (
        LocationPrior(center, np.array([sigma_p**2, sigma_p**2])),
        PowerPrior(50.0, 2.5e5),
    )


def default_priors(roi_side: float) -> SourcePriors:
    loc, pw = default_hyperparams(roi_side)
    return SourcePriors(loc, pw)


def sample_prior_blocks(k: int, loc: LocationPrior, power: PowerPrior,
                        rng: np.random.Generator) -> np.ndarray:
    """Draw a (k, 3) block array from the prior (location pair, then powers)."""
    if k < 1:
        raise ConfigError("need at least one source")
    xy = loc.mu + rng.normal(size=(k, 2)) * loc.std
    # Inverse-gamma via the reciprocal of a gamma draw, which is exact.
    p = 1.0 / rng.gamma(power.a, 1.0 / power.b, size=k)
    return np.column_stack([p, xy])


def sample_prior(k: int, loc: LocationPrior, power: PowerPrior,
                 rng: np.random.Generator) -> SourceParams:
    """Draw one source-parameter set of k independent blocks."""
    return SourceParams(sample_prior_blocks(k, loc, power, rng))


def sample_prior_batch(n: int, k: int, loc: LocationPrior, power: PowerPrior,
                       rng: np.random.Generator) -> np.ndarray:
    """Draw n independent parameter sets as an (n, k, 3) array."""
    if n < 1:
        raise ConfigError("need at least one draw")
    xy = loc.mu + rng.normal(size=(n, k, 2)) * loc.std
    p = 1.0 / rng.gamma(power.a, 1.0 / power.b, size=(n, k))
    return np.concatenate([p[..., None], xy], axis=-1)


def block_log_prior(blocks, loc: LocationPrior, power: PowerPrior) -> np.ndarray:
    """Log prior density of (..., 3) blocks; -inf wherever the power is <= 0."""
    blocks = np.asarray(blocks, dtype=float)
    p = blocks[..., 0]
    xy = blocks[..., 1:]
    a, b = power.a, power.b
    with np.errstate(divide="ignore", invalid="ignore"):
        lg_power = a * math.log(b) - gammaln(a) - (a + 1.0) * np.log(p) - b / p
    lg_power = np.where(p > 0.0, lg_power, -np.inf)
    resid = (xy - loc.mu) ** 2 / loc.var
    lg_loc = -0.5 * (2.0 * _LOG_2PI + np.log(loc.var).sum() + resid.sum(axis=-1))
    return lg_power + lg_loc


def log_prior_batch(blocks, loc: LocationPrior, power: PowerPrior) -> np.ndarray:
    """Log prior density of (..., k, 3) parameter arrays, summed over blocks."""
    return block_log_prior(blocks, loc, power).sum(axis=-1)


def log_prior(theta: SourceParams, loc: LocationPrior, power: PowerPrior) -> float:
    """Total log prior density of one parameter set."""
    return float(log_prior_batch(theta.blocks, loc, power))
