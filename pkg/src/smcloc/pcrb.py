"""Posterior Cramer-Rao bound for the source parameters.

The information matrix splits into a data term, built from analytic
gradients of the per-sensor observation probabilities and averaged over
the prior by Monte Carlo, and a closed-form prior term.  The inverse
bounds the error covariance of any estimator of the stacked
(P_1, x_1, y_1, ..., P_K, x_K, y_K) vector given the source count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularDistance, SingularFim
from .priors import SourcePriors, sample_prior_blocks
from .sensor_model import (
    ScenarioConfig,
    SourceParams,
    level_probs_for_amplitude,
    amplitudes,
    source_sensor_distances,
)

# Observation probabilities below this contribute nothing to the data
# information: their gradient numerators vanish faster than p itself.
P_FLOOR = 1e-300


@dataclass(frozen=True)
class PcrbConfig:
    """Monte-Carlo settings for the prior average of the data information."""

    n_mc: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_mc < 1:
            raise ConfigError("n_mc must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


def _gaussian_kernels(amp: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """exp(-(lambda_l - a_i)^2 / (2 sigma^2)) per sensor and threshold.

    Terms at infinite thresholds are exactly zero.
    """
    edges = cfg.quantizer.thresholds
    finite = np.isfinite(edges)
    safe = np.where(finite, edges, 0.0)
    u = (safe - amp[:, None]) / cfg.sigma
    return np.where(finite, np.exp(-0.5 * u * u), 0.0)


def _rho_matrix(theta: SourceParams, cfg: ScenarioConfig) -> np.ndarray:
    kern = _gaussian_kernels(amplitudes(theta, cfg), cfg)
    return kern[:, :-1] - kern[:, 1:]


def rho(sensor_index: int, level: int, theta: SourceParams, cfg: ScenarioConfig) -> float:
    """Difference of Gaussian kernels at the two edges of one quantizer bin."""
    if not 0 <= level < cfg.levels:
        raise ConfigError("level outside the quantizer range")
    return float(_rho_matrix(theta, cfg)[sensor_index, level])


def _grad_level_all(theta: SourceParams, cfg: ScenarioConfig) -> np.ndarray:
    """Gradients of every quantizer-level probability, shape (N, L, 3K).

    Per block k the components are
      d/dP_k = (d0/d)^(n/2) rho / (2 sqrt(2 pi sigma^2 P_k)),
      d/dx_k = (d0/d)^(n/2) n sqrt(P_k) d^-2 rho (c_x - x_k) / (2 sqrt(2 pi sigma^2)),
    and the y component mirrors x.
    """
    blocks = theta.blocks
    d = source_sensor_distances(blocks, cfg)          # (k, N)
    att = (cfg.d0 / d) ** (cfg.decay_n / 2.0)
    rho_mat = _rho_matrix(theta, cfg)                 # (N, L)
    c1 = 1.0 / (2.0 * math.sqrt(2.0 * math.pi * cfg.sigma2))
    p = blocks[:, 0][:, None]
    dx = cfg.sensors[:, 0][None, :] - blocks[:, 1][:, None]
    dy = cfg.sensors[:, 1][None, :] - blocks[:, 2][:, None]
    common = att * cfg.decay_n * np.sqrt(p) / (d * d) * c1
    coeff = np.stack([att / np.sqrt(p) * c1, common * dx, common * dy], axis=-1)  # (k, N, 3)
    coeff = np.transpose(coeff, (1, 0, 2)).reshape(cfg.n_sensors, 3 * theta.k)
    return rho_mat[:, :, None] * coeff[:, None, :]


def grad_level_prob(sensor_index: int, level: int, theta: SourceParams,
                    cfg: ScenarioConfig) -> np.ndarray:
    """Gradient of p(b_i = level | theta) with respect to all 3K parameters."""
    if not 0 <= level < cfg.levels:
        raise ConfigError("level outside the quantizer range")
    return _grad_level_all(theta, cfg)[sensor_index, level].copy()


def _grad_obs_all(theta: SourceParams, cfg: ScenarioConfig) -> np.ndarray:
    g = _grad_level_all(theta, cfg)
    return np.einsum("jm,imv->ijv", cfg.channel.probs, g)


def grad_obs_prob(sensor_index: int, j: int, theta: SourceParams,
                  cfg: ScenarioConfig) -> np.ndarray:
    """Gradient of the received-symbol probability p(z_i = j | theta)."""
    if not 0 <= j < cfg.levels:
        raise ConfigError("level outside the quantizer range")
    return _grad_obs_all(theta, cfg)[sensor_index, j].copy()


def fim_data_at(theta: SourceParams, cfg: ScenarioConfig) -> np.ndarray:
    """Data information at a fixed parameter value.

    Sums grad p grad p^T / p over sensors and received levels, skipping
    terms whose probability falls below P_FLOOR.
    """
    g = _grad_obs_all(theta, cfg)                                    # (N, L, 3K)
    amp = amplitudes(theta, cfg)
    p = level_probs_for_amplitude(amp, cfg) @ cfg.channel.probs.T    # (N, L)
    keep = p >= P_FLOOR
    scaled = np.where(keep[..., None], g, 0.0) / np.sqrt(np.where(keep, p, 1.0))[..., None]
    return np.einsum("ijv,ijw->vw", scaled, scaled)


def fim_data_avg(k: int, cfg: ScenarioConfig, priors: SourcePriors,
                 pcrb_cfg: PcrbConfig) -> tuple[np.ndarray, int]:
    """Monte-Carlo average of the data information over prior draws.

    Draws come from per-index streams keyed on the seed, so the result is
    independent of evaluation order.  Draws landing exactly on a sensor
    are rejected and redrawn; the count of rejections is returned.
    """
    total = np.zeros((3 * k, 3 * k))
    n_rejected = 0
    for i in range(pcrb_cfg.n_mc):
        rng = np.random.default_rng([pcrb_cfg.seed, i])
        while True:
            blocks = sample_prior_blocks(k, priors.location, priors.power, rng)
            try:
                total += fim_data_at(SourceParams(blocks), cfg)
                break
            except SingularDistance:
                n_rejected += 1
    return total / pcrb_cfg.n_mc, n_rejected


def xi_power_information(priors: SourcePriors) -> float:
    """Expected curvature of the negative log inverse-gamma density: a(a+1)(a+3)/b^2."""
    a, b = priors.power.a, priors.power.b
    return a * (a + 1.0) * (a + 3.0) / (b * b)


def fim_prior(k: int, priors: SourcePriors) -> np.ndarray:
    """Prior information: block diagonal of (xi, 1/var_x, 1/var_y) per source."""
    if k < 1:
        raise ConfigError("need at least one source")
    block = [xi_power_information(priors), 1.0 / priors.location.var[0],
             1.0 / priors.location.var[1]]
    return np.diag(np.tile(block, k))


@dataclass(frozen=True, eq=False)
class PcrbResult:
    """Assembled information matrices and the marginal error bounds."""

    j_total: np.ndarray
    j_data: np.ndarray
    j_prior: np.ndarray
    location_mse_bound: float
    power_mse_bound: float
    n_rejected_draws: int


def pcrb_bound(k: int, cfg: ScenarioConfig, priors: SourcePriors,
               pcrb_cfg: PcrbConfig) -> PcrbResult:
    """Posterior Cramer-Rao bound for the k-source model.

    The location bound is the trace of the inverse information restricted
    to the coordinate entries, a lower limit on the summed squared
    location error of any estimator; the power entries are reported
    separately.
    """
    j_data, n_rejected = fim_data_avg(k, cfg, priors, pcrb_cfg)
    j_prior = fim_prior(k, priors)
    j_total = j_data + j_prior
    evals, evecs = np.linalg.eigh(j_total)
    if evals.min() <= 0 or evals.max() / evals.min() > 1e12:
        raise SingularFim("information matrix condition number exceeds 1e12")
    inv_diag = np.einsum("ij,j,ij->i", evecs, 1.0 / evals, evecs)
    idx = np.arange(3 * k)
    return PcrbResult(
        j_total=j_total,
        j_data=j_data,
        j_prior=j_prior,
        location_mse_bound=float(inv_diag[idx % 3 != 0].sum()),
        power_mse_bound=float(inv_diag[idx % 3 == 0].sum()),
        n_rejected_draws=n_rejected,
    )
