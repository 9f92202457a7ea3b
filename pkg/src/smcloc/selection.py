"""Importance-sampling baseline and MAP selection of the source count."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import AllZeroWeights, ConfigError, NoFiniteEvidence
from .priors import ModelPrior, SourcePriors, sample_prior_batch
from .sensor_model import ScenarioConfig, loglik_batch
from .smc import ess_log


@dataclass(frozen=True, eq=False)
class IsResult:
    """Prior-proposal importance sampler output."""

    thetas: np.ndarray       # (n, k, 3)
    log_weights: np.ndarray  # normalized
    log_evidence: float
    ess: float

    @property
    def n_particles(self) -> int:
        return self.thetas.shape[0]

    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


def run_is(k: int, z, cfg: ScenarioConfig, priors: SourcePriors, n_is: int,
           seed) -> IsResult:
    """Importance sampling with the prior as proposal.

    Particle weights are proportional to the likelihood, so the evidence
    estimate is the plain average of the likelihood over prior draws.
    """
    if k < 1 or n_is < 1:
        raise ConfigError("k and n_is must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    thetas = sample_prior_batch(n_is, k, priors.location, priors.power, rng)
    ll = loglik_batch(thetas, z, cfg)
    norm = float(logsumexp(ll))
    if np.isneginf(norm) or np.isnan(norm):
        raise AllZeroWeights("every importance weight underflowed to zero")
    lw = ll - norm
    return IsResult(
        thetas=thetas,
        log_weights=lw,
        log_evidence=norm - math.log(n_is),
        ess=ess_log(lw),
    )


def match_budget(t_avg: float, n_particles: int) -> int:
    """Importance-sampler particle count matching an SMC budget of t_avg * N."""
    if t_avg < 1:
        raise ConfigError("the average iteration count must be at least 1")
    if n_particles < 1:
        raise ConfigError("n_particles must be at least 1")
    return int(round(t_avg * n_particles))


def _scores(log_evidences, model_prior: ModelPrior) -> np.ndarray:
    ev = np.asarray(log_evidences, dtype=float)
    if ev.ndim != 1 or ev.size != model_prior.k_max:
        raise ConfigError("need one log-evidence per candidate model")
    return ev + model_prior.log_probs()


def select_map(log_evidences, model_prior: ModelPrior) -> int:
    """MAP source count: argmax of log-evidence plus log model prior.

    Ties break toward the smaller count.  Raises NoFiniteEvidence when no
    candidate has a finite score.
    """
    scores = _scores(log_evidences, model_prior)
    finite = np.isfinite(scores)
    if not np.any(finite):
        raise NoFiniteEvidence("all model evidence estimates are -inf")
    return int(np.argmax(np.where(finite, scores, -np.inf))) + 1


def model_posterior(log_evidences, model_prior: ModelPrior) -> np.ndarray:
    """Normalized posterior probabilities over the candidate source counts."""
    scores = _scores(log_evidences, model_prior)
    finite = np.isfinite(scores)
    if not np.any(finite):
        raise NoFiniteEvidence("all model evidence estimates are -inf")
    shifted = np.where(finite, scores, -np.inf)
    return np.exp(shifted - logsumexp(shifted))


@dataclass(frozen=True, eq=False)
class ModelEvidenceTable:
    """Per-model evidence summary plus the MAP choice."""

    log_evidence: np.ndarray
    ess: np.ndarray
    n_iters: np.ndarray
    posterior: np.ndarray
    k_star: int

    @classmethod
    def build(cls, log_evidences, ess_values, n_iters,
              model_prior: ModelPrior) -> "ModelEvidenceTable":
        return cls(
            log_evidence=np.asarray(log_evidences, dtype=float),
            ess=np.asarray(ess_values, dtype=float),
            n_iters=np.asarray(n_iters, dtype=int),
            posterior=model_posterior(log_evidences, model_prior),
            k_star=select_map(log_evidences, model_prior),
        )
