"""Tempered sequential Monte Carlo sampler with adaptive cooling.

The sampler targets densities proportional to p(theta) * p(z | theta)^phi
along an adaptive temperature schedule phi: 0 -> 1.  Each iteration finds
the next temperature by holding the conditional effective sample size at
a target value, reweights the particles with the likelihood increments,
resamples systematically when the effective sample size degrades, and
mutates every particle with a Metropolis-within-Gibbs random-walk kernel
that leaves the current tempered target invariant.  The telescoped
product of incremental-weight averages gives an unbiased estimate of the
marginal likelihood.

Randomness is organized so results never depend on evaluation order:
every internal stream derives from a master seed through the counter key
(master, iteration, role, particle index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .errors import AllZeroWeights, ConfigError, StalledSchedule, ZeroIncrement
from .priors import SourcePriors, block_log_prior, log_prior, sample_prior_blocks
from .sensor_model import ScenarioConfig, SourceParams, log_likelihood, loglik_batch

_ROLE_PARTICLE = 0
_ROLE_RESAMPLE = 1


@dataclass(frozen=True)
class SmcConfig:
    """Tuning knobs for one tempered SMC run.

    ``cess_frac`` and ``ess_frac`` are expressed as fractions of the
    particle count.  The random-walk proposal is diagonal: standard
    deviation ``proposal_std_xy`` meters on each coordinate and
    ``proposal_std_p_frac`` times the prior power mode on the power.
    """

    n_particles: int = 100
    cess_frac: float = 0.9
    ess_frac: float = 0.5
    n_mcmc: int = 5
    proposal_std_xy: float = 2.0
    proposal_std_p_frac: float = 0.1
    phi_tol: float = 1e-6
    max_iters: int = 10_000

    def __post_init__(self):
        if self.n_particles < 1:
            raise ConfigError("need at least one particle")
        for name in ("cess_frac", "ess_frac"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1]")
        if self.n_mcmc < 1:
            raise ConfigError("n_mcmc must be at least 1")
        if self.proposal_std_xy <= 0 or self.proposal_std_p_frac <= 0:
            raise ConfigError("proposal standard deviations must be positive")
        if self.phi_tol <= 0 or self.max_iters < 1:
            raise ConfigError("phi_tol and max_iters must be positive")

    def proposal_stds(self, priors: SourcePriors) -> np.ndarray:
        """Per-component proposal standard deviations in (P, x, y) order."""
        return np.array([
            self.proposal_std_p_frac * priors.power.mode,
            self.proposal_std_xy,
            self.proposal_std_xy,
        ])


@dataclass
class ParticleSystem:
    """Weighted particle approximation of one tempered target.

    ``log_weights`` are kept normalized (logsumexp equals 0) and
    ``loglik`` caches log p(z | theta) for the current particle values so
    reweighting never has to touch the particles themselves.
    """

    thetas: np.ndarray       # (N, k, 3)
    log_weights: np.ndarray  # (N,)
    phi: float
    log_evidence: float      # running sum of log(Z_t / Z_{t-1})
    loglik: np.ndarray       # (N,)

    @property
    def n_particles(self) -> int:
        return self.thetas.shape[0]

    @property
    def k(self) -> int:
        return self.thetas.shape[1]

    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def particles(self) -> list[SourceParams]:
        return [SourceParams(b) for b in self.thetas]


def ess(weights) -> float:
    """Effective sample size of normalized weights: 1 / sum(w^2)."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def ess_log(log_weights) -> float:
    """ESS computed from normalized log weights."""
    return float(np.exp(-logsumexp(2.0 * np.asarray(log_weights, dtype=float))))


def cess(prev_weights, inc_weights) -> float:
    """Conditional ESS between two successive targets.

    ``prev_weights`` are the current normalized weights and
    ``inc_weights`` the non-negative incremental weights; the value is
    (sum W w)^2 / (sum W w^2 / N) and is invariant to rescaling the
    increments by any positive constant.
    """
    w_prev = np.asarray(prev_weights, dtype=float)
    w_inc = np.asarray(inc_weights, dtype=float)
    num = np.sum(w_prev * w_inc)
    if num == 0.0:
        raise ZeroIncrement("all incremental weights are zero")
    den = np.sum(w_prev * w_inc * w_inc) / w_prev.size
    return float(num * num / den)


def cess_log(log_prev_weights, log_inc, n: int) -> float:
    """CESS from normalized log weights and log increments."""
    num = logsumexp(log_prev_weights + log_inc)
    if np.isneginf(num):
        raise ZeroIncrement("all incremental weights are zero")
    den = logsumexp(log_prev_weights + 2.0 * log_inc) - math.log(n)
    return float(np.exp(2.0 * num - den))


def incremental_log_weights(system: ParticleSystem, phi_new: float) -> np.ndarray:
    """Per-particle log increments (phi_new - phi) * log p(z | theta).

    The increments depend only on the cached pre-mutation log-likelihoods.
    """
    if phi_new < system.phi:
        raise ConfigError("temperature must not decrease")
    dphi = phi_new - system.phi
    if dphi == 0.0:
        return np.zeros(system.n_particles)
    return dphi * system.loglik


def find_next_temperature(system: ParticleSystem, cess_target: float,
                          phi_tol: float = 1e-6) -> float:
    """Largest next temperature keeping the CESS at or above the target.

    Returns 1.0 directly when the full remaining step already satisfies
    the target; otherwise bisects on (phi, 1] down to ``phi_tol``.  Raises
    StalledSchedule when no forward step satisfies the target, which
    signals pathological weight collapse.
    """
    n = system.n_particles
    if not 0.0 < cess_target <= n:
        raise ConfigError("cess_target must lie in (0, N]")

    def cess_at(phi):
        return cess_log(system.log_weights, incremental_log_weights(system, phi), n)

    if cess_at(1.0) >= cess_target:
        return 1.0
    lo, hi = system.phi, 1.0
    for _ in range(60):
        if hi - lo <= phi_tol:
            break
        mid = 0.5 * (lo + hi)
        if cess_at(mid) >= cess_target:
            lo = mid
        else:
            hi = mid
    if lo <= system.phi + 1e-12:
        raise StalledSchedule("no admissible temperature step above the current phi")
    return lo


def reweight(system: ParticleSystem, phi_new: float) -> ParticleSystem:
    """Advance the target to ``phi_new``: update weights and evidence.

    The evidence accumulator gains log sum_m W_m w_m, the log of the
    estimated ratio of normalizing constants between the two targets.
    """
    log_inc = incremental_log_weights(system, phi_new)
    lw = system.log_weights + log_inc
    log_ratio = float(logsumexp(lw))
    if np.isneginf(log_ratio) or np.isnan(log_ratio):
        raise AllZeroWeights("all importance weights underflowed to zero")
    return replace(
        system,
        log_weights=lw - log_ratio,
        phi=phi_new,
        log_evidence=system.log_evidence + log_ratio,
    )


def systematic_resample_indices(weights, n: int, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: n ancestor indices with one shared uniform."""
    w = np.asarray(weights, dtype=float)
    positions = (np.arange(n) + rng.uniform()) / n
    idx = np.searchsorted(np.cumsum(w), positions)
    return np.minimum(idx, w.size - 1)


def resample(system: ParticleSystem, rng: np.random.Generator) -> ParticleSystem:
    """Systematic resampling; weights reset to uniform, evidence untouched."""
    n = system.n_particles
    idx = systematic_resample_indices(system.weights(), n, rng)
    return replace(
        system,
        thetas=system.thetas[idx],
        loglik=system.loglik[idx],
        log_weights=np.full(n, -math.log(n)),
    )


def log_tempered_target(theta: SourceParams, phi: float, z, cfg: ScenarioConfig,
                        priors: SourcePriors) -> float:
    """Unnormalized log density log p(theta) + phi * log p(z | theta)."""
    lp = log_prior(theta, priors.location, priors.power)
    if phi == 0.0:
        return lp
    return lp + phi * log_likelihood(z, theta, cfg)


def _draw_move_noise(rng: np.random.Generator, n_mcmc: int, k: int,
                     stds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    eps = rng.normal(size=(n_mcmc, k, 3)) * stds
    log_u = np.log(rng.uniform(size=(n_mcmc, k)))
    return eps, log_u


def _mwg_sweeps(blocks, loglik, logpri_blocks, eps, log_u, phi, z, cfg, priors):
    """Shared Metropolis-within-Gibbs sweeps over a batch of particles.

    blocks (B, k, 3) is updated out of place; eps (B, S, k, 3) and
    log_u (B, S, k) hold the pre-drawn proposal noise and acceptance
    uniforms, so the walk is fully determined by its inputs.
    """
    blocks = blocks.copy()
    loglik = loglik.copy()
    logpri_blocks = logpri_blocks.copy()
    n_sweeps = eps.shape[1]
    k = blocks.shape[1]
    for s in range(n_sweeps):
        for b in range(k):
            prop = blocks[:, b, :] + eps[:, s, b, :]
            valid = prop[:, 0] > 0.0
            cand = blocks.copy()
            cand[valid, b, :] = prop[valid]
            ll_prop = loglik_batch(cand, z, cfg)
            lp_prop = block_log_prior(prop, priors.location, priors.power)
            if phi == 0.0:
                ll_term = 0.0
            else:
                dll = ll_prop - loglik
                ll_term = phi * np.where(np.isnan(dll), 0.0, dll)
            log_alpha = ll_term + (lp_prop - logpri_blocks[:, b])
            accept = valid & (log_u[:, s, b] <= log_alpha)
            blocks[accept, b, :] = prop[accept]
            loglik = np.where(accept, ll_prop, loglik)
            logpri_blocks[accept, b] = lp_prop[accept]
    return blocks, loglik, logpri_blocks


def mwg_move(theta: SourceParams, phi: float, z, cfg: ScenarioConfig,
             priors: SourcePriors, smc_cfg: SmcConfig,
             rng: np.random.Generator) -> SourceParams:
    """Metropolis-within-Gibbs mutation of a single particle.

    Runs ``n_mcmc`` sweeps; within each sweep every (P, x, y) block gets a
    Gaussian random-walk proposal accepted with probability
    min{1, [p(z|theta*)^phi p(theta*)] / [p(z|theta)^phi p(theta)]},
    evaluated in the log domain.  Proposals with non-positive power are
    rejected outright.
    """
    if not 0.0 <= phi <= 1.0:
        raise ConfigError("phi must lie in [0, 1]")
    k = theta.k
    stds = smc_cfg.proposal_stds(priors)
    eps, log_u = _draw_move_noise(rng, smc_cfg.n_mcmc, k, stds)
    blocks = theta.blocks[None, :, :]
    loglik = loglik_batch(blocks, z, cfg)
    logpri = block_log_prior(blocks, priors.location, priors.power)
    out, _, _ = _mwg_sweeps(blocks, loglik, logpri, eps[None], log_u[None],
                            phi, z, cfg, priors)
    return SourceParams(out[0])


def _stream(master: int, iteration: int, role: int, idx: int) -> np.random.Generator:
    return np.random.default_rng([master, iteration, role, idx])


def _master_seed(seed) -> int:
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(2**63))
    master = int(seed)
    if master < 0:
        raise ConfigError("seed must be non-negative")
    return master


def _mutate_system(system: ParticleSystem, z, cfg, priors, smc_cfg,
                   master: int, iteration: int) -> ParticleSystem:
    n, k = system.n_particles, system.k
    stds = smc_cfg.proposal_stds(priors)
    eps = np.empty((n, smc_cfg.n_mcmc, k, 3))
    log_u = np.empty((n, smc_cfg.n_mcmc, k))
    for m in range(n):
        rng = _stream(master, iteration, _ROLE_PARTICLE, m)
        eps[m], log_u[m] = _draw_move_noise(rng, smc_cfg.n_mcmc, k, stds)
    logpri = block_log_prior(system.thetas, priors.location, priors.power)
    blocks, loglik, _ = _mwg_sweeps(system.thetas, system.loglik, logpri,
                                    eps, log_u, system.phi, z, cfg, priors)
    return replace(system, thetas=blocks, loglik=loglik)


@dataclass(frozen=True, eq=False)
class SmcResult:
    """Outcome of one tempered run: final particles plus diagnostics."""

    system: ParticleSystem
    log_evidence: float
    n_iters: int
    schedule: tuple
    n_resamples: int

    @property
    def ess(self) -> float:
        return ess_log(self.system.log_weights)


def run_smc(k: int, z, cfg: ScenarioConfig, priors: SourcePriors,
            smc_cfg: SmcConfig, seed) -> SmcResult:
    """Run the tempered sampler for the k-source model.

    Initializes particles from the prior with uniform weights, then loops
    temperature search, reweighting, conditional resampling and mutation
    (in exactly that order, since the increments depend only on the
    pre-mutation particles) until phi reaches 1.  ``seed`` is a master
    integer seed or a Generator from which one is drawn; given the same
    master seed the output is bitwise reproducible.

    Returns an SmcResult whose ``system`` approximates the posterior and
    whose ``log_evidence`` estimates log p(z) for this model without bias
    on the linear scale.
    """
    if k < 1:
        raise ConfigError("need at least one source")
    master = _master_seed(seed)
    n = smc_cfg.n_particles
    thetas = np.empty((n, k, 3))
    for m in range(n):
        rng = _stream(master, 0, _ROLE_PARTICLE, m)
        thetas[m] = sample_prior_blocks(k, priors.location, priors.power, rng)
    system = ParticleSystem(
        thetas=thetas,
        log_weights=np.full(n, -math.log(n)),
        phi=0.0,
        log_evidence=0.0,
        loglik=loglik_batch(thetas, z, cfg),
    )
    cess_target = smc_cfg.cess_frac * n
    ess_threshold = smc_cfg.ess_frac * n
    schedule = [0.0]
    t = 1
    n_resamples = 0
    while system.phi < 1.0:
        t += 1
        if t > smc_cfg.max_iters:
            raise StalledSchedule(f"temperature schedule exceeded {smc_cfg.max_iters} iterations")
        phi_new = find_next_temperature(system, cess_target, smc_cfg.phi_tol)
        system = reweight(system, phi_new)
        schedule.append(phi_new)
        if ess_log(system.log_weights) < ess_threshold:
            system = resample(system, _stream(master, t, _ROLE_RESAMPLE, 0))
            n_resamples += 1
        system = _mutate_system(system, z, cfg, priors, smc_cfg, master, t)
    return SmcResult(
        system=system,
        log_evidence=system.log_evidence,
        n_iters=t,
        schedule=tuple(schedule),
        n_resamples=n_resamples,
    )


def posterior_expectation(system: ParticleSystem, f) -> np.ndarray:
    """Weighted posterior expectation of f(theta) over the particle system."""
    vals = np.stack([np.asarray(f(SourceParams(b)), dtype=float) for b in system.thetas])
    return np.tensordot(system.weights(), vals, axes=(0, 0))
