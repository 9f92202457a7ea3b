"""Label-switching resolution by online weighted relabeling.

The posterior over source parameters is invariant under block
permutations, which makes naive posterior means collapse the symmetric
modes.  The online pass below visits particles in order of decreasing
weight and permutes each one so that it looks most Gaussian under the
running weighted moments, after which a weighted mean is a meaningful
point estimate.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigError, FactorialOverflow, SingularCovariance
from .priors import SourcePriors
from .sensor_model import SourceParams

MAX_BLOCKS = 8  # k! permutations are enumerated exhaustively

_LOG_2PI = math.log(2.0 * math.pi)


def permute_blocks(theta: SourceParams, perm) -> SourceParams:
    """Reorder the (P, x, y) blocks: row i of the result is block perm[i]."""
    p = np.asarray(perm)
    if sorted(p.tolist()) != list(range(theta.k)):
        raise ConfigError("perm must be a permutation of 0..k-1")
    return SourceParams(theta.blocks[p])


def _regularized_cholesky(sigma: np.ndarray) -> np.ndarray:
    dim = sigma.shape[0]
    trace = float(np.trace(sigma))
    if not np.isfinite(trace):
        raise SingularCovariance("covariance trace is not finite")
    reg = sigma + (1e-6 * trace / dim) * np.eye(dim)
    try:
        return np.linalg.cholesky(reg)
    except np.linalg.LinAlgError:
        raise SingularCovariance("covariance is not positive definite after regularization")


def _mvn_logpdf(vectors: np.ndarray, mu: np.ndarray, chol: np.ndarray) -> np.ndarray:
    dim = mu.size
    diff = np.atleast_2d(vectors) - mu
    y = solve_triangular(chol, diff.T, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (dim * _LOG_2PI + log_det + np.sum(y * y, axis=0))


def gaussian_log_cost(theta, mu, sigma) -> float:
    """Multivariate normal log density of the flattened parameter vector.

    ``sigma`` is regularized toward positive definite before evaluation;
    SingularCovariance is raised when that fails.
    """
    vec = theta.as_vector() if isinstance(theta, SourceParams) else np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if vec.shape != mu.shape:
        raise ConfigError("theta and mu must have matching lengths")
    chol = _regularized_cholesky(np.asarray(sigma, dtype=float))
    return float(_mvn_logpdf(vec, mu, chol)[0])


def initial_covariance(k: int, priors: SourcePriors) -> np.ndarray:
    """Scale-correct diagonal start: prior variances per block component."""
    block = [priors.power.var, priors.location.var[0], priors.location.var[1]]
    return np.diag(np.tile(block, k))


def relabel_particles(thetas, weights, priors: SourcePriors):
    """Online relabeling of a weighted particle set.

    Particles are sorted by descending weight (stable, index tie-break).
    The first particle seeds the running mean; its covariance starts from
    the prior variances.  Every later particle is replaced by the block
    permutation maximizing the Gaussian density under the running
    moments, and the weighted mean and covariance are then refreshed over
    all particles seen so far.  Weights are preserved.

    Returns (relabeled (N, k, 3) array, weights in sorted order).
    """
    th = np.asarray(thetas, dtype=float)
    w = np.asarray(weights, dtype=float)
    if th.ndim != 3 or th.shape[2] != 3:
        raise ConfigError("expected an (N, k, 3) particle array")
    if w.shape != (th.shape[0],):
        raise ConfigError("need one weight per particle")
    k = th.shape[1]
    if k > MAX_BLOCKS:
        raise FactorialOverflow(f"permutation search is limited to k <= {MAX_BLOCKS}")

    order = np.argsort(-w, kind="stable")
    th = th[order].copy()
    w = w[order]
    if k == 1 or th.shape[0] == 1:
        return th, w

    perms = np.array(list(itertools.permutations(range(k))))
    dim = 3 * k
    flat0 = th[0].reshape(dim)
    mu = flat0.copy()
    sigma = initial_covariance(k, priors)
    sum_w = w[0]
    sum_wx = w[0] * flat0
    # The initialization enters the running scatter as one seed-weighted
    # pseudo-observation; a bare weighted scatter is rank-deficient until
    # roughly 3k particles have been seen, which makes the permutation
    # cost meaningless exactly when it matters most.  The pseudo-term
    # decays like 1/n, so the moments still converge to the weighted ones.
    sum_wxx = w[0] * (np.outer(flat0, flat0) + sigma)

    for n in range(1, th.shape[0]):
        chol = _regularized_cholesky(sigma)
        cands = th[n][perms].reshape(perms.shape[0], dim)
        costs = _mvn_logpdf(cands, mu, chol)
        best = int(np.argmax(costs))
        th[n] = th[n][perms[best]]
        flat = cands[best]
        sum_w += w[n]
        sum_wx += w[n] * flat
        sum_wxx += w[n] * np.outer(flat, flat)
        mu = sum_wx / sum_w
        sigma = sum_wxx / sum_w - np.outer(mu, mu)
        sigma = 0.5 * (sigma + sigma.T)
    return th, w


def online_relabel(thetas, weights, priors: SourcePriors):
    """Alias of relabel_particles matching the pipeline vocabulary."""
    return relabel_particles(thetas, weights, priors)


def mmse_estimate(thetas, weights) -> SourceParams:
    """Weighted mean of the (relabeled) particles as a point estimate."""
    th = np.asarray(thetas, dtype=float)
    w = np.asarray(weights, dtype=float)
    if w.shape != (th.shape[0],):
        raise ConfigError("need one weight per particle")
    return SourceParams(np.tensordot(w, th, axes=(0, 0)))
