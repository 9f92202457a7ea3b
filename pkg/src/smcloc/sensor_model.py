"""Forward model of the quantized wireless sensor network.

Each source emits a signal whose amplitude decays with distance; the
contributions of all sources superimpose linearly at every sensor, get
corrupted by additive Gaussian noise, are quantized locally to L levels
and reach the fusion center through a noisy discrete channel.  This
module evaluates the resulting observation likelihood and simulates
synthetic observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, log_ndtr, ndtr

from .errors import ConfigError, SingularDistance

# Distances below this (in meters) are clamped so that prior samples
# landing next to a sensor keep a finite likelihood; an exact coincidence
# still raises SingularDistance.
D_MIN = 1e-3

_SQRT2 = math.sqrt(2.0)


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


def q_function(x):
    """Upper-tail probability Q(x) of the standard normal distribution."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / _SQRT2)


@dataclass(frozen=True, eq=False)
class Quantizer:
    """M-bit quantizer described by its L + 1 thresholds.

    ``thresholds[0]`` is -inf, ``thresholds[L]`` is +inf and the interior
    thresholds are finite and strictly increasing.  Bins are
    lower-inclusive: input s maps to the level l with
    thresholds[l] <= s < thresholds[l + 1].
    """

    thresholds: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        if t.ndim != 1 or t.size < 3:
            raise ConfigError("quantizer needs at least 3 thresholds (L >= 2)")
        if not (np.isneginf(t[0]) and np.isposinf(t[-1])):
            raise ConfigError("first/last quantizer thresholds must be -inf/+inf")
        if not np.all(np.isfinite(t[1:-1])):
            raise ConfigError("interior quantizer thresholds must be finite")
        if not np.all(np.diff(t) > 0):
            raise ConfigError("quantizer thresholds must be strictly increasing")
        object.__setattr__(self, "thresholds", _frozen(t))

    @classmethod
    def from_bits(cls, bits: int, lambda_min: float = 0.0, lambda_max: float = 22.0) -> "Quantizer":
        """Build a 2**bits-level quantizer with equally spaced interior thresholds."""
        if bits < 1:
            raise ConfigError("quantizer needs at least 1 bit")
        levels = 2 ** int(bits)
        interior = np.linspace(lambda_min, lambda_max, levels - 1)
        return cls(np.concatenate(([-np.inf], interior, [np.inf])))

    @property
    def levels(self) -> int:
        return self.thresholds.size - 1

    @property
    def interior(self) -> np.ndarray:
        return self.thresholds[1:-1]


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    """Discrete channel with transition probabilities probs[j, m] = p(z=j | b=m)."""

    probs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.probs, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ConfigError("channel matrix must be square")
        if np.any(c < 0.0) or np.any(c > 1.0):
            raise ConfigError("channel entries must lie in [0, 1]")
        if np.max(np.abs(c.sum(axis=0) - 1.0)) > 1e-12:
            raise ConfigError("each channel column must sum to 1")
        object.__setattr__(self, "probs", _frozen(c))

    @classmethod
    def identity(cls, levels: int) -> "ChannelMatrix":
        """Perfect link: every symbol arrives unchanged."""
        return cls(np.eye(levels))

    @classmethod
    def symmetric(cls, levels: int, epsilon: float) -> "ChannelMatrix":
        """L-ary symmetric channel: error probability epsilon spread evenly."""
        if not 0.0 <= epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if levels < 2:
            raise ConfigError("symmetric channel needs at least 2 levels")
        c = np.full((levels, levels), epsilon / (levels - 1))
        np.fill_diagonal(c, 1.0 - epsilon)
        return cls(c)

    @property
    def levels(self) -> int:
        return self.probs.shape[0]

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.probs, np.eye(self.levels)))


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Static description of the sensing scenario.

    Fields
    ------
    sensors : (N, 2) array of sensor coordinates in meters
    roi_side : side length of the square region of interest
    decay_n : signal decay exponent
    d0 : reference distance for the transmitted power
    sigma2 : measurement-noise variance at every sensor
    quantizer, channel : local quantizer and sensor-to-fusion channel
    """

    sensors: np.ndarray
    roi_side: float
    decay_n: float
    d0: float
    sigma2: float
    quantizer: Quantizer
    channel: ChannelMatrix

    def __post_init__(self):
        s = np.asarray(self.sensors, dtype=float)
        if s.ndim != 2 or s.shape[1] != 2 or s.shape[0] == 0:
            raise ConfigError("sensors must be a non-empty (N, 2) array")
        if not np.all(np.isfinite(s)):
            raise ConfigError("sensor coordinates must be finite")
        if self.roi_side <= 0:
            raise ConfigError("roi_side must be positive")
        if np.any(s < 0.0) or np.any(s > self.roi_side):
            raise ConfigError("sensors must lie inside the region of interest")
        for name in ("decay_n", "d0", "sigma2"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.channel.levels != self.quantizer.levels:
            raise ConfigError("channel size must match the number of quantizer levels")
        object.__setattr__(self, "sensors", _frozen(s))

    @property
    def n_sensors(self) -> int:
        return self.sensors.shape[0]

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def levels(self) -> int:
        return self.quantizer.levels


@dataclass(frozen=True, eq=False)
class SourceParams:
    """Parameters of k sources: one (power, x, y) row per source."""

    blocks: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=float)
        if b.ndim != 2 or b.shape[1] != 3 or b.shape[0] < 1:
            raise ConfigError("blocks must be a non-empty (k, 3) array")
        if not np.all(np.isfinite(b)):
            raise ConfigError("source parameters must be finite")
        if np.any(b[:, 0] <= 0.0):
            raise ConfigError("source powers must be positive")
        object.__setattr__(self, "blocks", _frozen(b))

    @classmethod
    def from_vector(cls, vec) -> "SourceParams":
        v = np.asarray(vec, dtype=float)
        if v.ndim != 1 or v.size % 3 != 0:
            raise ConfigError("flat parameter vector length must be a multiple of 3")
        return cls(v.reshape(-1, 3))

    def as_vector(self) -> np.ndarray:
        return self.blocks.reshape(-1).copy()

    @property
    def k(self) -> int:
        return self.blocks.shape[0]

    @property
    def powers(self) -> np.ndarray:
        return self.blocks[:, 0]

    @property
    def xy(self) -> np.ndarray:
        return self.blocks[:, 1:]


@dataclass(frozen=True, eq=False)
class ObservationVector:
    """Quantized levels received at the fusion center, one per sensor."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z)
        if z.ndim != 1 or z.size == 0:
            raise ConfigError("observations must be a non-empty 1-d sequence")
        if not np.issubdtype(z.dtype, np.integer):
            zi = z.astype(int)
            if np.any(zi != z):
                raise ConfigError("observations must be integers")
            z = zi
        if np.any(z < 0):
            raise ConfigError("observation levels must be non-negative")
        object.__setattr__(self, "z", _frozen(z, dtype=int))

    def validate_for(self, cfg: ScenarioConfig) -> None:
        if self.z.size != cfg.n_sensors:
            raise ConfigError("observation length must equal the sensor count")
        if np.any(self.z >= cfg.levels):
            raise ConfigError("observation level exceeds the quantizer range")


def _as_levels(z, cfg: ScenarioConfig) -> np.ndarray:
    obs = z if isinstance(z, ObservationVector) else ObservationVector(np.asarray(z))
    obs.validate_for(cfg)
    return obs.z


def distance(p, q) -> float:
    """Euclidean distance between two planar points."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(np.hypot(p[0] - q[0], p[1] - q[1]))


def source_sensor_distances(blocks, cfg: ScenarioConfig) -> np.ndarray:
    """Distances from every source to every sensor, clamped below at D_MIN.

    ``blocks`` has shape (..., k, 3); the result has shape (..., k, N).
    Raises SingularDistance if a source sits exactly on a sensor.
    """
    xy = np.asarray(blocks, dtype=float)[..., 1:]
    diff = xy[..., :, None, :] - cfg.sensors[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    if np.any(d == 0.0):
        raise SingularDistance("a source coincides exactly with a sensor")
    return np.maximum(d, D_MIN)


def amplitudes_batch(blocks, cfg: ScenarioConfig) -> np.ndarray:
    """Noise-free amplitude at every sensor for (..., k, 3) parameter blocks."""
    blocks = np.asarray(blocks, dtype=float)
    d = source_sensor_distances(blocks, cfg)
    att = (cfg.d0 / d) ** (cfg.decay_n / 2.0)
    return np.sum(np.sqrt(blocks[..., 0])[..., None] * att, axis=-2)


def amplitudes(theta: SourceParams, cfg: ScenarioConfig) -> np.ndarray:
    """Amplitude vector over all sensors for one parameter set."""
    return amplitudes_batch(theta.blocks, cfg)


def amplitude(sensor_index: int, theta: SourceParams, cfg: ScenarioConfig) -> float:
    """Superimposed signal amplitude received by one sensor."""
    return float(amplitudes(theta, cfg)[sensor_index])


def quantize(s, q: Quantizer):
    """Map input amplitude(s) to quantization level(s), lower-inclusive bins."""
    lev = np.searchsorted(q.interior, s, side="right")
    if np.ndim(s) == 0:
        return int(lev)
    return lev


def level_probs_for_amplitude(a, cfg: ScenarioConfig) -> np.ndarray:
    """Probability of every quantizer output for amplitude(s) ``a``.

    Entry l is Q((lambda_l - a) / sigma) - Q((lambda_{l+1} - a) / sigma).
    The difference is computed from whichever tail keeps both operands
    small, so entries stay accurate far from the bin edges.
    """
    a = np.asarray(a, dtype=float)
    u = (cfg.quantizer.thresholds - a[..., None]) / cfg.sigma
    lo = u[..., :-1]
    hi = u[..., 1:]
    upper_tail = (lo + hi) >= 0.0
    probs = np.where(upper_tail, q_function(lo) - q_function(hi), ndtr(hi) - ndtr(lo))
    return np.clip(probs, 0.0, 1.0)


def _log_diff(log_big, log_small) -> np.ndarray:
    """log(exp(log_big) - exp(log_small)) with log_small <= log_big."""
    with np.errstate(invalid="ignore", divide="ignore"):
        out = log_big + np.log1p(-np.exp(log_small - log_big))
    return np.where(np.isneginf(log_big), -np.inf, out)


def _log_tail_diff(lo, hi) -> np.ndarray:
    """log(Phi(hi) - Phi(lo)) elementwise, stable deep into either tail.

    Bin masses far into a tail underflow to zero on the linear scale, so
    the difference of tail probabilities is formed from whichever tail
    keeps both operands representable; the result only reaches -inf when
    the mass is genuinely below the floating-point range.
    """
    upper_tail = (lo + hi) >= 0.0
    log_big = np.where(upper_tail, log_ndtr(-lo), log_ndtr(hi))
    log_small = np.where(upper_tail, log_ndtr(-hi), log_ndtr(lo))
    return _log_diff(log_big, log_small)


def log_level_probs_for_amplitude(a, cfg: ScenarioConfig) -> np.ndarray:
    """Log of the level probabilities, stable deep into the Gaussian tails."""
    a = np.asarray(a, dtype=float)
    u = (cfg.quantizer.thresholds - a[..., None]) / cfg.sigma
    log_phi = log_ndtr(u)
    log_q = log_ndtr(-u)
    upper_tail = (u[..., :-1] + u[..., 1:]) >= 0.0
    log_big = np.where(upper_tail, log_q[..., :-1], log_phi[..., 1:])
    log_small = np.where(upper_tail, log_q[..., 1:], log_phi[..., :-1])
    return _log_diff(log_big, log_small)


def level_probs(sensor_index: int, theta: SourceParams, cfg: ScenarioConfig) -> np.ndarray:
    """Distribution of the quantizer output at one sensor."""
    a = amplitude(sensor_index, theta, cfg)
    return level_probs_for_amplitude(a, cfg)


def obs_probs(sensor_index: int, theta: SourceParams, cfg: ScenarioConfig) -> np.ndarray:
    """Distribution of the received symbol at the fusion center for one sensor."""
    return cfg.channel.probs @ level_probs(sensor_index, theta, cfg)


def obs_prob(sensor_index: int, theta: SourceParams, cfg: ScenarioConfig, j: int) -> float:
    """Probability that the fusion center receives level j from one sensor."""
    if not 0 <= j < cfg.levels:
        raise ConfigError("received level outside the quantizer range")
    return float(cfg.channel.probs[j] @ level_probs(sensor_index, theta, cfg))


def loglik_batch(blocks, z, cfg: ScenarioConfig) -> np.ndarray:
    """Log-likelihood of observations ``z`` for a batch of parameter blocks.

    ``blocks`` has shape (..., k, 3); returns shape (...).  The whole
    computation stays in the log domain; an entry only comes back -inf
    when some observation probability underflows to zero even there.
    """
    zz = _as_levels(z, cfg)
    amp = amplitudes_batch(blocks, cfg)
    if cfg.channel.is_identity:
        # Only the observed bin matters, so skip the other L - 1 edges.
        edges = cfg.quantizer.thresholds
        lo = (edges[zz] - amp) / cfg.sigma
        hi = (edges[zz + 1] - amp) / cfg.sigma
        return np.sum(_log_tail_diff(lo, hi), axis=-1)
    llp = log_level_probs_for_amplitude(amp, cfg)
    with np.errstate(divide="ignore"):
        log_rows = np.log(cfg.channel.probs[zz])
    terms = llp + log_rows
    top = np.max(terms, axis=-1)
    safe_top = np.where(np.isneginf(top), 0.0, top)
    per_sensor = safe_top + np.log(np.sum(np.exp(terms - safe_top[..., None]), axis=-1))
    per_sensor = np.where(np.isneginf(top), -np.inf, per_sensor)
    return np.sum(per_sensor, axis=-1)


def log_likelihood(z, theta: SourceParams, cfg: ScenarioConfig) -> float:
    """Total log-likelihood of the received observation vector."""
    return float(loglik_batch(theta.blocks, z, cfg))


def simulate(theta: SourceParams, cfg: ScenarioConfig, rng: np.random.Generator) -> ObservationVector:
    """Draw one observation vector: noise, quantization, then channel."""
    amp = amplitudes(theta, cfg)
    s = amp + rng.normal(0.0, cfg.sigma, size=amp.size)
    b = quantize(s, cfg.quantizer)
    u = rng.uniform(size=amp.size)
    col_cdf = np.cumsum(cfg.channel.probs, axis=0).T[b]
    z = np.sum(col_cdf < u[:, None], axis=1)
    return ObservationVector(np.minimum(z, cfg.levels - 1))
