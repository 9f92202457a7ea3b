"""Exception types shared across the package."""


class SmclocError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(SmclocError):
    """Invalid scenario, prior, or algorithm configuration."""


class SingularDistance(SmclocError):
    """A source coincides exactly with a sensor; the attenuation model diverges."""


class ZeroIncrement(SmclocError):
    """All incremental weights are zero, so the CESS is undefined."""


class StalledSchedule(SmclocError):
    """The tempering schedule cannot make progress (weight collapse)."""


class AllZeroWeights(SmclocError):
    """Every particle weight underflowed to zero."""


class FactorialOverflow(SmclocError):
    """Too many source blocks for exhaustive permutation search."""


class SingularCovariance(SmclocError):
    """A running covariance could not be regularized to positive definite."""


class SingularFim(SmclocError):
    """The Fisher information matrix is numerically singular."""


class NoFiniteEvidence(SmclocError):
    """No candidate model produced a finite evidence estimate."""


class DimensionMismatch(SmclocError):
    """Vectors passed to a metric have incompatible shapes."""
