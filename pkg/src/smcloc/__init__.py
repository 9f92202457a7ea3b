"""Multiple-source localization from quantized wireless-sensor readings.

The package infers an unknown number of energy-emitting sources from
M-bit quantized amplitude measurements collected over a noisy channel at
a fusion center.  One tempered SMC sampler runs per candidate source
count; marginal-likelihood estimates drive MAP model selection, the
selected posterior sample is relabeled to undo label switching, and a
posterior Cramer-Rao bound calculator benchmarks estimator accuracy.
"""

from .errors import (
    AllZeroWeights,
    ConfigError,
    DimensionMismatch,
    FactorialOverflow,
    NoFiniteEvidence,
    SingularCovariance,
    SingularDistance,
    SingularFim,
    SmclocError,
    StalledSchedule,
    ZeroIncrement,
)
from .priors import (
    LocationPrior,
    ModelPrior,
    PowerPrior,
    SourcePriors,
    default_hyperparams,
    default_priors,
    log_prior,
    sample_prior,
)
from .sensor_model import (
    ChannelMatrix,
    ObservationVector,
    Quantizer,
    ScenarioConfig,
    SourceParams,
    log_likelihood,
    simulate,
)
from .smc import ParticleSystem, SmcConfig, SmcResult, run_smc
from .selection import IsResult, ModelEvidenceTable, match_budget, model_posterior, run_is, select_map
from .relabel import mmse_estimate, online_relabel, permute_blocks
from .pcrb import PcrbConfig, PcrbResult, pcrb_bound
from .harness import ExperimentManifest, RunReport, infer, mse, run_experiment, variance_study

__version__ = "0.1.0"
