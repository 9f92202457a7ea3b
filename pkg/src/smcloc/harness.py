"""Experiment orchestration: truth generation, inference runs, studies.

The entry points mirror the study layout used throughout: a single
``infer`` call runs every candidate model with both samplers and selects
the source count, ``run_experiment`` repeats that over replicates and
sweep axes and scores localization error against the information bound,
and ``variance_study`` measures estimator variability on one fixed
realization.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import config as cfg_io
from .errors import ConfigError, DimensionMismatch, SmclocError
from .pcrb import PcrbConfig, pcrb_bound
from .priors import ModelPrior, SourcePriors, sample_prior_blocks
from .relabel import mmse_estimate, relabel_particles
from .selection import IsResult, ModelEvidenceTable, match_budget, run_is
from .sensor_model import ObservationVector, ScenarioConfig, SourceParams, simulate
from .smc import SmcConfig, SmcResult, run_smc

# Sub-stream roles for deriving replicate seeds from the manifest seed.
_R_TRUTH = 1
_R_OBS = 2
_R_SMC = 3
_R_IS = 4
_R_CAL = 5
_R_PCRB = 6
_R_VAR = 7


def _locations(value) -> np.ndarray:
    if isinstance(value, SourceParams):
        return np.array(value.xy, dtype=float)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        if arr.size % 2 != 0:
            raise DimensionMismatch("flat location vector length must be even")
        arr = arr.reshape(-1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DimensionMismatch("locations must be a (k, 2) array")
    return arr


def mse(estimate, truth) -> float:
    """Summed squared location error after minimum-cost block alignment.

    Relabeling makes the estimate internally consistent but does not fix
    its correspondence to the ground truth, so blocks are matched by the
    assignment minimizing total squared distance before scoring.
    """
    est = _locations(estimate)
    tru = _locations(truth)
    if est.shape != tru.shape:
        raise DimensionMismatch("estimate and truth must hold the same number of blocks")
    cost = ((est[:, None, :] - tru[None, :, :]) ** 2).sum(axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def draw_truth(k: int, priors: SourcePriors, rng: np.random.Generator,
               min_separation: float = 0.0, max_tries: int = 1000) -> SourceParams:
    """Prior draw of a ground truth, rejecting near-coincident sources."""
    for _ in range(max_tries):
        blocks = sample_prior_blocks(k, priors.location, priors.power, rng)
        if k == 1 or min_separation <= 0.0:
            return SourceParams(blocks)
        xy = blocks[:, 1:]
        d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=-1)
        d2[np.diag_indices(k)] = np.inf
        if math.sqrt(d2.min()) >= min_separation:
            return SourceParams(blocks)
    raise ConfigError("could not draw sources satisfying the separation constraint")


@dataclass(eq=False)
class InferenceOutcome:
    """Per-model runs of both samplers plus the selection tables."""

    smc_runs: list[SmcResult]
    is_runs: list[IsResult]
    smc_table: ModelEvidenceTable
    is_table: ModelEvidenceTable
    priors: SourcePriors

    def relabeled_mmse(self, k: int) -> SourceParams:
        system = self.smc_runs[k - 1].system
        th, w = relabel_particles(system.thetas, system.weights(), self.priors)
        return mmse_estimate(th, w)

    def raw_mmse(self, k: int) -> SourceParams:
        system = self.smc_runs[k - 1].system
        return mmse_estimate(system.thetas, system.weights())

    def relabeled_is_mmse(self, k: int) -> SourceParams:
        res = self.is_runs[k - 1]
        th, w = relabel_particles(res.thetas, res.weights(), self.priors)
        return mmse_estimate(th, w)

    def report(self) -> dict:
        per_model = {}
        for i, (s, b) in enumerate(zip(self.smc_runs, self.is_runs)):
            per_model[str(i + 1)] = {
                "log_evidence": s.log_evidence,
                "ess": s.ess,
                "ess_scaled": s.ess / s.system.n_particles,
                "n_iters": s.n_iters,
                "is_log_evidence": b.log_evidence,
                "is_ess": b.ess,
                "is_ess_scaled": b.ess / b.n_particles,
                "n_is": b.n_particles,
            }
        k_star = self.smc_table.k_star
        return {
            "per_model": per_model,
            "posterior": self.smc_table.posterior.tolist(),
            "k_star": k_star,
            "is_posterior": self.is_table.posterior.tolist(),
            "is_k_star": self.is_table.k_star,
            "mmse": {
                "raw": self.raw_mmse(k_star).blocks.tolist(),
                "relabeled": self.relabeled_mmse(k_star).blocks.tolist(),
            },
        }


def infer(z, cfg: ScenarioConfig, priors: SourcePriors, smc_cfg: SmcConfig,
          k_max: int = 5, model_prior: ModelPrior | None = None, seed: int = 0,
          n_is_per_model: list[int] | None = None) -> InferenceOutcome:
    """Run both samplers for every candidate source count and select.

    Each model runs its own tempered sampler on a derived seed; the
    importance sampler gets a budget of T * N particles per model, with T
    taken from ``n_is_per_model`` when provided (calibrated externally)
    and from the model's own run otherwise.
    """
    if model_prior is None:
        model_prior = ModelPrior.uniform(k_max)
    if model_prior.k_max != k_max:
        raise ConfigError("model prior size must equal k_max")
    smc_runs = []
    is_runs = []
    for k in range(1, k_max + 1):
        res = run_smc(k, z, cfg, priors, smc_cfg, np.random.default_rng([seed, _R_SMC, k]))
        smc_runs.append(res)
        n_is = (n_is_per_model[k - 1] if n_is_per_model is not None
                else match_budget(res.n_iters, smc_cfg.n_particles))
        is_runs.append(run_is(k, z, cfg, priors, n_is,
                              np.random.default_rng([seed, _R_IS, k])))
    smc_table = ModelEvidenceTable.build(
        [r.log_evidence for r in smc_runs], [r.ess for r in smc_runs],
        [r.n_iters for r in smc_runs], model_prior)
    is_table = ModelEvidenceTable.build(
        [r.log_evidence for r in is_runs], [r.ess for r in is_runs],
        [1 for _ in is_runs], model_prior)
    return InferenceOutcome(smc_runs, is_runs, smc_table, is_table, priors)


@dataclass(frozen=True, eq=False)
class ExperimentManifest:
    """Declarative description of one experiment campaign."""

    scenario: dict
    smc: dict = field(default_factory=dict)
    k_true: int = 4
    k_max: int = 5
    n_replicates: int = 20
    seed: int = 0
    min_separation: float = 5.0
    level_sweep: tuple = ()
    sensor_sweep: tuple = ()
    pcrb_n_mc: int = 1000

    def __post_init__(self):
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be at least 1")
        if not 1 <= self.k_true <= self.k_max:
            raise ConfigError("k_true must lie in 1..k_max")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentManifest":
        try:
            return cls(
                scenario=doc["scenario"],
                smc=doc.get("smc", {}),
                k_true=int(doc.get("k_true", 4)),
                k_max=int(doc.get("k_max", 5)),
                n_replicates=int(doc.get("n_replicates", 20)),
                seed=int(doc.get("seed", 0)),
                min_separation=float(doc.get("min_separation", 5.0)),
                level_sweep=tuple(doc.get("sweeps", {}).get("levels", ())),
                sensor_sweep=tuple(doc.get("sweeps", {}).get("n_sensors", ())),
                pcrb_n_mc=int(doc.get("pcrb", {}).get("n_mc", 1000)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment manifest: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "smc": self.smc,
            "k_true": self.k_true,
            "k_max": self.k_max,
            "n_replicates": self.n_replicates,
            "seed": self.seed,
            "min_separation": self.min_separation,
            "sweeps": {"levels": list(self.level_sweep),
                       "n_sensors": list(self.sensor_sweep)},
            "pcrb": {"n_mc": self.pcrb_n_mc},
        }


def _point_doc(base: dict, levels: int | None, n_sensors: int | None) -> dict:
    doc = copy.deepcopy(base)
    if levels is not None:
        bits = int(round(math.log2(levels)))
        if 2**bits != levels:
            raise ConfigError("swept level counts must be powers of two")
        doc.setdefault("quantizer", {})["bits"] = bits
    if n_sensors is not None:
        side = math.isqrt(int(n_sensors))
        if side * side != n_sensors:
            raise ConfigError("swept sensor counts must be perfect squares")
        doc.pop("sensors", None)
        doc["grid"] = {"rows": side, "cols": side}
    return doc


def _mean_se(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(arr.mean()), se


def _evaluate_point(doc: dict, manifest: ExperimentManifest, smc_cfg: SmcConfig,
                    model_prior: ModelPrior) -> dict:
    cfg, priors = cfg_io.scenario_from_dict(doc)
    levels, n_sensors = cfg.levels, cfg.n_sensors
    seed = manifest.seed
    k_max = manifest.k_max

    # Calibration pre-run on a dedicated realization fixes the importance
    # sampler budget T * N for every model at this configuration.
    cal_rep = manifest.n_replicates
    cal_truth = draw_truth(manifest.k_true, priors,
                           np.random.default_rng([seed, _R_TRUTH, cal_rep]),
                           manifest.min_separation)
    cal_z = simulate(cal_truth, cfg,
                     np.random.default_rng([seed, levels, n_sensors, _R_OBS, cal_rep]))
    t_avg = []
    for k in range(1, k_max + 1):
        res = run_smc(k, cal_z, cfg, priors, smc_cfg,
                      np.random.default_rng([seed, levels, n_sensors, _R_CAL, k]))
        t_avg.append(res.n_iters)
    n_is = [match_budget(t, smc_cfg.n_particles) for t in t_avg]

    replicates = []
    failures = []
    for rep in range(manifest.n_replicates):
        truth = draw_truth(manifest.k_true, priors,
                           np.random.default_rng([seed, _R_TRUTH, rep]),
                           manifest.min_separation)
        z = simulate(truth, cfg,
                     np.random.default_rng([seed, levels, n_sensors, _R_OBS, rep]))
        try:
            outcome = infer(z, cfg, priors, smc_cfg, k_max, model_prior,
                            seed=int(np.random.default_rng(
                                [seed, levels, n_sensors, _R_SMC, rep]).integers(2**63)),
                            n_is_per_model=n_is)
            est_smc = outcome.relabeled_mmse(manifest.k_true)
            est_is = outcome.relabeled_is_mmse(manifest.k_true)
            replicates.append({
                "truth": truth.blocks.tolist(),
                "k_star_smc": outcome.smc_table.k_star,
                "k_star_is": outcome.is_table.k_star,
                "log_evidence_smc": outcome.smc_table.log_evidence.tolist(),
                "log_evidence_is": outcome.is_table.log_evidence.tolist(),
                "ess_scaled_smc": (outcome.smc_table.ess / smc_cfg.n_particles).tolist(),
                "ess_scaled_is": [r.ess / r.n_particles for r in outcome.is_runs],
                "n_iters": outcome.smc_table.n_iters.tolist(),
                "mse_smc": mse(est_smc, truth),
                "mse_is": mse(est_is, truth),
                "mmse_smc": est_smc.blocks.tolist(),
            })
        except SmclocError as exc:
            failures.append({"replicate": rep, "error": str(exc)})

    bound = pcrb_bound(manifest.k_true, cfg, priors,
                       PcrbConfig(n_mc=manifest.pcrb_n_mc,
                                  seed=int(np.random.default_rng(
                                      [seed, levels, n_sensors, _R_PCRB]).integers(2**63))))

    mse_smc_mean, mse_smc_se = _mean_se([r["mse_smc"] for r in replicates])
    mse_is_mean, mse_is_se = _mean_se([r["mse_is"] for r in replicates])
    counts_smc = [sum(1 for r in replicates if r["k_star_smc"] == k)
                  for k in range(1, k_max + 1)]
    counts_is = [sum(1 for r in replicates if r["k_star_is"] == k)
                 for k in range(1, k_max + 1)]
    ess_smc = np.array([r["ess_scaled_smc"] for r in replicates])
    ess_is = np.array([r["ess_scaled_is"] for r in replicates])
    return {
        "levels": levels,
        "n_sensors": n_sensors,
        "sigma2": cfg.sigma2,
        "t_avg": t_avg,
        "n_is": n_is,
        "mse_smc": mse_smc_mean,
        "mse_smc_se": mse_smc_se,
        "mse_is": mse_is_mean,
        "mse_is_se": mse_is_se,
        "pcrb_bound": bound.location_mse_bound,
        "selection_counts_smc": counts_smc,
        "selection_counts_is": counts_is,
        "ess_scaled_smc": ess_smc.mean(axis=0).tolist() if len(replicates) else [],
        "ess_scaled_is": ess_is.mean(axis=0).tolist() if len(replicates) else [],
        "replicates": replicates,
        "failures": failures,
    }


@dataclass(eq=False)
class RunReport:
    """Everything an experiment produced, ready for serialization."""

    manifest: dict
    base: dict
    sweeps: dict
    wall_clock: float

    def to_dict(self) -> dict:
        return {
            "manifest": self.manifest,
            "base": self.base,
            "sweeps": self.sweeps,
            "wall_clock": self.wall_clock,
        }


def run_experiment(manifest: ExperimentManifest) -> RunReport:
    """Run the full campaign described by the manifest.

    Every replicate draws a fresh truth from the prior (with the
    minimum-separation rejection), simulates observations, runs both
    samplers across all candidate models, selects, relabels, and scores
    the location error of the true-model estimate.  Truth draws share
    streams across sweep points so sweep comparisons are paired.  The
    entire report is a pure function of the manifest.
    """
    start = time.perf_counter()
    smc_cfg, _, _ = cfg_io.smc_config_from_dict(manifest.smc)
    model_prior = ModelPrior.uniform(manifest.k_max)

    cache: dict[tuple, dict] = {}

    def point(levels=None, n_sensors=None):
        doc = _point_doc(manifest.scenario, levels, n_sensors)
        cfg, _ = cfg_io.scenario_from_dict(doc)
        key = (cfg.levels, cfg.n_sensors, cfg.sigma2)
        if key not in cache:
            cache[key] = _evaluate_point(doc, manifest, smc_cfg, model_prior)
        return cache[key]

    base = point()
    sweeps = {
        "levels": [point(levels=lv) for lv in manifest.level_sweep],
        "n_sensors": [point(n_sensors=ns) for ns in manifest.sensor_sweep],
    }
    return RunReport(
        manifest=manifest.to_dict(),
        base=base,
        sweeps=sweeps,
        wall_clock=time.perf_counter() - start,
    )


def variance_study(manifest: ExperimentManifest, n_repeats: int,
                   repeat_seeds: list[int] | None = None) -> dict:
    """Estimator variability over repeated runs on one fixed realization.

    Both samplers run ``n_repeats`` times on the same observation vector;
    the importance-sampler budget per model is T * N with T the average
    iteration count measured from the repeated tempered runs.  Reports
    per-model sample variances of the log evidence and of the relabeled
    location estimate (summed over coordinates).
    """
    if n_repeats < 2:
        raise ConfigError("variance study needs at least two repeats")
    cfg, priors = cfg_io.scenario_from_dict(manifest.scenario)
    smc_cfg, _, _ = cfg_io.smc_config_from_dict(manifest.smc)
    seed = manifest.seed
    truth = draw_truth(manifest.k_true, priors,
                       np.random.default_rng([seed, _R_TRUTH, 0]),
                       manifest.min_separation)
    z = simulate(truth, cfg, np.random.default_rng([seed, _R_OBS, 0]))

    def seeds(k, alg, r):
        if repeat_seeds is not None:
            return np.random.default_rng([int(repeat_seeds[r]), alg, k])
        return np.random.default_rng([seed, _R_VAR, alg, k, r])

    out = {"truth": truth.blocks.tolist(), "per_model": {}}
    for k in range(1, manifest.k_max + 1):
        smc_logz, smc_locs, iters = [], [], []
        for r in range(n_repeats):
            res = run_smc(k, z, cfg, priors, smc_cfg, seeds(k, 0, r))
            smc_logz.append(res.log_evidence)
            th, w = relabel_particles(res.system.thetas, res.system.weights(), priors)
            smc_locs.append(mmse_estimate(th, w).xy.reshape(-1))
            iters.append(res.n_iters)
        t_avg = float(np.mean(iters))
        n_is = match_budget(t_avg, smc_cfg.n_particles)
        is_logz, is_locs = [], []
        for r in range(n_repeats):
            res = run_is(k, z, cfg, priors, n_is, seeds(k, 1, r))
            is_logz.append(res.log_evidence)
            th, w = relabel_particles(res.thetas, res.weights(), priors)
            is_locs.append(mmse_estimate(th, w).xy.reshape(-1))
        out["per_model"][str(k)] = {
            "t_avg": t_avg,
            "n_is": n_is,
            "var_log_evidence_smc": float(np.var(smc_logz, ddof=1)),
            "var_log_evidence_is": float(np.var(is_logz, ddof=1)),
            "var_mmse_location_smc": float(np.var(np.array(smc_locs), axis=0, ddof=1).sum()),
            "var_mmse_location_is": float(np.var(np.array(is_locs), axis=0, ddof=1).sum()),
        }
    return out


def _csv_lines(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def emit_report(report: RunReport, outdir) -> list[str]:
    """Write report.json plus the CSV tables; returns the written paths.

    CSV bytes are a pure function of the report content (the wall clock
    only appears in report.json), so reruns with the same seed produce
    identical tables.
    """
    from pathlib import Path

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    cfg_io.dump_json(report.to_dict(), out / "report.json")
    written.append(str(out / "report.json"))

    for axis, fname, col in (("levels", "mse_vs_levels.csv", "L"),
                             ("n_sensors", "mse_vs_sensors.csv", "n_sensors")):
        rows = [[p["levels"] if axis == "levels" else p["n_sensors"],
                 float(p["mse_smc"]), float(p["mse_is"]), float(p["pcrb_bound"])]
                for p in report.sweeps.get(axis, [])]
        path = out / fname
        path.write_text(_csv_lines([col, "mse_smc", "mse_is", "pcrb_bound"], rows),
                        encoding="utf-8", newline="\n")
        written.append(str(path))

    k_max = len(report.base["selection_counts_smc"])
    model_cols = [f"M{k}" for k in range(1, k_max + 1)]
    ess_rows = []
    for name, key in (("smc", "ess_scaled_smc"), ("is", "ess_scaled_is")):
        vals = report.base.get(key, [])
        ess_rows.append([name] + [float(v) for v in vals])
    path = Path(out / "ess_table.csv")
    path.write_text(_csv_lines(["algorithm"] + model_cols, ess_rows),
                    encoding="utf-8", newline="\n")
    written.append(str(path))

    sel_rows = [[f"M{k + 1}", report.base["selection_counts_smc"][k],
                 report.base["selection_counts_is"][k]] for k in range(k_max)]
    path = Path(out / "selection_counts.csv")
    path.write_text(_csv_lines(["model", "smc", "is"], sel_rows),
                    encoding="utf-8", newline="\n")
    written.append(str(path))
    return written
