"""JSON (de)serialization of scenarios and run configurations."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .priors import LocationPrior, PowerPrior, SourcePriors, default_hyperparams
from .sensor_model import ChannelMatrix, Quantizer, ScenarioConfig
from .smc import SmcConfig


def grid_sensors(rows: int, cols: int, roi_side: float) -> np.ndarray:
    """Row-major grid of sensors at the cell centers of an even partition."""
    if rows < 1 or cols < 1:
        raise ConfigError("grid needs at least one row and one column")
    xs = (np.arange(cols) + 0.5) * roi_side / cols
    ys = (np.arange(rows) + 0.5) * roi_side / rows
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _channel_from_dict(doc, levels: int) -> ChannelMatrix:
    if "matrix" in doc:
        return ChannelMatrix(np.asarray(doc["matrix"], dtype=float))
    preset = doc.get("preset", "identity")
    if preset == "identity":
        return ChannelMatrix.identity(levels)
    if preset == "symmetric":
        return ChannelMatrix.symmetric(levels, float(doc.get("epsilon", 0.0)))
    raise ConfigError(f"unknown channel preset {preset!r}")


def scenario_from_dict(doc: dict) -> tuple[ScenarioConfig, SourcePriors]:
    """Build a scenario plus its priors from a plain JSON document."""
    try:
        roi_side = float(doc["roi_side"])
        if "sensors" in doc:
            sensors = np.asarray(doc["sensors"], dtype=float)
        elif "grid" in doc:
            g = doc["grid"]
            sensors = grid_sensors(int(g["rows"]), int(g["cols"]), roi_side)
        else:
            raise ConfigError("scenario needs either 'sensors' or 'grid'")
        q = doc["quantizer"]
        quantizer = Quantizer.from_bits(
            int(q["bits"]),
            float(q.get("lambda_min", 0.0)),
            float(q.get("lambda_max", 22.0)),
        )
        channel = _channel_from_dict(doc.get("channel", {}), quantizer.levels)
        cfg = ScenarioConfig(
            sensors=sensors,
            roi_side=roi_side,
            decay_n=float(doc.get("decay_n", 2.0)),
            d0=float(doc.get("d0", 1.0)),
            sigma2=float(doc["sigma2"]),
            quantizer=quantizer,
            channel=channel,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario document: {exc}") from exc

    loc, power = default_hyperparams(roi_side)
    prior_doc = doc.get("prior", {})
    if "sigma_p" in prior_doc:
        sp2 = float(prior_doc["sigma_p"]) ** 2
        loc = LocationPrior(loc.mu, np.array([sp2, sp2]))
    if "a" in prior_doc or "b" in prior_doc:
        power = PowerPrior(float(prior_doc.get("a", power.a)),
                           float(prior_doc.get("b", power.b)))
    return cfg, SourcePriors(loc, power)


def scenario_to_dict(cfg: ScenarioConfig, priors: SourcePriors) -> dict:
    interior = cfg.quantizer.interior
    return {
        "sensors": cfg.sensors.tolist(),
        "roi_side": cfg.roi_side,
        "decay_n": cfg.decay_n,
        "d0": cfg.d0,
        "sigma2": cfg.sigma2,
        "quantizer": {
            "bits": int(round(math.log2(cfg.levels))),
            "lambda_min": float(interior[0]),
            "lambda_max": float(interior[-1]),
        },
        "channel": {"matrix": cfg.channel.probs.tolist()},
        "prior": {
            "a": priors.power.a,
            "b": priors.power.b,
            "sigma_p": float(math.sqrt(priors.location.var[0])),
        },
    }


def load_scenario(path) -> tuple[ScenarioConfig, SourcePriors]:
    return scenario_from_dict(load_json(path))


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def dump_json(doc, path) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8", newline="\n")


def make_scenario(n_sensors: int = 100, levels: int = 4, sigma2: float = 1.0,
                  roi_side: float = 100.0, lambda_max: float = 22.0,
                  channel: ChannelMatrix | None = None) -> tuple[ScenarioConfig, SourcePriors]:
    """Square-grid scenario with the standard defaults.

    ``n_sensors`` must be a perfect square and ``levels`` a power of two.
    """
    side = math.isqrt(n_sensors)
    if side * side != n_sensors:
        raise ConfigError("n_sensors must be a perfect square for a grid layout")
    bits = int(round(math.log2(levels)))
    if 2**bits != levels:
        raise ConfigError("levels must be a power of two")
    quantizer = Quantizer.from_bits(bits, 0.0, lambda_max)
    cfg = ScenarioConfig(
        sensors=grid_sensors(side, side, roi_side),
        roi_side=roi_side,
        decay_n=2.0,
        d0=1.0,
        sigma2=sigma2,
        quantizer=quantizer,
        channel=channel if channel is not None else ChannelMatrix.identity(levels),
    )
    loc, power = default_hyperparams(roi_side)
    return cfg, SourcePriors(loc, power)


def smc_config_from_dict(doc: dict) -> tuple[SmcConfig, int, int]:
    """Parse an SMC run document; returns (config, seed, k_max)."""
    try:
        cfg = SmcConfig(
            n_particles=int(doc.get("n_particles", 100)),
            cess_frac=float(doc.get("cess_frac", 0.9)),
            ess_frac=float(doc.get("ess_frac", 0.5)),
            n_mcmc=int(doc.get("n_mcmc", 5)),
            proposal_std_xy=float(doc.get("proposal_std_xy", 2.0)),
            proposal_std_p_frac=float(doc.get("proposal_std_p_frac", 0.1)),
        )
        seed = int(doc.get("seed", 0))
        k_max = int(doc.get("k_max", 5))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid SMC configuration: {exc}") from exc
    if k_max < 1:
        raise ConfigError("k_max must be at least 1")
    return cfg, seed, k_max
