"""Command-line interface: simulate, infer, pcrb, experiment."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import config as cfg_io
from .errors import ConfigError, SmclocError
from .harness import ExperimentManifest, emit_report, infer, run_experiment
from .pcrb import PcrbConfig, pcrb_bound
from .sensor_model import ObservationVector, SourceParams, simulate


def _load_truth(path) -> SourceParams:
    doc = cfg_io.load_json(path)
    sources = doc["sources"] if isinstance(doc, dict) else doc
    blocks = []
    for s in sources:
        if isinstance(s, dict):
            blocks.append([float(s["power"]), float(s["x"]), float(s["y"])])
        else:
            blocks.append([float(v) for v in s])
    return SourceParams(np.asarray(blocks))


def _cmd_simulate(args) -> int:
    cfg, _ = cfg_io.load_scenario(args.scenario)
    truth = _load_truth(args.truth)
    obs = simulate(truth, cfg, np.random.default_rng(args.seed))
    cfg_io.dump_json({"z": obs.z.tolist(), "seed": args.seed}, args.output)
    return 0


def _cmd_infer(args) -> int:
    cfg, priors = cfg_io.load_scenario(args.scenario)
    obs = ObservationVector(np.asarray(cfg_io.load_json(args.obs)["z"]))
    obs.validate_for(cfg)
    smc_cfg, seed, k_max = cfg_io.smc_config_from_dict(
        cfg_io.load_json(args.smc_config) if args.smc_config else {})
    outcome = infer(obs, cfg, priors, smc_cfg, k_max=k_max, seed=seed)
    cfg_io.dump_json(outcome.report(), args.output)
    return 0


def _cmd_pcrb(args) -> int:
    cfg, priors = cfg_io.load_scenario(args.scenario)
    result = pcrb_bound(args.k, cfg, priors, PcrbConfig(n_mc=args.n_mc, seed=args.seed))
    cfg_io.dump_json({
        "J": result.j_total.tolist(),
        "J_d": result.j_data.tolist(),
        "J_p": result.j_prior.tolist(),
        "location_mse_bound": result.location_mse_bound,
        "power_mse_bound": result.power_mse_bound,
        "n_rejected_draws": result.n_rejected_draws,
    }, args.output)
    return 0


def _cmd_experiment(args) -> int:
    manifest = ExperimentManifest.from_dict(cfg_io.load_json(args.manifest))
    report = run_experiment(manifest)
    emit_report(report, args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smcloc",
        description="Localize an unknown number of sources from quantized sensor data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw one observation vector for a known truth")
    p.add_argument("--scenario", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("infer", help="run both samplers over all models and select")
    p.add_argument("--scenario", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--smc-config", default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("pcrb", help="compute the posterior Cramer-Rao bound")
    p.add_argument("--scenario", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n-mc", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_pcrb)

    p = sub.add_parser("experiment", help="run a full campaign from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except SmclocError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
