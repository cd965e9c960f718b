"""Command line entry point: ``mletpf <experiment> [flags]``.

Each run writes ``<experiment>.csv`` (long format) and ``manifest.json``
(full configuration, seeds and fitted slopes) into ``--out``.

Exit codes: 0 success, 2 configuration error or bad flag, 3 numerical blowup.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from mletpf.harness import experiments as ex
from mletpf.harness.io import load_config, write_csv, write_manifest
from mletpf.models import NumericalBlowupError
from mletpf.ot_core import InvalidInputError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3

log = logging.getLogger("mletpf")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mletpf", description="Multilevel ETPF experiments.")
    p.add_argument("experiment", choices=ex.EXPERIMENTS)
    p.add_argument("--model", choices=("lorenz63", "lorenz96"))
    p.add_argument("--epsilon", type=float, action="append", dest="epsilons",
                   help="target accuracy; repeat for several values")
    p.add_argument("--mode", action="append", dest="modes",
                   choices=("seamless", "standard", "single", "seamless-fine-plan"),
                   help="filter variant; repeat for several")
    p.add_argument("--rloc", type=int, dest="r_loc", help="localisation radius")
    p.add_argument("--steps", type=int, help="number of assimilation steps")
    p.add_argument("--reps", type=int, help="independent repetitions")
    p.add_argument("--seed", type=int)
    p.add_argument("--ref-level", type=int, dest="reference_level")
    p.add_argument("--ref-size", type=int, dest="reference_size")
    p.add_argument("--no-reference", action="store_true",
                   help="cost-accuracy: skip the reference run and RMSE")
    p.add_argument("--config", help="JSON file with configuration fields")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def make_config(args) -> ex.ExperimentConfig:
    names = {f.name for f in fields(ex.ExperimentConfig)}
    values = {}
    if args.config:
        try:
            data = load_config(args.config)
        except (OSError, ValueError) as err:
            raise ex.ConfigError(f"cannot read config: {err}") from None
        unknown = set(data) - names
        if unknown:
            raise ex.ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(data)
    for key in ("model", "epsilons", "modes", "r_loc", "steps", "reps", "seed",
                "reference_level", "reference_size"):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    values["experiment"] = args.experiment
    values["out"] = args.out
    values.setdefault("cache_dir", str(Path(args.out) / "cache"))
    try:
        return ex.ExperimentConfig(**values)
    except TypeError as err:
        raise ex.ConfigError(str(err)) from None


def _trajectory_rows(experiment, mode, rep, arrays: dict) -> list:
    # the level column carries the step index for trajectory outputs
    rows = []
    for name, arr in arrays.items():
        arr = np.atleast_2d(arr)
        for n in range(arr.shape[0]):
            for k in range(arr.shape[1]):
                rows.append(dict(experiment=experiment, mode=mode, epsilon="", level=n,
                                 rep=rep, metric=f"{name}[{k}]", value=float(arr[n, k])))
    return rows


def run(cfg: ex.ExperimentConfig, no_reference: bool = False) -> ex.StudyResult:
    if cfg.experiment == "consistency":
        return ex.run_consistency_study(cfg)
    if cfg.experiment == "variance-decay":
        return ex.run_variance_decay_study(cfg)
    if cfg.experiment == "cost-accuracy":
        return ex.run_cost_accuracy_study(cfg, with_reference=not no_reference)
    spec = ex.model_spec(cfg.model)
    result = ex.StudyResult(cfg.experiment, config=cfg.to_dict())
    for rep in range(cfg.reps):
        truth, obs = ex._twin(cfg, spec, rep)
        if cfg.experiment == "twin":
            result.rows += _trajectory_rows("twin", "truth", rep, {"x": truth})
            result.rows += _trajectory_rows("twin", "obs", rep, {"y": obs.values})
        else:
            ref = ex.reference_solution(cfg, rep, obs)
            result.rows += _trajectory_rows("reference", "single", rep, ref.estimates)
    return result


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:
        return EXIT_OK if stop.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
        result = run(cfg, args.no_reference)
    except (ex.ConfigError, InvalidInputError) as err:
        print(f"mletpf: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalBlowupError as err:
        print(f"mletpf: numerical blowup at step {err.step}: {err}", file=sys.stderr)
        return EXIT_BLOWUP
    out = Path(cfg.out)
    write_csv(result.rows, out / f"{cfg.experiment}.csv")
    write_manifest(out / "manifest.json", result.config, result.slopes,
                   {"experiment": cfg.experiment, "rows": len(result.rows)})
    for key, value in sorted(result.slopes.items()):
        print(f"{key}: {value:.4f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
