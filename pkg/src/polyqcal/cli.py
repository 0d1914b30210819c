"""Command-line interface for the calibration pipeline."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .pipeline import PipelineConfig, PipelineError, Store, run_stage

COMMANDS = ("simulate", "design", "wave", "fit-gp", "validate",
            "calibrate", "predict", "plot")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyqcal",
        description="Calibrate stochastic reaction-network rate parameters "
                    "by simulation, emulation, history matching and MCMC.")
    parser.add_argument("--version", action="version",
                        version="%(prog)s " + __import__("polyqcal").__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", help="pipeline config file (key = value)")
        p.add_argument("--artifacts",
                       help="artifact directory (default: $POLYQCAL_ARTIFACTS or ./artifacts)")
        p.add_argument("--scale", choices=("mini", "desk", "paper"),
                       help="scale preset overriding the config file")
        p.add_argument("--seed", type=int, help="root seed override")
        p.add_argument("--workers", type=int, help="worker pool size")
        p.add_argument("--model", help="model file overriding the bundled network")
        p.add_argument("--force", action="store_true",
                       help="re-run even when artifacts look up to date")
        p.add_argument("--json", action="store_true", dest="as_json",
                       help="machine-readable status on stdout")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "simulate":
            p.add_argument("--theta", help="JSON array of log-rates (default: prior medians)")
            p.add_argument("--n", type=int, help="replicates per condition")
    return parser


def load_config(args) -> PipelineConfig:
    if args.config:
        config = PipelineConfig.from_file(args.config)
    else:
        config = PipelineConfig.from_mapping({"scale": args.scale or "desk"})
    if args.scale and args.config:
        config = PipelineConfig.from_mapping(
            {**_file_mapping(args.config), "scale": args.scale})
    if args.seed is not None:
        config.root_seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
        from dataclasses import replace
        config.wave = replace(config.wave, workers=args.workers)
    if args.model:
        config.model_path = args.model
    if args.artifacts:
        config.artifacts = args.artifacts
    elif os.environ.get("POLYQCAL_ARTIFACTS"):
        config.artifacts = os.environ["POLYQCAL_ARTIFACTS"]
    return config


def _file_mapping(path: str) -> dict:
    from .pipeline import parse_config_file
    return parse_config_file(path)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        config = load_config(args)
        store = Store(config.artifacts, force=args.force)
        kwargs = {}
        if args.command == "simulate":
            if args.theta:
                kwargs["theta"] = np.asarray(json.loads(args.theta), dtype=float)
            if args.n:
                kwargs["n"] = args.n
        result = run_stage(args.command, config, store, **kwargs)
    except PipelineError as exc:
        if args.as_json:
            print(json.dumps({"stage": args.command, "status": "error",
                              "message": str(exc)}))
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.as_json:
        print(result.to_json())
    else:
        print(f"{result.stage}: {result.status} ({result.elapsed:.1f}s)")
        for rel in result.artifacts:
            print(f"  {os.path.join(config.artifacts, rel)}")
        if result.detail:
            for key, value in result.detail.items():
                print(f"  {key}: {value}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
