"""Command line entry point: ``pretrain``, ``run``, ``sweep`` and ``summarize``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import ConfigError, ExperimentConfig


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--seed", type=int, help="run only this seed")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    p.add_argument("--episodes", type=int, help="override the episode count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bpm-arm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    verbs = parser.add_subparsers(dest="verb", required=True)
    _common(verbs.add_parser("pretrain", help="healthy DDPG runs with ensemble snapshots"))
    run = verbs.add_parser("run", help="one algorithm under one fault, all configured seeds")
    _common(run)
    run.add_argument("--algorithm", choices=harness.ALGORITHMS)
    run.add_argument("--fault-mode", choices=("none", "frozen", "offset", "jitter"))
    run.add_argument("--degree", type=int, choices=(1, 2, 3, 4))
    _common(verbs.add_parser("sweep", help="modes x degrees x algorithms success table"))
    summ = verbs.add_parser("summarize", help="medians and bootstrap intervals of a run directory")
    summ.add_argument("--config", type=Path)
    summ.add_argument("--out", type=Path, default=Path("runs"))
    return parser


def resolve(args: argparse.Namespace) -> tuple[ExperimentConfig, str | None]:
    text = args.config.read_text() if getattr(args, "config", None) else None
    config = harness.parse_config(text) if text is not None else ExperimentConfig()
    top = {}
    if getattr(args, "seed", None) is not None:
        top["seeds"] = (args.seed,)
    if getattr(args, "episodes", None) is not None:
        key = "pretrain_episodes" if args.verb == "pretrain" else "episodes"
        top[key] = args.episodes
    if getattr(args, "algorithm", None):
        top["algorithm"] = args.algorithm
    fault = {}
    if getattr(args, "fault_mode", None):
        fault["mode"] = args.fault_mode
    if getattr(args, "degree", None) is not None:
        fault["degree"] = args.degree
    if fault:
        top["fault"] = replace(config.fault, **fault, joints=())
    return replace(config, **top), text


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config, text = resolve(args)
        out = args.out
        if args.verb == "pretrain":
            for s in config.seeds:
                r = harness.pretrain(config, s, out)
                print(f"seed {s}: healthy success {r.success_rate:.3f}"
                      + (f" (warning: {r.warning})" if r.warning else ""))
            harness.write_manifest(out, config, text)
        elif args.verb == "run":
            _, rows = harness.run_experiment(config, out, text)
            for mode, degree, algo, s, rate in rows:
                print(f"{algo} {mode} degree {degree} seed {s}: success {rate:.3f}")
        elif args.verb == "sweep":
            rows = harness.sweep(config, out, text)
            print(f"{len(rows)} runs written to {out / 'success_table.csv'}")
        else:
            for row in harness.summarize_directory(out, config):
                print(",".join(str(v) for v in row))
    except (ConfigError, harness.InvalidInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
