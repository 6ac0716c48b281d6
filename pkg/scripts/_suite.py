"""Shared driver for the experiment-suite scripts."""
import argparse
from dataclasses import replace
from pathlib import Path

from bpm_arm import harness


def parse_args(doc: str):
    parser = argparse.ArgumentParser(description=doc.strip().splitlines()[0])
    parser.add_argument("--config", type=Path, help="key = value configuration file")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--seeds", type=int, nargs="+", help="override the configured seeds")
    return parser.parse_args()


def run_suite(args, cells) -> None:
    text = args.config.read_text() if args.config else None
    config = harness.parse_config(text) if text is not None else harness.ExperimentConfig()
    if args.seeds:
        config = replace(config, seeds=tuple(args.seeds))
    if config.pretrain_checkpoint == "fresh":
        config = replace(config, pretrain_checkpoint=str(args.out / "pretrain"))
    for s in config.seeds:
        r = harness.pretrain(config, s, config.pretrain_checkpoint, resume=True)
        print(f"pretrain seed {s}: healthy success {r.success_rate:.2f}", flush=True)
    harness.run_cells(config, args.out, cells(config), text)
    print(",".join(harness.SUMMARY_COLUMNS))
    for row in harness.summarize_directory(args.out, config):
        print(",".join(str(v) for v in row))
