"""Disk-cached experiment cells shared by the acceptance suite and the scripts.

Cells are keyed by a content hash of the settings that influence them and of
the learning code, so editing either forces a recompute while unrelated edits
reuse earlier results.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import ExperimentConfig, FaultConfig, PretrainResult, RunResult

_PKG = Path(__file__).resolve().parent
LEARNING_SOURCES = ("env.py", "neural.py", "ddpg.py", "streams.py", "curves.py")
RUN_SOURCES = LEARNING_SOURCES + ("bpm.py",)
# settings that never change a curve: which cell or seed is run, logging, aggregation
_IRRELEVANT = ("fault.", "algorithm", "seeds", "sweep_", "log_steps", "pretrain_checkpoint",
               "bootstrap_", "eval_window", "success_threshold", "rolling_window",
               "healthy_threshold")


def cache_root() -> Path:
    return Path(os.environ.get("BPM_ARM_CACHE", Path.cwd() / ".cache" / "bpm_arm"))


def _digest(lines: list[str], sources: tuple[str, ...]) -> str:
    h = hashlib.sha1()
    for line in lines:
        h.update(line.encode() + b"\n")
    for name in sources:
        h.update((_PKG / name).read_bytes())
    return h.hexdigest()[:12]


def _lines(config: ExperimentConfig, prefixes: tuple[str, ...] | None = None) -> list[str]:
    lines = harness.dump_config(config).splitlines()
    if prefixes is not None:
        return [ln for ln in lines if ln.startswith(prefixes)]
    return [ln for ln in lines if not ln.startswith(_IRRELEVANT)]


def pretrain_dir(config: ExperimentConfig, root: Path | None = None) -> Path:
    keys = ("env.", "ddpg.", "pretrain_episodes", "n_snapshots", "snapshot_start")
    return (root or cache_root()) / f"pretrain-{_digest(_lines(config, keys), LEARNING_SOURCES)}"


def run_dir(config: ExperimentConfig, root: Path | None = None) -> Path:
    lines = _lines(config) + [pretrain_dir(config, root).name]
    return (root or cache_root()) / f"runs-{_digest(lines, RUN_SOURCES)}"


def ensure_pretrained(config: ExperimentConfig, root: Path | None = None) -> dict[int, PretrainResult]:
    out = pretrain_dir(config, root)
    return {s: harness.pretrain(config, s, out, resume=True) for s in config.seeds}


def ensure_cell(config: ExperimentConfig, algorithm: str, mode: str, degree: int,
                root: Path | None = None) -> dict[int, RunResult]:
    """Curves for one (algorithm, mode, degree) over all configured seeds."""
    if config.needs_checkpoint(algorithm):
        ensure_pretrained(config, root)
    cell = replace(config, algorithm=algorithm, log_steps=False,
                   pretrain_checkpoint=str(pretrain_dir(config, root)),
                   fault=replace(config.fault, mode=mode, degree=degree, joints=()))
    out = run_dir(config, root)
    return {s: harness.run_seed(cell, s, out, resume=True) for s in config.seeds}


def cached_json(name: str, config: ExperimentConfig, compute, root: Path | None = None):
    """JSON-serializable result of ``compute()``, stored next to the run cells."""
    path = run_dir(config, root) / f"{name}.json"
    if path.exists():
        return json.loads(path.read_text())
    value = compute()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(value))
    return value


def default_config() -> ExperimentConfig:
    return ExperimentConfig(log_steps=False)


__all__ = ["cache_root", "cached_json", "default_config", "ensure_cell", "ensure_pretrained", "pretrain_dir",
           "run_dir", "FaultConfig"]
