"""Experiment runner: configuration files, pre-training, fault runs, sweeps and summaries.

Every artifact a run writes is reproducible from the resolved configuration
and the seed alone. Curves go to ``curve_<algo>_<mode>_<degree>_<seed>.csv``;
the pre-fault run of a seed is recorded as mode ``none`` at degree 0.
"""
from __future__ import annotations

import ast
import dataclasses
import hashlib
import logging
import math
import platform
import types
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import bpm, ddpg
from .bpm import BpmConfig
from .curves import (
    CURVE_COLUMNS, LearningCurve, episodes_to_threshold, final_success_rate, read_table,
    write_rows,
)
from .ddpg import DdpgConfig
from .env import ArmConfig, FaultMode, FaultSpec, HEALTHY
from .streams import POST_FAULT, PRETRAIN, make_streams

log = logging.getLogger(__name__)

ALGORITHMS = ("ddpg", "bpm", "bpm_nofilter")
FAULT_MODES = ("frozen", "offset", "jitter")
SUCCESS_COLUMNS = ("mode", "degree", "algorithm", "seed", "success_rate")
SUMMARY_COLUMNS = ("mode", "degree", "algorithm", "n_seeds", "median_success", "ci_low",
                   "ci_high", "median_episodes_to_threshold", "outlier_seeds")


class ConfigError(ValueError):
    pass


class InvalidInput(ValueError):
    pass


@dataclass(frozen=True)
class FaultConfig:
    """Fault to inject after pre-training; joints are drawn per seed unless pinned."""

    mode: str = "frozen"
    degree: int = 1
    joints: tuple[int, ...] = ()
    offset_angle: float = math.pi / 4
    jitter_bound: float = math.radians(10.0)
    # the base joint moves the whole arm; it is only eligible when asked for
    include_base: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", FaultMode(self.mode).value)
        object.__setattr__(self, "joints", tuple(int(j) for j in self.joints))
        if self.mode == "none":
            if self.joints:
                raise ConfigError("fault mode none cannot pin joints")
        elif not 1 <= self.degree <= 4:
            raise ConfigError("fault degree must be in 1..4")
        if self.joints and len(self.joints) != self.degree:
            raise ConfigError("pinned joints must match the fault degree")

    @property
    def effective_degree(self) -> int:
        return 0 if self.mode == "none" else self.degree


@dataclass(frozen=True)
class ExperimentConfig:
    env: ArmConfig = field(default_factory=ArmConfig)
    fault: FaultConfig = field(default_factory=FaultConfig)
    ddpg: DdpgConfig = field(default_factory=DdpgConfig)
    bpm: BpmConfig = field(default_factory=BpmConfig)
    algorithm: str = "bpm"
    episodes: int = 1000
    seeds: tuple[int, ...] = tuple(range(10))
    # directory holding seed_<s>/ checkpoints, or "fresh"
    pretrain_checkpoint: str = "fresh"
    pretrain_episodes: int = 2000
    # snapshots are spread evenly from this fraction of pre-training to its end
    n_snapshots: int = 10
    snapshot_start: float = 0.75
    healthy_threshold: float = 0.8
    # baseline start: "fresh" init or the pre-trained "checkpoint"
    ddpg_init: str = "fresh"
    eval_window: int = 100
    success_threshold: float = 0.5
    rolling_window: int = 20
    bootstrap_resamples: int = 10_000
    bootstrap_seed: int = 0
    log_steps: bool = True
    sweep_algorithms: tuple[str, ...] = ("ddpg", "bpm")
    sweep_modes: tuple[str, ...] = FAULT_MODES
    sweep_degrees: tuple[int, ...] = (1, 2, 3, 4)

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        for algo in (self.algorithm, *self.sweep_algorithms):
            if algo not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")
        if self.ddpg_init not in ("fresh", "checkpoint"):
            raise ConfigError("ddpg_init must be 'fresh' or 'checkpoint'")
        if self.n_snapshots < 2:
            raise ConfigError("an ensemble needs at least 2 snapshots")
        if not 0 <= self.snapshot_start < 1:
            raise ConfigError("snapshot_start must lie in [0, 1)")
        if self.episodes < 0 or self.pretrain_episodes < 0:
            raise ConfigError("episode counts must be >= 0")
        if self.eval_window < 1 or self.rolling_window < 1:
            raise ConfigError("windows must be >= 1")
        if self.bootstrap_resamples < 1:
            raise ConfigError("bootstrap_resamples must be >= 1")

    def bpm_config(self, algorithm: str | None = None) -> BpmConfig:
        algorithm = algorithm or self.algorithm
        return replace(self.bpm, use_filter=False) if algorithm == "bpm_nofilter" else self.bpm

    def needs_checkpoint(self, algorithm: str | None = None) -> bool:
        algorithm = algorithm or self.algorithm
        return algorithm != "ddpg" or self.ddpg_init == "checkpoint"


# -- config files -------------------------------------------------------------

_SECTIONS = {"env": ArmConfig, "fault": FaultConfig, "ddpg": DdpgConfig, "bpm": BpmConfig}


def _hints(cls) -> dict[str, typing.Any]:
    return typing.get_type_hints(cls)


def _parse_value(text: str, hint):
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if text.lower() == "none" and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _parse_value(text, inner[0])
    if hint is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is str:
        return text
    if origin is tuple:
        if text.startswith(("(", "[")):
            return tuple(ast.literal_eval(text))
        if text == "":
            return ()
        elem = args[0]
        if typing.get_origin(elem) is tuple:
            raise ConfigError(f"nested values must be written as a literal, got {text!r}")
        return tuple(_parse_value(part, elem) for part in text.split(","))
    raise ConfigError(f"unsupported field type {hint}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if any(isinstance(v, tuple) for v in value):
            return repr(value)
        return ",".join(_format_value(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``key = value`` lines (dotted keys for sections) on top of ``base``.

    Blank lines and ``#`` comments are ignored; unknown keys are errors.
    """
    base = base or ExperimentConfig()
    top: dict[str, typing.Any] = {}
    sections: dict[str, dict[str, typing.Any]] = {name: {} for name in _SECTIONS}
    top_hints = _hints(ExperimentConfig)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if "." in key:
                section, name = key.split(".", 1)
                if section not in _SECTIONS:
                    raise ConfigError(f"line {lineno}: unknown section {section!r}")
                hints = _hints(_SECTIONS[section])
                if name not in hints:
                    raise ConfigError(f"line {lineno}: unknown key {key!r}")
                sections[section][name] = _parse_value(value, hints[name])
            else:
                if key not in top_hints or key in _SECTIONS:
                    raise ConfigError(f"line {lineno}: unknown key {key!r}")
                top[key] = _parse_value(value, top_hints[key])
        except (ValueError, SyntaxError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    for name, cls in _SECTIONS.items():
        if sections[name]:
            # carry over only customized base values, so derived per-joint
            # defaults are recomputed when e.g. n_joints changes
            current, default = _fields(getattr(base, name)), _fields(cls())
            kept = {k: v for k, v in current.items() if v != default[k]}
            try:
                top[name] = cls(**{**kept, **sections[name]})
            except ValueError as exc:
                raise ConfigError(f"invalid {name} settings: {exc}") from exc
    try:
        return replace(base, **top)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _fields(obj) -> dict[str, typing.Any]:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def dump_config(config: ExperimentConfig) -> str:
    """Every resolved parameter as ``key = value`` lines; parses back to ``config``."""
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if f.name in _SECTIONS:
            for g in dataclasses.fields(value):
                lines.append(f"{f.name}.{g.name} = {_format_value(getattr(value, g.name))}")
        else:
            lines.append(f"{f.name} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def git_blob_hash(data: bytes) -> str:
    """Content hash identical to ``git hash-object`` for the same bytes."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(out_dir, config: ExperimentConfig, config_text: str | None = None,
                   extra: dict | None = None) -> Path:
    """Resolved parameters plus the hash of the config file (or of the dump)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = dump_config(config)
    source = config_text if config_text is not None else resolved
    lines = [
        f"config_hash = {git_blob_hash(source.encode())}",
        f"resolved_hash = {git_blob_hash(resolved.encode())}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    path = out_dir / "manifest.txt"
    path.write_text("\n".join(lines) + "\n" + resolved)
    return path


# -- naming -------------------------------------------------------------------

def curve_name(algorithm: str, mode: str, degree: int, seed: int) -> str:
    return f"curve_{algorithm}_{mode}_{degree}_{seed}.csv"


def parse_curve_name(name: str) -> tuple[str, str, int, int]:
    stem = Path(name).stem
    parts = stem.split("_")
    if parts[0] != "curve" or len(parts) < 5:
        raise InvalidInput(f"not a curve file name: {name!r}")
    return "_".join(parts[1:-3]), parts[-3], int(parts[-2]), int(parts[-1])


def step_log_name(algorithm: str, mode: str, degree: int, seed: int) -> str:
    return f"steps_{algorithm}_{mode}_{degree}_{seed}.csv"


def seed_dir(checkpoint_root, seed: int) -> Path:
    return Path(checkpoint_root) / f"seed_{seed}"


# -- pre-training --------------------------------------------------------------

@dataclass
class PretrainResult:
    directory: Path
    curve: LearningCurve
    success_rate: float
    warning: str | None


def snapshot_episodes(episodes: int, n_snapshots: int, start: float) -> list[int]:
    """``n_snapshots`` distinct episodes spread evenly over the late part of training."""
    if episodes < n_snapshots:
        raise ConfigError(f"need at least {n_snapshots} pre-training episodes")
    first = min(int(start * episodes), episodes - n_snapshots)
    picks = np.linspace(first, episodes - 1, n_snapshots).round().astype(int)
    return sorted(set(int(p) for p in picks))


def _read_pretrain(directory: Path, seed: int, config: ExperimentConfig) -> PretrainResult:
    info = dict(line.split(" = ", 1) for line in (directory / "pretrain.txt").read_text().splitlines())
    curve = LearningCurve.from_csv(directory / curve_name("ddpg", "none", 0, seed),
                                   config.ddpg.eval_every)
    warning = None if info["warning"] == "none" else info["warning"]
    return PretrainResult(directory, curve, float(info["success_rate"]), warning)


def pretrain(config: ExperimentConfig, seed: int, out_dir, resume: bool = False) -> PretrainResult:
    """Healthy DDPG run saving the ensemble snapshots and the final agent under seed_<s>/.

    With ``resume`` an already completed seed directory is read back instead.
    """
    directory = seed_dir(out_dir, seed)
    if resume and (directory / "pretrain.txt").exists():
        return _read_pretrain(directory, seed, config)
    directory.mkdir(parents=True, exist_ok=True)
    picks = snapshot_episodes(config.pretrain_episodes, config.n_snapshots, config.snapshot_start)
    saved = []

    def keep(ep, agent):
        ddpg.save_agent(agent, directory, prefix=f"snap{len(saved):02d}_")
        saved.append(ep)

    streams = make_streams(seed, 0, phase=PRETRAIN)
    curve, agent = ddpg.train_run(config.env, HEALTHY, config.pretrain_episodes, seed,
                                  config.ddpg, streams=streams, snapshot_episodes=picks,
                                  on_snapshot=keep)
    ddpg.save_agent(agent, directory, prefix="final_")
    curve.to_csv(directory / curve_name("ddpg", "none", 0, seed))
    rate = final_success_rate(curve, config.eval_window)
    warning = None
    if rate < config.healthy_threshold:
        warning = (f"healthy success {rate:.3f} below threshold {config.healthy_threshold}")
        log.warning("seed %d: %s", seed, warning)
    lines = [f"seed = {seed}", f"success_rate = {rate!r}", "snapshot_episodes = "
             + ",".join(map(str, saved)), f"warning = {warning or 'none'}"]
    (directory / "pretrain.txt").write_text("\n".join(lines) + "\n")
    return PretrainResult(directory, curve, rate, warning)


def load_snapshots(directory, config: DdpgConfig | None = None) -> list[ddpg.Agent]:
    directory = Path(directory)
    snaps = []
    k = 0
    while (directory / f"snap{k:02d}_actor.bin").exists():
        snaps.append(ddpg.load_agent(directory, prefix=f"snap{k:02d}_", config=config))
        k += 1
    return snaps


# -- fault runs ---------------------------------------------------------------

def select_faulty_joints(n_joints: int, degree: int, rng: np.random.Generator,
                         include_base: bool = False) -> tuple[int, ...]:
    """First ``degree`` entries of a random permutation of the eligible joints.

    The permutation depends only on the generator state, so the sets drawn for
    degrees 1..4 from the same seed are nested.
    """
    eligible = np.arange(0 if include_base else 1, n_joints)
    if degree > len(eligible):
        raise ConfigError(f"cannot fail {degree} of {len(eligible)} eligible joints")
    return tuple(sorted(int(j) for j in rng.permutation(eligible)[:degree]))


def resolve_fault(config: ExperimentConfig, rng: np.random.Generator) -> FaultSpec:
    fc = config.fault
    if fc.mode == "none":
        return HEALTHY
    joints = fc.joints or select_faulty_joints(config.env.n_joints, fc.degree, rng,
                                               fc.include_base)
    return FaultSpec(fc.mode, joints, fc.offset_angle, fc.jitter_bound)


@dataclass
class RunResult:
    seed: int
    fault: FaultSpec
    curve: LearningCurve
    success_rate: float


def run_seed(config: ExperimentConfig, seed: int, out_dir, algorithm: str | None = None,
             resume: bool = False) -> RunResult:
    """Inject the configured fault and train one seed; writes the curve (and step log)."""
    algorithm = algorithm or config.algorithm
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    streams = make_streams(seed, 0, phase=POST_FAULT)
    fault = resolve_fault(config, streams.faults)
    fault.check(config.env)
    mode, degree = config.fault.mode, config.fault.effective_degree
    path = out_dir / curve_name(algorithm, mode, degree, seed)
    if resume and path.exists():
        curve = LearningCurve.from_csv(path, config.ddpg.eval_every)
        return RunResult(seed, fault, curve, final_success_rate(curve, config.eval_window))

    start = None
    if config.needs_checkpoint(algorithm):
        if config.pretrain_checkpoint == "fresh":
            raise ConfigError(f"{algorithm} needs a pretrain_checkpoint directory")
        directory = seed_dir(config.pretrain_checkpoint, seed)
        if not (directory / "final_actor.bin").exists():
            raise ConfigError(f"missing checkpoint {directory}")
        start = ddpg.load_agent(directory, prefix="final_", config=config.ddpg)

    if algorithm == "ddpg":
        curve, _ = ddpg.train_run(config.env, fault, config.episodes, seed, config.ddpg,
                                  agent=start, streams=streams)
    else:
        snaps = load_snapshots(seed_dir(config.pretrain_checkpoint, seed), config.ddpg)
        if len(snaps) < 2:
            raise ConfigError(f"{algorithm} needs at least 2 ensemble snapshots")
        bcfg = config.bpm_config(algorithm)
        ensemble = bpm.build_ensemble([(s.actor, s.critic) for s in snaps], bcfg.floor_std)
        rows: list[tuple] = []
        curve, _ = bpm.train_run(config.env, ensemble, start, fault, config.episodes, seed,
                                 bcfg, config.ddpg, streams,
                                 step_log=rows.append if config.log_steps else None)
        if config.log_steps:
            write_rows(out_dir / step_log_name(algorithm, mode, degree, seed),
                       bpm.STEP_LOG_COLUMNS, rows)
    curve.to_csv(path)
    return RunResult(seed, fault, curve, final_success_rate(curve, config.eval_window))


def success_rows(config: ExperimentConfig, results: list[RunResult], algorithm: str) -> list[tuple]:
    return [(config.fault.mode, config.fault.effective_degree, algorithm, r.seed, r.success_rate)
            for r in results]


def run_experiment(config: ExperimentConfig, out_dir, config_text: str | None = None,
                   resume: bool = False) -> tuple[dict[int, LearningCurve], list[tuple]]:
    """All seeds of one (algorithm, fault) cell; returns curves and success-table rows."""
    results = [run_seed(config, s, out_dir, resume=resume) for s in config.seeds]
    rows = success_rows(config, results, config.algorithm)
    write_rows(Path(out_dir) / "success_table.csv", SUCCESS_COLUMNS, rows)
    write_manifest(out_dir, config, config_text,
                   {"faulty_joints": ";".join(f"{r.seed}:" + ",".join(map(str, r.fault.affected_joints))
                                             for r in results)})
    return {r.seed: r.curve for r in results}, rows


def run_cells(config: ExperimentConfig, out_dir, cells, config_text: str | None = None,
              resume: bool = True) -> list[tuple]:
    """Run every seed of each (algorithm, mode, degree) cell into one success table."""
    rows = []
    for algorithm, mode, degree in cells:
        cell = replace(config, fault=replace(config.fault, mode=mode, degree=degree, joints=()))
        for s in config.seeds:
            r = run_seed(cell, s, out_dir, algorithm, resume=resume)
            rows.extend(success_rows(cell, [r], algorithm))
            log.info("%s %s d=%d seed=%d success=%.3f", algorithm, mode, degree, s,
                     r.success_rate)
    write_rows(Path(out_dir) / "success_table.csv", SUCCESS_COLUMNS, rows)
    write_manifest(out_dir, config, config_text)
    return rows


def sweep(config: ExperimentConfig, out_dir, config_text: str | None = None,
          resume: bool = True) -> list[tuple]:
    """Cross product of modes, degrees, algorithms and seeds into one success table."""
    cells = [(a, m, d) for m in config.sweep_modes for d in config.sweep_degrees
             for a in config.sweep_algorithms]
    return run_cells(config, out_dir, cells, config_text, resume)


# -- aggregation ----------------------------------------------------------------

@dataclass
class CellSummary:
    median: float
    ci_low: float
    ci_high: float
    outliers: tuple[int, ...]
    n_seeds: int


def bootstrap_median_ci(values, resamples: int = 10_000, seed: int = 0,
                        level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval for the median over seeds."""
    x = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    medians = np.median(x[idx], axis=1)
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(medians, [tail, 100 - tail])
    return float(lo), float(hi)


def summarize_values(values, seeds=None, resamples: int = 10_000, seed: int = 0) -> CellSummary:
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise InvalidInput("summaries need at least 2 seeds")
    seeds = list(range(x.size)) if seeds is None else list(seeds)
    lo, hi = bootstrap_median_ci(x, resamples, seed)
    outliers = tuple(s for s, v in zip(seeds, x) if v < lo or v > hi)
    return CellSummary(float(np.median(x)), lo, hi, outliers, int(x.size))


def load_curves(directory) -> dict[tuple[str, str, int], dict[int, Path]]:
    groups: dict[tuple[str, str, int], dict[int, Path]] = {}
    for path in sorted(Path(directory).glob("curve_*.csv")):
        algo, mode, degree, seed = parse_curve_name(path.name)
        groups.setdefault((algo, mode, degree), {})[seed] = path
    return groups


def summarize(curves: dict[int, LearningCurve], window: int = 100, threshold: float = 0.5,
              rolling_window: int = 20, resamples: int = 10_000,
              seed: int = 0) -> tuple[CellSummary, float]:
    """Median final-window success with bootstrap CI, and median episodes-to-threshold."""
    if len(curves) < 2:
        raise InvalidInput("summaries need at least 2 seeds")
    for s, c in curves.items():
        if window > len(c):
            raise InvalidInput(f"window {window} exceeds curve length {len(c)} (seed {s})")
    seeds = sorted(curves)
    rates = [final_success_rate(curves[s], window) for s in seeds]
    hits = [episodes_to_threshold(curves[s], threshold, rolling_window) for s in seeds]
    return summarize_values(rates, seeds, resamples, seed), float(np.median(hits))


def summarize_directory(directory, config: ExperimentConfig | None = None) -> list[tuple]:
    """Summaries of every (algorithm, mode, degree) group found in ``directory``."""
    config = config or ExperimentConfig()
    rows, table = [], []
    for (algo, mode, degree), paths in sorted(load_curves(directory).items()):
        curves = {s: LearningCurve.from_csv(p, config.ddpg.eval_every) for s, p in paths.items()}
        for s in sorted(curves):
            table.append((mode, degree, algo, s, final_success_rate(curves[s], config.eval_window)))
        if len(curves) < 2:
            continue
        cell, hit = summarize(curves, config.eval_window, config.success_threshold,
                              config.rolling_window, config.bootstrap_resamples,
                              config.bootstrap_seed)
        rows.append((mode, degree, algo, cell.n_seeds, cell.median, cell.ci_low, cell.ci_high,
                     hit, ";".join(map(str, cell.outliers))))
    write_rows(Path(directory) / "summary.csv", SUMMARY_COLUMNS, rows)
    write_rows(Path(directory) / "success_table.csv", SUCCESS_COLUMNS,
               [r for r in table if r[1] > 0])
    return rows


def read_success_table(path) -> list[dict]:
    rows = read_table(path)
    for r in rows:
        r["degree"] = int(r["degree"])
        r["seed"] = int(r["seed"])
        r["success_rate"] = float(r["success_rate"])
    return rows


__all__ = [
    "ALGORITHMS", "CURVE_COLUMNS", "ConfigError", "ExperimentConfig", "FaultConfig",
    "InvalidInput", "bootstrap_median_ci", "curve_name", "dump_config", "git_blob_hash",
    "load_config", "parse_config", "pretrain", "run_cells", "run_experiment", "run_seed", "summarize",
    "summarize_directory", "sweep",
]
