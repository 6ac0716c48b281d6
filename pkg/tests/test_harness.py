import hashlib
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bpm_arm import harness
from bpm_arm.bpm import BpmConfig
from bpm_arm.curves import CURVE_COLUMNS, EpisodeRecord, LearningCurve, read_table
from bpm_arm.ddpg import DdpgConfig
from bpm_arm.env import ArmConfig
from bpm_arm.harness import ConfigError, ExperimentConfig, FaultConfig, InvalidInput

TINY = ExperimentConfig(
    env=ArmConfig(n_joints=4, episode_max_steps=8),
    ddpg=DdpgConfig(hidden=(8, 8), batch_size=8, learning_starts=16, buffer_capacity=500),
    seeds=(0, 1),
    pretrain_episodes=25,
    episodes=20,
    eval_window=10,
    bootstrap_resamples=200,
)


@pytest.fixture(scope="module")
def checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpt")
    for s in TINY.seeds:
        harness.pretrain(TINY, s, root)
    return root


# -- configuration --------------------------------------------------------------

def test_parse_config_sections_and_top_level():
    cfg = harness.parse_config("""
        # comment
        env.n_joints = 5
        env.success_tolerance = 0.02
        ddpg.hidden = 32,16
        bpm.proposal_every = inf
        bpm.use_filter = false
        fault.mode = offset
        fault.degree = 2
        seeds = 3,4,5
        algorithm = bpm_nofilter
    """)
    assert cfg.env.n_joints == 5 and len(cfg.env.link_lengths) == 5
    assert cfg.env.success_tolerance == 0.02
    assert cfg.ddpg.hidden == (32, 16)
    assert cfg.bpm.proposal_every == float("inf") and not cfg.bpm.use_filter
    assert cfg.fault == FaultConfig("offset", 2)
    assert cfg.seeds == (3, 4, 5)
    assert cfg.algorithm == "bpm_nofilter"


@pytest.mark.parametrize("text", [
    "nonsense = 1",
    "env.not_a_field = 1",
    "bogus.n_joints = 3",
    "env.n_joints 3",
    "ddpg.gamma = 1.5",
    "seeds = 1,1",
    "algorithm = ppo",
    "bpm.use_filter = maybe",
])
def test_bad_config_lines_are_errors(text):
    with pytest.raises(ConfigError):
        harness.parse_config(text)


def test_dump_parses_back_to_same_config():
    cfg = replace(TINY, bpm=BpmConfig(evidence_std=0.3, proposal_every=float("inf")),
                  fault=FaultConfig("jitter", 3, joints=(1, 4, 6)))
    assert harness.parse_config(harness.dump_config(cfg)) == cfg
    assert harness.parse_config(harness.dump_config(ExperimentConfig())) == ExperimentConfig()


@given(st.floats(1e-3, 10.0), st.integers(1, 9), st.lists(st.integers(0, 99), min_size=1,
                                                           max_size=5, unique=True))
@settings(max_examples=30, deadline=None)
def test_dump_roundtrip_property(tol, n, seeds):
    cfg = ExperimentConfig(env=ArmConfig(n_joints=n, success_tolerance=tol), seeds=tuple(seeds))
    assert harness.parse_config(harness.dump_config(cfg)) == cfg


def test_git_blob_hash_matches_git():
    data = b"env.n_joints = 8\n"
    expected = hashlib.sha1(b"blob 17\x00" + data).hexdigest()
    assert harness.git_blob_hash(data) == expected
    try:
        out = subprocess.run(["git", "hash-object", "--stdin"], input=data, capture_output=True,
                             check=True).stdout.decode().strip()
    except (OSError, subprocess.CalledProcessError):
        pytest.skip("git unavailable")
    assert out == expected


def test_experiment_config_invariants():
    with pytest.raises(ConfigError):
        ExperimentConfig(seeds=())
    with pytest.raises(ConfigError):
        ExperimentConfig(n_snapshots=1)
    with pytest.raises(ConfigError):
        FaultConfig("frozen", 5)
    with pytest.raises(ConfigError):
        FaultConfig("frozen", 2, joints=(1,))


# -- naming and fault selection ----------------------------------------------------

def test_curve_names_roundtrip():
    name = harness.curve_name("bpm_nofilter", "frozen", 3, 7)
    assert name == "curve_bpm_nofilter_frozen_3_7.csv"
    assert harness.parse_curve_name(name) == ("bpm_nofilter", "frozen", 3, 7)


def test_faulty_joints_are_nested_across_degrees():
    sets = [set(harness.select_faulty_joints(8, d, np.random.default_rng(5))) for d in (1, 2, 3, 4)]
    assert all(a < b for a, b in zip(sets, sets[1:]))
    assert all(0 not in s for s in sets)
    assert 0 in set().union(*(harness.select_faulty_joints(8, 4, np.random.default_rng(k), True)
                               for k in range(50)))


def test_snapshot_episodes_are_late_and_distinct():
    picks = harness.snapshot_episodes(2000, 10, 0.75)
    assert len(picks) == 10 and picks[0] == 1500 and picks[-1] == 1999
    assert harness.snapshot_episodes(10, 10, 0.75) == list(range(10))


# -- summaries --------------------------------------------------------------------

def loop_bootstrap(values, resamples, seed):
    """Row-by-row resampling with the same generator draws, then sorted quantiles."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(values), size=(resamples, len(values)))
    meds = []
    for row in idx:
        sample = sorted(values[i] for i in row)
        n = len(sample)
        meds.append(sample[n // 2] if n % 2 else 0.5 * (sample[n // 2 - 1] + sample[n // 2]))
    meds.sort()

    def pct(q):
        pos = q / 100 * (len(meds) - 1)
        lo = int(np.floor(pos))
        hi = min(lo + 1, len(meds) - 1)
        return meds[lo] + (pos - lo) * (meds[hi] - meds[lo])
    return pct(2.5), pct(97.5)


def test_identical_seeds_have_zero_width_ci():
    cell = harness.summarize_values([0.7] * 6)
    assert cell.ci_low == cell.ci_high == cell.median == 0.7
    assert cell.outliers == ()


def test_small_sample_median():
    assert harness.summarize_values([0.2, 0.4, 0.6]).median == pytest.approx(0.4)


def test_bootstrap_matches_loop_implementation():
    rng = np.random.default_rng(3)
    for _ in range(5):
        values = list(rng.uniform(size=10))
        lo, hi = harness.bootstrap_median_ci(values, 10_000, seed=11)
        olo, ohi = loop_bootstrap(values, 10_000, 11)
        assert abs(lo - olo) < 0.01 and abs(hi - ohi) < 0.01


def test_bootstrap_matches_scipy_resampling():
    stats = pytest.importorskip("scipy.stats")
    values = np.random.default_rng(4).uniform(size=40)
    lo, hi = harness.bootstrap_median_ci(values, 10_000, seed=0)
    ref = stats.bootstrap((values,), np.median, n_resamples=10_000, method="percentile",
                          random_state=np.random.default_rng(99)).confidence_interval
    assert abs(lo - ref.low) < 0.02 and abs(hi - ref.high) < 0.02


def test_outliers_fall_outside_ci():
    values = [0.5] * 9 + [0.0]
    cell = harness.summarize_values(values, seeds=range(10, 20))
    assert cell.outliers == (19,)


def _curve(successes):
    c = LearningCurve()
    for i, s in enumerate(successes):
        c.append(EpisodeRecord(i, -1.0, s, 5, evaluation=(i + 1) % 10 == 0))
    return c


def test_summarize_errors_and_values():
    curves = {0: _curve([1] * 30), 1: _curve([0] * 30)}
    with pytest.raises(InvalidInput):
        harness.summarize(curves, window=31)
    with pytest.raises(InvalidInput):
        harness.summarize({0: curves[0]}, window=10)
    cell, hit = harness.summarize(curves, window=20, rolling_window=5, resamples=100)
    assert cell.median == 0.5
    assert hit == np.median([5, 31])


# -- runs ---------------------------------------------------------------------------

def test_pretrain_is_deterministic_and_saves_snapshots(checkpoints, tmp_path):
    again = harness.pretrain(TINY, 0, tmp_path)
    for f in sorted((checkpoints / "seed_0").iterdir()):
        assert (tmp_path / "seed_0" / f.name).read_bytes() == f.read_bytes()
    assert len(harness.load_snapshots(checkpoints / "seed_0")) == TINY.n_snapshots
    assert again.warning is not None  # far too short to learn
    resumed = harness.pretrain(TINY, 0, tmp_path, resume=True)
    assert resumed.curve.rows() == again.curve.rows()


def test_curve_and_table_columns(checkpoints, tmp_path):
    cfg = replace(TINY, pretrain_checkpoint=str(checkpoints), fault=FaultConfig("jitter", 1))
    curves, rows = harness.run_experiment(cfg, tmp_path)
    for s in TINY.seeds:
        header = (tmp_path / harness.curve_name("bpm", "jitter", 1, s)).read_text().splitlines()[0]
        assert tuple(header.split(",")) == CURVE_COLUMNS
        log = read_table(tmp_path / harness.step_log_name("bpm", "jitter", 1, s))
        assert tuple(log[0]) == ("episode", "step", "reward", "beta", "likelihood",
                                 "proposal_flag", "rho", "accepted_flag")
        assert len(log) == sum(r.steps for r in curves[s].records)
    table = read_table(tmp_path / "success_table.csv")
    assert tuple(table[0]) == harness.SUCCESS_COLUMNS
    assert [(r["mode"], int(r["degree"]), r["algorithm"]) for r in table] == [("jitter", 1, "bpm")] * 2
    manifest = (tmp_path / "manifest.txt").read_text()
    assert "config_hash = " in manifest and "bpm.evidence_std = " in manifest


def test_bpm_without_checkpoint_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        harness.run_experiment(TINY, tmp_path)
    with pytest.raises(ConfigError):
        harness.run_experiment(replace(TINY, pretrain_checkpoint=str(tmp_path / "missing")), tmp_path)


def test_runs_are_byte_identical(checkpoints, tmp_path):
    cfg = replace(TINY, pretrain_checkpoint=str(checkpoints), seeds=(1,))
    harness.run_experiment(cfg, tmp_path / "a")
    harness.run_experiment(cfg, tmp_path / "b")
    for name in ("curve_bpm_frozen_1_1.csv", "steps_bpm_frozen_1_1.csv", "success_table.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_reduction_through_harness(checkpoints, tmp_path):
    base = replace(TINY, pretrain_checkpoint=str(checkpoints), fault=FaultConfig("offset", 1))
    off = replace(base, bpm=BpmConfig(proposal_every=float("inf")), log_steps=False)
    harness.run_experiment(off, tmp_path / "bpm")
    harness.run_experiment(replace(base, algorithm="ddpg", ddpg_init="checkpoint"), tmp_path / "ddpg")
    for s in TINY.seeds:
        a = (tmp_path / "bpm" / harness.curve_name("bpm", "offset", 1, s)).read_bytes()
        b = (tmp_path / "ddpg" / harness.curve_name("ddpg", "offset", 1, s)).read_bytes()
        assert a == b


def test_fault_free_baseline_is_recorded_like_pretraining(checkpoints, tmp_path):
    cfg = replace(TINY, algorithm="ddpg", fault=FaultConfig("none"), episodes=TINY.pretrain_episodes)
    curves, rows = harness.run_experiment(cfg, tmp_path)
    pre = LearningCurve.from_csv(checkpoints / "seed_0" / harness.curve_name("ddpg", "none", 0, 0))
    assert (tmp_path / harness.curve_name("ddpg", "none", 0, 0)).exists()
    assert len(curves[0]) == len(pre)
    assert [r[:3] for r in rows] == [("none", 0, "ddpg")] * 2
    # same learner, separate random streams for the post-fault phase
    assert curves[0].rows() != pre.rows()


def test_sweep_covers_cross_product(checkpoints, tmp_path):
    cfg = replace(TINY, pretrain_checkpoint=str(checkpoints), episodes=12, log_steps=False,
                  sweep_degrees=(1, 2), sweep_algorithms=("ddpg", "bpm", "bpm_nofilter"))
    rows = harness.sweep(cfg, tmp_path)
    keys = {(m, d, a, s) for m, d, a, s, _ in rows}
    assert len(keys) == 3 * 2 * 3 * 2
    summary = harness.summarize_directory(tmp_path, replace(cfg, eval_window=10))
    assert len(summary) == 3 * 2 * 3
    assert all(0 <= r[4] <= 1 and r[5] <= r[4] <= r[6] for r in summary)


def test_cli_smoke(checkpoints, tmp_path):
    cfg_file = tmp_path / "tiny.cfg"
    cfg_file.write_text(harness.dump_config(replace(TINY, pretrain_checkpoint=str(checkpoints))))
    out = tmp_path / "out"
    cmd = [sys.executable, "-m", "bpm_arm", "run", "--config", str(cfg_file), "--out", str(out),
           "--algorithm", "bpm_nofilter", "--fault-mode", "offset", "--degree", "2",
           "--episodes", "11", "--seed", "1"]
    res = subprocess.run(cmd, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    curve = read_table(out / "curve_bpm_nofilter_offset_2_1.csv")
    assert len(curve) == 11
    bad = tmp_path / "bad.cfg"
    bad.write_text("env.wheels = 4\n")
    res = subprocess.run([sys.executable, "-m", "bpm_arm", "run", "--config", str(bad)],
                         capture_output=True, text=True)
    assert res.returncode == 2 and "unknown key" in res.stderr
