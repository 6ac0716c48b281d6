"""Frozen joint, degree 1: bpm with and without the accept/reject filter, and ddpg.

    python3 scripts/filter_ablation.py --config configs/default.cfg --out runs/ablation
"""
from _suite import parse_args, run_suite

if __name__ == "__main__":
    run_suite(parse_args(__doc__),
              lambda cfg: [(a, "frozen", 1) for a in ("ddpg", "bpm", "bpm_nofilter")])
