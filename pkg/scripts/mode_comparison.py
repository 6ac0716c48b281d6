"""Learning curves after a single faulty joint: bpm vs from-scratch ddpg, per mode.

    python3 scripts/mode_comparison.py --config configs/default.cfg --out runs/modes
"""
from _suite import parse_args, run_suite

if __name__ == "__main__":
    run_suite(parse_args(__doc__),
              lambda cfg: [(a, m, 1) for m in cfg.sweep_modes for a in ("ddpg", "bpm")])
