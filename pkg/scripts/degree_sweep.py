"""Success rate against the number of faulty joints, every mode, degrees 1 to 4.

    python3 scripts/degree_sweep.py --config configs/default.cfg --out runs/degrees
"""
from _suite import parse_args, run_suite

if __name__ == "__main__":
    run_suite(parse_args(__doc__),
              lambda cfg: [(a, m, d) for m in cfg.sweep_modes for d in cfg.sweep_degrees
                           for a in cfg.sweep_algorithms])
