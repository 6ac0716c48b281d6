"""Fill the experiment cache used by tests/test_acceptance.py.

Runs healthy pre-training, the degree-1 mode comparison, the frozen-mode
filter ablation and the bpm degree sweep, in that order, skipping cells that
are already cached. Prints one line per finished cell.

    python3 scripts/run_acceptance_experiments.py [--only-degree-1]
"""
import argparse
import time

import numpy as np

from bpm_arm import experiments as X
from bpm_arm.curves import episodes_to_threshold


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--only-degree-1", action="store_true")
    args = parser.parse_args()
    config = X.default_config()
    t0 = time.time()
    pre = X.ensure_pretrained(config)
    print(f"pretrain: {[round(r.success_rate, 2) for r in pre.values()]} ({time.time() - t0:.0f}s)",
          flush=True)
    cells = [("bpm", m, 1) for m in ("frozen", "offset", "jitter")]
    cells += [("ddpg", m, 1) for m in ("frozen", "offset", "jitter")]
    cells += [("bpm_nofilter", "frozen", 1)]
    if not args.only_degree_1:
        cells += [("bpm", m, d) for d in (2, 3, 4) for m in ("frozen", "offset", "jitter")]
    for algo, mode, degree in cells:
        res = X.ensure_cell(config, algo, mode, degree)
        hits = [episodes_to_threshold(r.curve, config.success_threshold, config.rolling_window)
                for r in res.values()]
        rates = [r.success_rate for r in res.values()]
        print(f"{algo:13s} {mode:7s} d={degree}: median success {np.median(rates):.2f}, "
              f"median episodes-to-50% {np.median(hits):g} ({time.time() - t0:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
