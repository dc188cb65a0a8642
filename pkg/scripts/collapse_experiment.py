"""Baseline vs NoisyTwins vs no-decorrelation across seeds and imbalance ratios.

Prints mean +/- std of each summary metric. Results are cached, so reruns with
the same settings are instant.
"""

import argparse
import sys
from pathlib import Path

from noisytwins.config import TrainConfig
from noisytwins.evaluate import SUMMARY_KEYS
from noisytwins.experiments import VARIANTS, mean_std, run_and_evaluate, variant_config


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=20000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--rho", type=float, nargs="+", default=[100.0])
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    ap.add_argument("--cache", type=Path, default=Path(".cache/acceptance"))
    args = ap.parse_args(argv)
    base = TrainConfig(iterations=args.iters)
    print(f"{'rho':>6} {'variant':12s} " + " ".join(f"{k:>18s}" for k in SUMMARY_KEYS))
    for rho in args.rho:
        for name in args.variants:
            runs = [
                run_and_evaluate(variant_config(base, name, s, **{"data.rho": rho}), args.cache)
                for s in args.seeds
            ]
            cells = []
            for k in SUMMARY_KEYS:
                m, sd = mean_std([r.summary[k] for r in runs])
                cells.append(f"{m:9.4g} +/- {sd:<5.2g}")
            print(f"{rho:6g} {name:12s} " + " ".join(f"{c:>18s}" for c in cells), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
