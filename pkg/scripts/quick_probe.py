"""Short baseline-vs-NoisyTwins probe run; prints evaluation summaries."""

import argparse
import ast
import sys
import time

from noisytwins.config import TrainConfig
from noisytwins.data import synth_dataset
from noisytwins.evaluate import evaluate
from noisytwins.gan import train
from noisytwins.numcore import Rng


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rho", type=float, default=100.0)
    ap.add_argument("--set", action="append", default=[], help="dotted.key=value override")
    args = ap.parse_args(argv)
    base = TrainConfig(iterations=args.iters, seed=args.seed)
    base.data.rho = args.rho
    for item in args.set:
        k, v = item.split("=", 1)
        base = base.replace(**{k: ast.literal_eval(v)})
    ds = synth_dataset(base.data.profile(), base.data.spec(), Rng(base.data.seed))
    variants = {
        "baseline": base.replace(**{"noise.sigma": 0.0, "loss.lam": 0.0}),
        "noisytwins": base,
    }
    for name, cfg in variants.items():
        t = time.time()
        res = train(cfg, ds)
        ev = evaluate(res.state, ds)
        s = " ".join(f"{k}={v:.4g}" for k, v in ev.summary.items())
        cov = " ".join(f"{ev.per_class['coverage'][c]:.2f}" for c in range(cfg.data.num_classes))
        print(f"{name:10s} {time.time() - t:6.1f}s {s}\n   coverage: {cov}", flush=True)


if __name__ == "__main__":
    sys.exit(main())
