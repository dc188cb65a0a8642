"""Command-line harness: ``noisytwins gen-data | train | eval | sweep``.

Exit codes: 0 success, 1 partial sweep failure, 2 usage or config error,
3 numeric divergence. ``NOISYTWINS_THREADS`` caps sweep parallelism.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path


from . import __version__
from .config import ConfigError, TrainConfig, dump_toml, load_config, tomllib
from .data import lt_class_counts, read_dataset_csv, write_dataset_csv
from .evaluate import SUMMARY_KEYS, EvalResult, evaluate
from .experiments import dataset_for, mean_std
from .gan import load_state, train
from .metrics import (
    FeatureSet,
    frechet_distance,
    gaussian_stats,
    intra_class_fid,
    precision_recall,
    read_features,
    write_class_report,
)
from .numcore import FormatError, NoisyTwinsError, NumericError
from .plots import line_plot_svg

log = logging.getLogger("noisytwins")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

SWEEP_PARAMS = {
    "sigma": "noise.sigma",
    "lam": "loss.lam",
    "gamma": "loss.gamma",
    "rho": "data.rho",
    "alpha": "noise.alpha",
}


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    config: dict
    seed: int
    started: str
    finished: str | None = None
    status: str = "running"
    tag: str = "noisytwins"
    paths: dict = field(default_factory=dict)
    version: str = __version__

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _load(path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    return load_config(path)


def _threads() -> int:
    raw = os.environ.get("NOISYTWINS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"NOISYTWINS_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"NOISYTWINS_THREADS must be >= 1, got {n}")
    return n


# gen-data


def run_gen_data(config_path, out=None) -> Path:
    cfg = _load(config_path)
    out = Path(out) if out is not None else Path(config_path).parent / "data"
    out.mkdir(parents=True, exist_ok=True)
    ds = dataset_for(cfg)
    write_dataset_csv(ds, out / "dataset.csv")
    spec = {
        "data": asdict(cfg.data),
        "class_counts": lt_class_counts(cfg.data.profile()).tolist(),
        "centers": ds.spec.centers.tolist(),
    }
    (out / "dataset_spec.json").write_text(json.dumps(spec, indent=2) + "\n")
    print(f"wrote {len(ds)} samples to {out / 'dataset.csv'}")
    return out


# train


def run_train(config_path, out=None, seed=None) -> int:
    cfg = _load(config_path)
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    out = Path(out) if out is not None else Path("runs") / f"{Path(config_path).stem}-seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_toml(cfg))
    manifest = RunManifest(cfg.to_dict(), cfg.seed, _now(), tag="baseline" if cfg.is_baseline else "noisytwins")
    manifest.paths["config"] = "config.toml"
    manifest.write(out / "manifest.json")
    ds = dataset_for(cfg)
    status = EXIT_OK
    try:
        res = train(cfg, ds, out)
        manifest.status = "complete"
        manifest.paths["checkpoints"] = [p.name for p in res.checkpoints]
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        manifest.status = "diverged"
        manifest.paths["checkpoints"] = ["partial.ckpt"]
        status = EXIT_DIVERGED
    manifest.paths["runlog"] = "runlog.csv"
    if cfg.eval_every:
        manifest.paths["snapshots"] = "snapshots.csv"
    manifest.finished = _now()
    manifest.write(out / "manifest.json")
    print(f"{manifest.status}: {out}")
    return status


# eval


def _feature_scores(real: FeatureSet, gen: FeatureSet, cfg) -> dict[str, float]:
    if real.dim != gen.dim:
        raise UsageError(f"feature dims differ: real {real.dim} vs generated {gen.dim}")
    scores = {
        "fid": frechet_distance(gaussian_stats(real), gaussian_stats(gen)),
    }
    pr = precision_recall(real, gen, cfg.eval.k)
    scores.update(precision=pr.precision, recall=pr.recall)
    if real.labels is not None and gen.labels is not None:
        scores["ifid_mean"] = intra_class_fid(real, gen, cfg.eval.min_per_class).mean
    return scores


def run_eval(ckpt, data, features=None, gen_features=None, samples=None, runs=None, out=None, self_eval=False) -> int:
    ckpt, data = Path(ckpt), Path(data)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    if not data.is_file():
        raise UsageError(f"dataset not found: {data}")
    state = load_state(ckpt)
    cfg = state.config
    ds = read_dataset_csv(data, cfg.data.profile(), cfg.data.spec())
    if ds.samples.shape[1] != 2:
        raise UsageError(f"dataset has {ds.samples.shape[1]} coordinates; the model generates 2-D points")
    if len(ds) and int(ds.labels.max()) >= state.table.num_classes:
        raise UsageError(f"dataset has labels beyond the model's {state.table.num_classes} classes")
    if (features is None) != (gen_features is None):
        raise UsageError("--features and --gen-features must be given together")
    runs = cfg.eval.runs if runs is None else runs
    if runs < 1:
        raise UsageError(f"--runs must be >= 1, got {runs}")
    out = Path(out) if out is not None else ckpt.parent / "eval"
    out.mkdir(parents=True, exist_ok=True)

    feature_scores = None
    if features is not None:
        real_f = read_features(features)
        gen_f = read_features(gen_features, expected_dim=real_f.dim)
        feature_scores = _feature_scores(real_f, gen_f, cfg)

    rows = []
    for k in range(runs):
        res: EvalResult = evaluate(state, ds, samples=samples, seed=cfg.eval.seed + k, gen_equals_real=self_eval)
        classes = list(range(state.table.num_classes))
        write_class_report(out / f"eval_run{k}.csv", res.per_class, classes)
        summary = dict(res.summary)
        if feature_scores is not None:
            summary.update({f"feat_{n}": v for n, v in feature_scores.items()})
        rows.append(summary)
        print(f"run {k}: " + " ".join(f"{n}={v:.4g}" for n, v in summary.items()))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "mean", "std", "runs", "samples", "k"])
        for name in rows[0]:
            m, s = mean_std([r[name] for r in rows])
            w.writerow([name, repr(m), repr(s), runs, samples if samples is not None else cfg.eval.samples, cfg.eval.k])
    return EXIT_OK


# sweep


@dataclass
class SweepSpec:
    param: str
    values: list[float]
    seeds: list[int]
    base: Path | None
    out: Path
    overrides: dict


def load_sweep(path) -> SweepSpec:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"sweep spec not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    unknown = set(raw) - {"param", "values", "seeds", "base", "out", "overrides"}
    if unknown:
        raise UsageError(f"{path}: unknown sweep keys {sorted(unknown)}")
    param = raw.get("param")
    if param not in SWEEP_PARAMS:
        raise UsageError(f"{path}: param must be one of {sorted(SWEEP_PARAMS)}, got {param!r}")
    values, seeds = raw.get("values", []), raw.get("seeds", [0])
    if not values:
        raise UsageError(f"{path}: empty value list")
    if not seeds:
        raise UsageError(f"{path}: empty seed list")
    base = path.parent / raw["base"] if "base" in raw else None
    out = path.parent / raw.get("out", path.stem)
    return SweepSpec(param, [float(v) for v in values], [int(s) for s in seeds], base, out, raw.get("overrides", {}))


def _sweep_child(cfg_dict: dict, out_dir: str) -> dict[str, float]:
    from .config import from_dict
    from .gan import train as _train

    cfg = from_dict(cfg_dict)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_toml(cfg))
    ds = dataset_for(cfg)
    res = _train(cfg, ds, out)
    ev = evaluate(res.state, ds)
    write_class_report(out / "eval.csv", ev.per_class, list(range(cfg.data.num_classes)))
    return ev.summary


def run_sweep(spec_path) -> int:
    spec = load_sweep(spec_path)
    base = _load(spec.base) if spec.base is not None else TrainConfig()
    if spec.overrides:
        base = base.replace(**spec.overrides)
    spec.out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for v in spec.values:
        for s in spec.seeds:
            cfg = base.replace(**{SWEEP_PARAMS[spec.param]: v, "seed": s})
            jobs.append((v, s, cfg.to_dict(), str(spec.out / f"{spec.param}={v:g}" / f"seed={s}")))
    results, failures = {}, []
    workers = min(_threads(), len(jobs))

    def record(v, s, fut_or_fn):
        try:
            results[(v, s)] = fut_or_fn()
        except Exception as exc:  # child failures are recorded and the sweep continues
            failures.append((v, s, f"{type(exc).__name__}: {exc}"))
            print(f"child {spec.param}={v:g} seed={s} failed: {exc}", file=sys.stderr)

    if workers > 1:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [(v, s, pool.submit(_sweep_child, d, o)) for v, s, d, o in jobs]
            for v, s, fut in futs:
                record(v, s, fut.result)
    else:
        for v, s, d, o in jobs:
            record(v, s, lambda d=d, o=o: _sweep_child(d, o))

    with open(spec.out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "seed", "metric", "score"])
        for v, s, _, _ in jobs:
            if (v, s) in results:
                for metric, score in results[(v, s)].items():
                    w.writerow([spec.param, repr(v), s, metric, repr(float(score))])
    for metric in SUMMARY_KEYS:
        means, stds = [], []
        for v in spec.values:
            m, sd = mean_std([results[(v, s)][metric] for s in spec.seeds if (v, s) in results])
            means.append(m)
            stds.append(sd)
        svg = line_plot_svg(spec.values, means, stds, f"{metric} vs {spec.param}", spec.param, metric)
        (spec.out / f"{metric}.svg").write_text(svg)
    if failures:
        with open(spec.out / "failures.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["value", "seed", "error"])
            w.writerows(failures)
        return EXIT_PARTIAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="noisytwins", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic dataset described by a config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: <config dir>/data)")

    p = sub.add_parser("train", help="train one model")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: runs/<config>-seed<N>)")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a dataset CSV")
    p.add_argument("ckpt")
    p.add_argument("data")
    p.add_argument("--features", help="FEATv1 file of real-sample features")
    p.add_argument("--gen-features", help="FEATv1 file of generated-sample features")
    p.add_argument("--samples", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--out", help="output directory (default: <ckpt dir>/eval)")
    p.add_argument("--self", dest="self_eval", action="store_true", help="score the real data against itself")

    p = sub.add_parser("sweep", help="train and evaluate over one hyperparameter grid")
    p.add_argument("spec")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "gen-data":
            run_gen_data(args.config, args.out)
            return EXIT_OK
        if args.command == "train":
            return run_train(args.config, args.out, args.seed)
        if args.command == "eval":
            return run_eval(
                args.ckpt, args.data, args.features, args.gen_features, args.samples, args.runs, args.out, args.self_eval
            )
        return run_sweep(args.spec)
    except (UsageError, ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (NoisyTwinsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
