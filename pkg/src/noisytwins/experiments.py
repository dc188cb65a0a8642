"""Shared helpers for train-then-evaluate experiments, with an on-disk result cache.

Desk-scale runs take minutes each, and the behavioural checks reuse the same
(config, seed) pairs, so results are cached under a key built from the full
config and a hash of the modules on the training and evaluation path. Editing
any of them invalidates the cache.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .data import Dataset, synth_dataset
from .evaluate import evaluate
from .gan import train
from .numcore import Rng

log = logging.getLogger(__name__)

PACKAGE_DIR = Path(__file__).resolve().parent
# Modules whose edits cannot change a training or evaluation result.
_NOT_HASHED = {"cli.py", "plots.py", "experiments.py", "__init__.py"}


def source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted(PACKAGE_DIR.rglob("*.py")):
        if path.parent == PACKAGE_DIR and path.name in _NOT_HASHED:
            continue
        h.update(path.relative_to(PACKAGE_DIR).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def config_key(cfg: TrainConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True) + source_digest()
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def dataset_for(cfg: TrainConfig) -> Dataset:
    return synth_dataset(cfg.data.profile(), cfg.data.spec(), Rng(cfg.data.seed))


@dataclass
class RunSummary:
    config: dict
    summary: dict[str, float]
    per_class: dict[str, dict[int, float]]
    final_record: dict[str, float]

    def to_json(self) -> str:
        per_class = {k: {str(c): v for c, v in d.items()} for k, d in self.per_class.items()}
        return json.dumps(
            {"config": self.config, "summary": self.summary, "per_class": per_class, "final_record": self.final_record},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "RunSummary":
        d = json.loads(text)
        per_class = {k: {int(c): v for c, v in v_.items()} for k, v_ in d["per_class"].items()}
        return cls(d["config"], d["summary"], per_class, d["final_record"])


def run_and_evaluate(cfg: TrainConfig, cache_dir=None, dataset: Dataset | None = None) -> RunSummary:
    """Train ``cfg`` and evaluate the final state; reuses a cached result when one exists."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{config_key(cfg)}.json"
        if path.exists():
            return RunSummary.from_json(path.read_text())
    ds = dataset if dataset is not None else dataset_for(cfg)
    res = train(cfg, ds)
    ev = evaluate(res.state, ds)
    last = res.log.records[-1] if res.log.records else None
    final = {} if last is None else {k: float(getattr(last, k)) for k in ("L_D", "L_G", "L_NT")}
    out = RunSummary(cfg.to_dict(), ev.summary, ev.per_class, final)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(out.to_json())
        os.replace(tmp, path)
    return out


def mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


# Variants of the collapse experiment; each maps dotted config paths to values.
BASELINE = {"noise.sigma": 0.0, "loss.lam": 0.0}
NOISYTWINS = {"noise.sigma": 0.75, "loss.lam": 0.01, "loss.gamma": 0.05}
NO_DECORRELATION = {"noise.sigma": 0.75, "loss.lam": 0.01, "loss.gamma": 0.0}
VARIANTS = {"baseline": BASELINE, "noisytwins": NOISYTWINS, "gamma0": NO_DECORRELATION}


def variant_config(base: TrainConfig, variant: str, seed: int, **extra) -> TrainConfig:
    changes = dict(VARIANTS[variant])
    changes["seed"] = seed
    changes.update(extra)
    return base.replace(**changes)
