"""Sample a trained model and score it against its dataset."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .gan import TrainState, balanced_labels, generate
from .metrics import (
    FeatureSet,
    dispersion_summary,
    frechet_distance,
    gaussian_stats,
    intra_class_fid,
    latent_dispersion,
    mode_coverage,
    precision_recall,
)
from .numcore import ContractError, Rng

SUMMARY_KEYS = (
    "fid",
    "precision",
    "recall",
    "ifid_mean",
    "mean_coverage",
    "tail_coverage",
    "min_dispersion",
    "mean_dispersion",
)


@dataclass
class EvalResult:
    summary: dict[str, float]
    per_class: dict[str, dict[int, float]]
    skipped: list[int] = field(default_factory=list)


def tail_classes(dataset: Dataset, n: int = 3) -> list[int]:
    """The ``n`` classes with the fewest training samples (ties broken by higher class id)."""
    counts = dataset.class_counts()
    order = sorted(range(len(counts)), key=lambda c: (counts[c], -c))
    return sorted(order[:n])


def evaluate(
    state: TrainState,
    dataset: Dataset,
    samples: int | None = None,
    seed: int | None = None,
    gen_equals_real: bool = False,
    tail: int = 3,
) -> EvalResult:
    """Score a model with two generated sets.

    * a class-proportional set (labels drawn with the training frequencies) for
      FID and precision/recall against the full real set;
    * a class-balanced set (``samples // C`` per class) for per-class FID,
      mode coverage and latent dispersion.

    ``gen_equals_real`` substitutes the real data for the generated samples
    (self-evaluation sanity mode); latent dispersion is then undefined.
    """
    cfg = state.config.eval
    samples = cfg.samples if samples is None else samples
    rng = Rng(cfg.seed if seed is None else seed, (17,))
    num_classes = state.table.num_classes
    if dataset.spec is None:
        raise ContractError("evaluation needs the dataset's mode specification")
    if dataset.samples.shape[1] != 2:
        raise ContractError(f"dataset has dim {dataset.samples.shape[1]}, model generates 2-D points")

    counts = dataset.class_counts()
    if gen_equals_real:
        prop_x, prop_y = dataset.samples, dataset.labels
        bal_x, bal_y, bal_w = dataset.samples, dataset.labels, None
    else:
        cum = np.cumsum(counts) / counts.sum()
        prop_y = np.minimum(np.searchsorted(cum, rng.uniform(samples), side="right"), num_classes - 1)
        prop_x, _ = generate(state, prop_y, rng)
        bal_y = balanced_labels(num_classes, max(2, samples // num_classes))
        bal_x, bal_w = generate(state, bal_y, rng)

    real = FeatureSet(dataset.samples, dataset.labels, "coords")
    fid = frechet_distance(gaussian_stats(real), gaussian_stats(FeatureSet(prop_x)))
    pr = precision_recall(real, FeatureSet(prop_x), cfg.k)
    ifid = intra_class_fid(real, FeatureSet(bal_x, bal_y, "coords"), cfg.min_per_class)
    cov = mode_coverage(bal_x, bal_y, dataset.spec, cfg.coverage_radius)
    if bal_w is None:
        disp = np.full(num_classes, np.nan)
    else:
        disp = latent_dispersion(bal_w, bal_y, num_classes)
    dmin, dmean = dispersion_summary(disp)
    tails = tail_classes(dataset, tail)
    summary = {
        "fid": fid,
        "precision": pr.precision,
        "recall": pr.recall,
        "ifid_mean": ifid.mean,
        "mean_coverage": float(cov.mean()),
        "tail_coverage": float(cov[tails].mean()),
        "min_dispersion": dmin,
        "mean_dispersion": dmean,
    }
    per_class = {
        "count": {c: float(counts[c]) for c in range(num_classes)},
        "ifid": dict(ifid.per_class),
        "coverage": {c: float(cov[c]) for c in range(num_classes)},
        "dispersion": {c: float(disp[c]) for c in range(num_classes)},
    }
    return EvalResult(summary, per_class, ifid.skipped)
