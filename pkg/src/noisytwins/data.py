"""Synthetic long-tailed 2-D datasets with known modes."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numcore import ContractError, FormatError, ParameterError, Rng

STRATEGIES = ("instance", "class-balanced")


@dataclass(frozen=True)
class LTProfile:
    num_classes: int = 10
    n_max: int = 5000
    rho: float = 100.0

    def __post_init__(self):
        if self.num_classes < 1 or self.n_max < 1:
            raise ParameterError("num_classes and n_max must be >= 1")
        if self.rho < 1:
            raise ParameterError(f"imbalance ratio rho must be >= 1, got {self.rho}")


def lt_class_counts(profile: LTProfile) -> np.ndarray:
    """Exponentially decaying counts ``round(n_max * rho**(-c / (C - 1)))``, floored at 1."""
    if profile.rho < 1:
        raise ParameterError(f"imbalance ratio rho must be >= 1, got {profile.rho}")
    c = profile.num_classes
    if c == 1:
        return np.array([profile.n_max], dtype=np.int64)
    exps = np.arange(c) / (c - 1)
    counts = np.rint(profile.n_max * profile.rho ** (-exps)).astype(np.int64)
    return np.maximum(counts, 1)


@dataclass
class ModeGridSpec:
    centers: np.ndarray  # (num_classes, modes_per_class, 2)
    mode_std: float = 0.05

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.centers.ndim != 3 or self.centers.shape[2] != 2:
            raise ParameterError(f"centers must have shape (C, M, 2), got {self.centers.shape}")
        if self.mode_std < 0:
            raise ParameterError("mode_std must be >= 0")
        flat = self.centers.reshape(-1, 2)
        if len(flat) > 1:
            d = np.sqrt(((flat[:, None] - flat[None]) ** 2).sum(-1))
            np.fill_diagonal(d, np.inf)
            if d.min() <= 6 * self.mode_std:
                raise ParameterError(
                    f"mode centers {d.min():.3g} apart; need more than 6 * mode_std = {6 * self.mode_std:.3g}"
                )

    @property
    def num_classes(self) -> int:
        return self.centers.shape[0]

    @property
    def modes_per_class(self) -> int:
        return self.centers.shape[1]

    @classmethod
    def ring_grid(
        cls,
        num_classes: int = 10,
        modes_per_class: int = 8,
        radius: float = 2.0,
        spacing: float = 6.0,
        grid_cols: int = 4,
        mode_std: float = 0.05,
    ) -> "ModeGridSpec":
        """Each class is a ring of modes around its own cell of a centred grid."""
        grid_rows = -(-num_classes // grid_cols)
        angles = 2 * np.pi * np.arange(modes_per_class) / modes_per_class
        ring = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        centers = []
        for c in range(num_classes):
            row, col = divmod(c, grid_cols)
            offset = np.array([(col - (grid_cols - 1) / 2) * spacing, ((grid_rows - 1) / 2 - row) * spacing])
            centers.append(offset + ring)
        return cls(np.array(centers), mode_std)


@dataclass
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    profile: LTProfile | None = None
    spec: ModeGridSpec | None = None
    modes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2 or len(self.samples) != len(self.labels):
            raise ParameterError("samples must be (N, dim) with one label per row")

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        if self.profile is not None:
            return self.profile.num_classes
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def by_class(self, c: int) -> np.ndarray:
        return self.samples[self.labels == c]


def synth_dataset(profile: LTProfile, spec: ModeGridSpec, rng: Rng) -> Dataset:
    if spec.num_classes != profile.num_classes:
        raise ParameterError(f"spec has {spec.num_classes} classes, profile {profile.num_classes}")
    counts = lt_class_counts(profile)
    xs, ys, modes = [], [], []
    for c, n in enumerate(counts):
        m = rng.integers(spec.modes_per_class, int(n))
        noise = rng.normal(2 * int(n)).reshape(int(n), 2) * spec.mode_std
        xs.append(spec.centers[c, m] + noise)
        ys.append(np.full(int(n), c))
        modes.append(m)
    return Dataset(np.concatenate(xs), np.concatenate(ys), profile, spec, np.concatenate(modes))


def sample_batch(ds: Dataset, rng: Rng, bs: int, strategy: str = "instance"):
    """Draw a batch ``(x, labels)``.

    ``instance`` draws rows uniformly without replacement (with replacement
    once ``bs`` exceeds the dataset), preserving the class imbalance.
    ``class-balanced`` draws a class uniformly, then a row within it.
    """
    if bs < 1:
        raise ContractError(f"batch size must be >= 1, got {bs}")
    n = len(ds)
    if n == 0:
        raise ContractError("cannot sample from an empty dataset")
    if strategy == "instance":
        idx = rng.permutation(n)[:bs] if bs <= n else rng.integers(n, bs)
    elif strategy == "class-balanced":
        present = np.flatnonzero(ds.class_counts())
        classes = present[rng.integers(len(present), bs)]
        members = [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]
        pick = rng.uniform(bs)
        idx = np.array([members[c][int(u * len(members[c]))] for c, u in zip(classes, pick)], dtype=np.int64)
    else:
        raise ParameterError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    return ds.samples[idx], ds.labels[idx]


class EpochSampler:
    """Instance sampling without replacement, reshuffling at each epoch boundary."""

    def __init__(self, ds: Dataset, rng: Rng, bs: int, strategy: str = "instance"):
        if bs < 1:
            raise ContractError(f"batch size must be >= 1, got {bs}")
        if len(ds) == 0:
            raise ContractError("cannot sample from an empty dataset")
        if strategy not in STRATEGIES:
            raise ParameterError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
        self.ds, self.rng, self.bs, self.strategy = ds, rng, bs, strategy
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self):
        if self.strategy != "instance" or self.bs > len(self.ds):
            return sample_batch(self.ds, self.rng, self.bs, self.strategy)
        if self._pos + self.bs > len(self._order):
            self._order = self.rng.permutation(len(self.ds))
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.bs]
        self._pos += self.bs
        return self.ds.samples[idx], self.ds.labels[idx]


def write_dataset_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(ds.samples.shape[1])] + ["label"])
        for row, label in zip(ds.samples, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def read_dataset_csv(path, profile: LTProfile | None = None, spec: ModeGridSpec | None = None) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label" or not all(h.startswith("x") for h in header[:-1]):
            raise FormatError(f"{path}: expected header x0,...,label, got {header}")
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            xs.append([float(v) for v in row[:-1]])
            ys.append(int(row[-1]))
    samples = np.array(xs, dtype=np.float64).reshape(len(xs), len(header) - 1)
    return Dataset(samples, np.array(ys, dtype=np.int64), profile, spec)
