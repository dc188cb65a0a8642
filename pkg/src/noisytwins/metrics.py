"""Fréchet distance, per-class FID, k-NN precision/recall and collapse diagnostics."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ModeGridSpec
from .numcore import ContractError, FormatError, NumericError, ParameterError, ShapeError, matrix_sqrt_psd

FEATURE_MAGIC = b"FEATv1"
COV_EPS = 1e-10


@dataclass
class FeatureSet:
    features: np.ndarray
    labels: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise ParameterError("features must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.features),):
                raise ShapeError(f"{len(self.labels)} labels for {len(self.features)} feature rows")

    def __len__(self):
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def restrict(self, c: int) -> "FeatureSet":
        if self.labels is None:
            raise ContractError("feature set has no labels")
        keep = self.labels == c
        return FeatureSet(self.features[keep], self.labels[keep], self.source)


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int


def gaussian_stats(fs: FeatureSet | np.ndarray) -> FeatureStats:
    x = fs.features if isinstance(fs, FeatureSet) else np.asarray(fs, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise ContractError(f"need at least 2 samples for a covariance, got {n}")
    mu = x.mean(axis=0)
    centred = x - mu
    cov = centred.T @ centred / (n - 1)
    return FeatureStats(mu, 0.5 * (cov + cov.T), n)


def frechet_distance(a: FeatureStats, b: FeatureStats, eps: float = COV_EPS) -> float:
    """``|mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2))`` with ``eps * I`` added to both covariances.

    The cross term is evaluated as ``Tr((Sa^(1/2) Sb Sa^(1/2))^(1/2))``, which
    has the same trace and keeps everything symmetric.
    """
    if a.mean.shape != b.mean.shape:
        raise ShapeError(f"feature dims differ: {a.mean.shape[0]} vs {b.mean.shape[0]}")
    eye = eps * np.eye(a.mean.shape[0])
    sa = a.cov + eye
    sb = b.cov + eye
    root_a = matrix_sqrt_psd(sa)
    cross = matrix_sqrt_psd(root_a @ sb @ root_a)
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(sa) + np.trace(sb) - 2.0 * np.trace(cross))
    if value < 0:
        if value < -1e-8:
            raise NumericError(f"Fréchet distance came out negative ({value:.3g})")
        value = 0.0
    return value


@dataclass
class IntraFID:
    per_class: dict[int, float]
    mean: float
    skipped: list[int] = field(default_factory=list)


def intra_class_fid(real: FeatureSet, gen: FeatureSet, min_per_class: int = 50) -> IntraFID:
    """Fréchet distance per class; classes with too few samples on either side are skipped."""
    if real.labels is None or gen.labels is None:
        raise ContractError("intra-class FID needs labelled real and generated sets")
    if real.dim != gen.dim:
        raise ShapeError(f"feature dims differ: {real.dim} vs {gen.dim}")
    classes = sorted(set(real.labels.tolist()) | set(gen.labels.tolist()))
    per_class, skipped = {}, []
    for c in classes:
        r, g = real.restrict(c), gen.restrict(c)
        if len(r) < max(min_per_class, 2) or len(g) < max(min_per_class, 2):
            skipped.append(c)
            continue
        per_class[c] = frechet_distance(gaussian_stats(r), gaussian_stats(g))
    if not per_class:
        raise ContractError(f"no class has {min_per_class} samples on both sides")
    return IntraFID(per_class, float(np.mean(list(per_class.values()))), skipped)


@dataclass(frozen=True)
class PRResult:
    precision: float
    recall: float
    k: int


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)


def _chunks(n: int, rows_per: int):
    for start in range(0, n, rows_per):
        yield start, min(n, start + rows_per)


def knn_radii_sq(x: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    """Squared distance from each row to its k-th nearest other row."""
    out = np.empty(len(x))
    for s, e in _chunks(len(x), chunk):
        d = _sq_dists(x[s:e], x)
        d[np.arange(e - s), np.arange(s, e)] = np.inf
        out[s:e] = np.partition(d, k - 1, axis=1)[:, k - 1]
    return out


def manifold_membership(points: np.ndarray, support: np.ndarray, radii_sq: np.ndarray, chunk: int = 256) -> np.ndarray:
    """For each point, whether it lies in some ball ``|p - s| <= r_s`` around the support set."""
    inside = np.empty(len(points), dtype=bool)
    for s, e in _chunks(len(points), chunk):
        inside[s:e] = (_sq_dists(points[s:e], support) <= radii_sq[None, :]).any(axis=1)
    return inside


def precision_recall(real: FeatureSet | np.ndarray, gen: FeatureSet | np.ndarray, k: int = 3) -> PRResult:
    """Improved precision/recall with k-NN ball manifolds."""
    r = real.features if isinstance(real, FeatureSet) else np.asarray(real, dtype=np.float64)
    g = gen.features if isinstance(gen, FeatureSet) else np.asarray(gen, dtype=np.float64)
    if len(r) == 0 or len(g) == 0:
        raise ContractError("precision/recall needs non-empty sets")
    if r.shape[1] != g.shape[1]:
        raise ShapeError(f"feature dims differ: {r.shape[1]} vs {g.shape[1]}")
    if not 1 <= k < min(len(r), len(g)):
        raise ParameterError(f"k={k} must satisfy 1 <= k < min(N_real, N_gen) = {min(len(r), len(g))}")
    precision = manifold_membership(g, r, knn_radii_sq(r, k)).mean()
    recall = manifold_membership(r, g, knn_radii_sq(g, k)).mean()
    return PRResult(float(precision), float(recall), k)


def latent_dispersion(w: np.ndarray, labels, num_classes: int | None = None) -> np.ndarray:
    """Trace of the per-class sample covariance of latents; NaN where a class has < 2 rows."""
    w = np.asarray(w, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    out = np.full(num_classes, np.nan)
    for c in range(num_classes):
        rows = w[labels == c]
        if len(rows) >= 2:
            out[c] = float(rows.var(axis=0, ddof=1).sum())
    return out


def dispersion_summary(disp: np.ndarray) -> tuple[float, float]:
    """(min, mean) over classes with a defined dispersion; NaN when none is defined."""
    live = disp[np.isfinite(disp)]
    if live.size == 0:
        return float("nan"), float("nan")
    return float(live.min()), float(live.mean())


def mode_coverage(samples: np.ndarray, labels, spec: ModeGridSpec, radius: float) -> np.ndarray:
    """Per class, the fraction of its mode centres with a sample of that class within ``radius``."""
    if radius <= 0:
        raise ParameterError(f"radius must be positive, got {radius}")
    samples = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(spec.num_classes)
    for c in range(spec.num_classes):
        pts = samples[labels == c]
        if len(pts) == 0:
            continue
        hit = (_sq_dists(spec.centers[c], pts) <= radius * radius).any(axis=1)
        out[c] = hit.mean()
    return out


def write_features(path, fs: FeatureSet) -> None:
    has_labels = fs.labels is not None
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIB", len(fs), fs.dim, int(has_labels)))
        fh.write(np.ascontiguousarray(fs.features, dtype="<f8").tobytes())
        if has_labels:
            fh.write(np.asarray(fs.labels, dtype="<u4").tobytes())


def read_features(path, expected_dim: int | None = None) -> FeatureSet:
    """Parse a ``FEATv1`` file: magic, u32 N, u32 dim, u8 has_labels, f64 rows, optional u32 labels."""
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < len(FEATURE_MAGIC) or buf[: len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {FEATURE_MAGIC!r}", 0)
    off = len(FEATURE_MAGIC)
    if len(buf) < off + 9:
        raise FormatError(f"{path}: truncated header", len(buf))
    n, dim, flag = struct.unpack_from("<IIB", buf, off)
    if flag not in (0, 1):
        raise FormatError(f"{path}: has_labels flag must be 0 or 1, got {flag}", off + 8)
    if expected_dim is not None and dim != expected_dim:
        raise FormatError(f"{path}: feature dim {dim} != expected {expected_dim}", off + 4)
    off += 9
    need = n * dim * 8 + (n * 4 if flag else 0)
    if len(buf) - off < need:
        raise FormatError(f"{path}: truncated body, need {need} bytes, have {len(buf) - off}", len(buf))
    if len(buf) - off > need:
        raise FormatError(f"{path}: {len(buf) - off - need} trailing bytes", off + need)
    feats = np.frombuffer(buf, dtype="<f8", count=n * dim, offset=off).reshape(n, dim).astype(np.float64)
    labels = None
    if flag:
        labels = np.frombuffer(buf, dtype="<u4", count=n, offset=off + n * dim * 8).astype(np.int64)
    return FeatureSet(feats, labels, source=path.name)


def write_class_report(path, columns: dict[str, dict[int, float]], classes: list[int]) -> None:
    """CSV with one row per class and a final ``__mean__`` row (mean over defined values)."""
    names = list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class"] + names)
        for c in classes:
            w.writerow([c] + [_fmt(columns[n].get(c, float("nan"))) for n in names])
        means = []
        for n in names:
            vals = [v for v in columns[n].values() if np.isfinite(v)]
            means.append(_fmt(float(np.mean(vals)) if vals else float("nan")))
        w.writerow(["__mean__"] + means)


def _fmt(v: float) -> str:
    return repr(float(v))
