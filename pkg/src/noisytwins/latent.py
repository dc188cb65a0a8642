"""Class embeddings, frequency-scaled embedding noise, twin augmentation and the mapping network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import MLP
from .numcore import Node, ParameterError, Rng, ShapeError, Tape
from .numcore import tape as T


def noise_scale(n_c: int, sigma: float, alpha: float) -> float:
    """Per-class noise std ``sigma * (1 - alpha) / (1 - alpha**n_c)``.

    This is ``sigma`` divided by the effective number of samples of the class,
    so rare classes get more noise. ``alpha = 0`` gives ``sigma`` exactly.
    """
    if n_c < 1:
        raise ParameterError(f"class count must be >= 1, got {n_c}")
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    if not 0.0 <= alpha < 1.0:
        raise ParameterError(f"alpha must lie in [0, 1), got {alpha}")
    if alpha == 0.0:
        return float(sigma)
    return float(sigma * (1.0 - alpha) / (1.0 - alpha ** int(n_c)))


@dataclass
class EmbeddingTable:
    means: np.ndarray  # (num_classes, d)
    class_counts: np.ndarray  # (num_classes,)
    sigma: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.class_counts = np.asarray(self.class_counts, dtype=np.int64)
        if self.means.ndim != 2 or self.means.shape[0] != self.class_counts.shape[0]:
            raise ShapeError(
                f"means {self.means.shape} do not match {self.class_counts.shape[0]} class counts"
            )
        if (self.class_counts < 1).any():
            raise ParameterError("every class count must be >= 1")
        if not np.isfinite(self.means).all():
            raise ParameterError("embedding means must be finite")
        self.scales = np.array([noise_scale(n, self.sigma, self.alpha) for n in self.class_counts])

    @classmethod
    def init(cls, class_counts, dim: int, rng: Rng, sigma: float = 0.0, alpha: float = 0.0, init_std: float = 0.02):
        counts = np.asarray(class_counts, dtype=np.int64)
        means = rng.normal(counts.size * dim).reshape(counts.size, dim) * init_std
        return cls(means, counts, sigma, alpha)

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def with_means(self, means: np.ndarray) -> "EmbeddingTable":
        return EmbeddingTable(means, self.class_counts, self.sigma, self.alpha)

    def check_labels(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise IndexError(f"class ids must lie in [0, {self.num_classes})")
        return labels

    def draw_noise(self, labels, rng: Rng) -> np.ndarray:
        labels = self.check_labels(labels)
        eps = rng.normal(labels.size * self.dim).reshape(labels.size, self.dim)
        return eps * self.scales[labels][:, None]


def augment_embedding(table: EmbeddingTable, label: int, rng: Rng) -> np.ndarray:
    return table.means[table.check_labels([label])[0]] + table.draw_noise([label], rng)[0]


@dataclass
class TwinBatch:
    z: np.ndarray
    labels: np.ndarray
    noise_a: np.ndarray
    noise_b: np.ndarray
    c_a: np.ndarray
    c_b: np.ndarray
    w_a: np.ndarray | None = None
    w_b: np.ndarray | None = None


def twin_batch(table: EmbeddingTable, labels, z: np.ndarray, rng: Rng) -> TwinBatch:
    """Two independent noisy copies of each row's class embedding, sharing that row's z."""
    labels = table.check_labels(labels)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (labels.size, table.dim):
        raise ShapeError(f"z has shape {z.shape}, expected {(labels.size, table.dim)}")
    if not np.isfinite(z).all():
        raise ParameterError("z must be finite")
    noise_a = table.draw_noise(labels, rng)
    noise_b = table.draw_noise(labels, rng)
    mu = table.means[labels]
    return TwinBatch(z, labels, noise_a, noise_b, mu + noise_a, mu + noise_b)


class MappingNet(MLP):
    """MLP from ``[z || c]`` (width 2d) to w (width d)."""

    def __post_init__(self):
        super().__post_init__()
        if self.in_dim != 2 * self.out_dim:
            raise ShapeError(f"mapping input width {self.in_dim} must be twice the output width {self.out_dim}")

    @classmethod
    def init(cls, dim: int, rng: Rng, hidden_layers: int = 2, hidden_width: int | None = None, slope: float = 0.2):
        width = hidden_width or 2 * dim
        base = MLP.init([2 * dim] + [width] * hidden_layers + [dim], rng, slope)
        return cls(base.weights, base.biases, slope)

    @property
    def dim(self) -> int:
        return self.out_dim

    def with_params(self, params) -> "MappingNet":
        return MappingNet(list(params[0::2]), list(params[1::2]), self.slope)


def _as_node(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.constant(x)


def map_forward(net: MappingNet, z, c, tape: Tape, bound: list[Node] | None = None) -> Node:
    """``w = MLP([z || c])`` recorded on ``tape``; binds fresh parameter leaves unless ``bound`` is given."""
    z = _as_node(tape, z)
    c = _as_node(tape, c)
    if z.shape != c.shape or z.shape[1] != net.dim:
        raise ShapeError(f"z {z.shape} and c {c.shape} must both be (BS, {net.dim})")
    if bound is None:
        bound = net.bind(tape)
    return net.apply(T.concat_cols(z, c), bound)


def embed_labels(means: Node, labels, noise: np.ndarray | None = None) -> Node:
    """Differentiable ``means[labels] + noise``."""
    rows = T.gather_rows(means, labels)
    if noise is None:
        return rows
    return T.add(rows, means.tape.constant(noise))


__all__ = [
    "EmbeddingTable",
    "MappingNet",
    "TwinBatch",
    "augment_embedding",
    "embed_labels",
    "map_forward",
    "noise_scale",
    "twin_batch",
]
