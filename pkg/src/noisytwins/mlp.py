from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import Node, Rng, ShapeError, Tape
from .numcore import tape as T


@dataclass
class MLP:
    """Fully connected net: leaky-relu on hidden layers, linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    slope: float = 0.2

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (1, w.shape[1]):
                raise ShapeError(f"layer {i}: bias {b.shape} does not match weight {w.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeError(f"layer {i}: input width {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")

    @classmethod
    def init(cls, widths: list[int], rng: Rng, slope: float = 0.2) -> "MLP":
        weights, biases = [], []
        gain = np.sqrt(2.0 / (1.0 + slope**2))
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            weights.append(rng.normal(fan_in * fan_out).reshape(fan_in, fan_out) * (gain / np.sqrt(fan_in)))
            biases.append(np.zeros((1, fan_out)))
        return cls(weights, biases, slope)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params: list[np.ndarray]) -> "MLP":
        return MLP(list(params[0::2]), list(params[1::2]), self.slope)

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def bind(self, tape: Tape) -> list[Node]:
        return [tape.leaf(p) for p in self.params()]

    def apply(self, x: Node, bound: list[Node]) -> Node:
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"input width {x.shape[1]} != net input width {self.in_dim}")
        n = len(bound) // 2
        h = x
        for i in range(n):
            h = T.linear(h, bound[2 * i], bound[2 * i + 1])
            if i < n - 1:
                h = T.leaky_relu(h, self.slope)
        return h

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Untaped forward pass on arrays."""
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.where(h > 0, h, self.slope * h)
        return h
