"""Reverse-mode differentiation over 2-D float64 matrices.

Every value is a ``rows x cols`` array; scalars are ``1 x 1``. Operations are
recorded on a :class:`Tape` in creation order, which is a valid topological
order, so the backward pass is a single reverse sweep.

Vector-Jacobian products are themselves written with the recorded operations.
With ``create_graph=True`` the backward sweep is recorded too, which is what
the R1 penalty needs (a gradient of a gradient norm). Without it the tape is
paused and the same code produces plain, unrecorded nodes.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError


class Node:
    __slots__ = ("value", "op", "parents", "attrs", "index", "tape", "name")

    def __init__(self, tape, value, op=None, parents=(), attrs=None, name=None):
        self.tape = tape
        self.value = value
        self.op = op
        self.parents = parents
        self.attrs = attrs
        self.index = -1
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        label = self.name or (self.op.__name__ if self.op else "leaf")
        return f"Node({label}, shape={self.shape}, index={self.index})"

    def __add__(self, other):
        if isinstance(other, Node):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Node):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Ordered record of operations on matrices.

    Not thread-safe; each training step or test builds its own tape.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.recording = True
        self.last_visit: list[int] = []
        self._live: set[int] | None = None

    def __len__(self):
        return len(self.nodes)

    def _record(self, node: Node) -> Node:
        if self.recording:
            node.index = len(self.nodes)
            self.nodes.append(node)
        return node

    def leaf(self, value, name: str | None = None) -> Node:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError(f"leaf values must be 2-D, got ndim={value.ndim}")
        return self._record(Node(self, value, name=name))

    constant = leaf

    def emit(self, op, value, parents, attrs=None) -> Node:
        if not self.recording:
            return Node(self, value, op, parents, attrs)
        return self._record(Node(self, value, op, parents, attrs))

    @contextmanager
    def paused(self):
        prev = self.recording
        self.recording = False
        try:
            yield self
        finally:
            self.recording = prev

    def grad(self, output: Node, wrt: Sequence[Node], create_graph: bool = False) -> list[Node]:
        """Gradients of the scalar ``output`` with respect to each node in ``wrt``.

        Nodes in ``wrt`` that ``output`` does not depend on get zero gradients.
        """
        if output.value.shape != (1, 1):
            raise ContractError(f"backward needs a scalar (1x1) output, got {output.value.shape}")
        if output.index < 0 or output.tape is not self:
            raise ContractError("output is not recorded on this tape")
        prev = self.recording
        self.recording = bool(create_graph) and prev
        try:
            grads: dict[int, Node] = {output.index: Node(self, np.ones((1, 1)))}
            wanted = {n.index for n in wrt}
            # forward reachability from wrt: only these nodes need gradients
            live = set(wanted)
            for node in self.nodes[min(wanted, default=0) : output.index + 1]:
                if node.op is not None and any(p.index in live for p in node.parents):
                    live.add(node.index)
            outer_live = self._live
            self._live = live
            visit = []
            for node in reversed(self.nodes[: output.index + 1]):
                g = grads.get(node.index)
                if g is None or node.op is None or node.index not in live:
                    continue
                visit.append(node.index)
                if node.index not in wanted:
                    del grads[node.index]
                parent_grads = node.op.vjp(g, node, *node.parents)
                for p, pg in zip(node.parents, parent_grads):
                    if pg is None or p.index < 0:
                        continue
                    if pg.value.shape != p.value.shape:
                        raise ShapeError(
                            f"{node.op.__name__}: gradient shape {pg.value.shape} "
                            f"!= operand shape {p.value.shape}"
                        )
                    have = grads.get(p.index)
                    grads[p.index] = pg if have is None else add(have, pg)
            self.last_visit = visit
            self._live = outer_live
            out = []
            for n in wrt:
                g = grads.get(n.index)
                if g is None:
                    g = Node(self, np.zeros_like(n.value))
                out.append(g)
            return out
        finally:
            self.recording = prev

    def backward(self, output: Node, wrt: Sequence[Node]) -> list[np.ndarray]:
        """Plain first-order gradients as arrays."""
        return [g.value for g in self.grad(output, wrt)]

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded value from the leaves, in recording order."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.op is None:
                values.append(node.value)
            else:
                args = [values[p.index] if p.index >= 0 else p.value for p in node.parents]
                values.append(node.op.forward(*args, **(node.attrs or {})))
        return values

    def kink_signature(self) -> bytes:
        """Packed signs of every leaky-relu input on the tape.

        Two evaluations with equal signatures lie on the same linear piece of
        every leaky relu, so finite differences between them are valid.
        """
        bits = [np.packbits(n.parents[0].value > 0) for n in self.nodes if n.op is LeakyRelu]
        return b"".join(b.tobytes() for b in bits)


def _wants(p: Node) -> bool:
    live = p.tape._live
    return live is None or p.index in live


def _emit(op, value, parents, attrs=None) -> Node:
    return parents[0].tape.emit(op, value, parents, attrs)


def _same_shape(name, a: Node, b: Node):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{name}: shapes {a.value.shape} and {b.value.shape} differ")


def _const(like: Node, value) -> Node:
    return Node(like.tape, np.asarray(value, dtype=np.float64))


# Each op is a namespace class: ``forward`` on arrays (used by replay) and
# ``vjp`` on nodes, returning one gradient node (or None) per parent.


class Add:
    forward = staticmethod(np.add)

    @staticmethod
    def vjp(g, out, a, b):
        return g, g


class Sub:
    forward = staticmethod(np.subtract)

    @staticmethod
    def vjp(g, out, a, b):
        return g, scale(g, -1.0)


class Mul:
    forward = staticmethod(np.multiply)

    @staticmethod
    def vjp(g, out, a, b):
        return (mul(g, b) if _wants(a) else None), (mul(g, a) if _wants(b) else None)


class Div:
    forward = staticmethod(np.divide)

    @staticmethod
    def vjp(g, out, a, b):
        ga = div(g, b)
        return ga, scale(mul(ga, out), -1.0)


class Scale:
    @staticmethod
    def forward(a, s):
        return a * s

    @staticmethod
    def vjp(g, out, a):
        return (scale(g, out.attrs["s"]),)


class AddScalar:
    @staticmethod
    def forward(a, s):
        return a + s

    @staticmethod
    def vjp(g, out, a):
        return (g,)


class MatMul:
    forward = staticmethod(np.matmul)

    @staticmethod
    def vjp(g, out, a, b):
        ga = matmul(g, transpose(b)) if _wants(a) else None
        gb = matmul(transpose(a), g) if _wants(b) else None
        return ga, gb


class Transpose:
    @staticmethod
    def forward(a):
        return a.T

    @staticmethod
    def vjp(g, out, a):
        return (transpose(g),)


class AddRow:
    forward = staticmethod(np.add)

    @staticmethod
    def vjp(g, out, x, row):
        return g, (sum_rows(g) if _wants(row) else None)


class MulRow:
    forward = staticmethod(np.multiply)

    @staticmethod
    def vjp(g, out, x, row):
        gx = mul_row(g, row) if _wants(x) else None
        return gx, (sum_rows(mul(g, x)) if _wants(row) else None)


class SumAll:
    @staticmethod
    def forward(a):
        return np.array([[a.sum()]])

    @staticmethod
    def vjp(g, out, a):
        return (fill(g, a.value.shape),)


class Fill:
    @staticmethod
    def forward(a, shape):
        return np.full(shape, a[0, 0])

    @staticmethod
    def vjp(g, out, a):
        return (sum_all(g),)


class SumRows:
    @staticmethod
    def forward(a):
        return a.sum(axis=0, keepdims=True)

    @staticmethod
    def vjp(g, out, a):
        return (tile_rows(g, a.value.shape[0]),)


class TileRows:
    @staticmethod
    def forward(a, n):
        return np.repeat(a, n, axis=0)

    @staticmethod
    def vjp(g, out, a):
        return (sum_rows(g),)


class SumCols:
    @staticmethod
    def forward(a):
        return a.sum(axis=1, keepdims=True)

    @staticmethod
    def vjp(g, out, a):
        return (tile_cols(g, a.value.shape[1]),)


class TileCols:
    @staticmethod
    def forward(a, n):
        return np.repeat(a, n, axis=1)

    @staticmethod
    def vjp(g, out, a):
        return (sum_cols(g),)


class LeakyRelu:
    @staticmethod
    def forward(a, slope):
        return np.where(a > 0, a, slope * a)

    @staticmethod
    def vjp(g, out, a):
        # piecewise linear: the slope mask is constant, second derivative is 0 a.e.
        slope = out.attrs["slope"]
        return (mul(g, _const(g, np.where(a.value > 0, 1.0, slope))),)


class Softplus:
    @staticmethod
    def forward(a):
        return np.logaddexp(0.0, a)

    @staticmethod
    def vjp(g, out, a):
        return (mul(g, sigmoid(a)),)


class Sigmoid:
    @staticmethod
    def forward(a):
        # split by sign so exp never overflows
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        e = np.exp(a[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    @staticmethod
    def vjp(g, out, a):
        return (mul(g, mul(out, add_scalar(scale(out, -1.0), 1.0))),)


class Square:
    forward = staticmethod(np.square)

    @staticmethod
    def vjp(g, out, a):
        return (mul(g, scale(a, 2.0)),)


class Diag:
    @staticmethod
    def forward(a):
        return np.diag(a).reshape(1, -1).copy()

    @staticmethod
    def vjp(g, out, a):
        return (diag_embed(g),)


class DiagEmbed:
    @staticmethod
    def forward(a):
        return np.diag(a[0])

    @staticmethod
    def vjp(g, out, a):
        return (diag(g),)


class GatherRows:
    @staticmethod
    def forward(a, idx):
        return a[idx]

    @staticmethod
    def vjp(g, out, a):
        return (scatter_rows(g, out.attrs["idx"], a.value.shape[0]),)


class ScatterRows:
    @staticmethod
    def forward(a, idx, n):
        out = np.zeros((n, a.shape[1]))
        np.add.at(out, idx, a)
        return out

    @staticmethod
    def vjp(g, out, a):
        return (gather_rows(g, out.attrs["idx"]),)


class SliceCols:
    @staticmethod
    def forward(a, start, stop):
        return a[:, start:stop].copy()

    @staticmethod
    def vjp(g, out, a):
        return (pad_cols(g, out.attrs["start"], a.value.shape[1]),)


class PadCols:
    @staticmethod
    def forward(a, start, total):
        out = np.zeros((a.shape[0], total))
        out[:, start : start + a.shape[1]] = a
        return out

    @staticmethod
    def vjp(g, out, a):
        start = out.attrs["start"]
        return (slice_cols(g, start, start + a.value.shape[1]),)


class ConcatCols:
    @staticmethod
    def forward(*parts):
        return np.concatenate(parts, axis=1)

    @staticmethod
    def vjp(g, out, *parts):
        grads, start = [], 0
        for p in parts:
            stop = start + p.value.shape[1]
            grads.append(slice_cols(g, start, stop) if _wants(p) else None)
            start = stop
        return tuple(grads)


class SliceRows:
    @staticmethod
    def forward(a, start, stop):
        return a[start:stop]

    @staticmethod
    def vjp(g, out, a):
        return (pad_rows(g, out.attrs["start"], a.value.shape[0]),)


class PadRows:
    @staticmethod
    def forward(a, start, total):
        out = np.zeros((total, a.shape[1]))
        out[start : start + a.shape[0]] = a
        return out

    @staticmethod
    def vjp(g, out, a):
        start = out.attrs["start"]
        return (slice_rows(g, start, start + a.value.shape[0]),)


class ConcatRows:
    @staticmethod
    def forward(*parts):
        return np.concatenate(parts, axis=0)

    @staticmethod
    def vjp(g, out, *parts):
        grads, start = [], 0
        for p in parts:
            stop = start + p.value.shape[0]
            grads.append(slice_rows(g, start, stop) if _wants(p) else None)
            start = stop
        return tuple(grads)


class InvStd:
    """Reciprocal of sqrt(var), with unit divisor where sqrt(var) < floor."""

    @staticmethod
    def forward(var, floor):
        std = np.sqrt(np.maximum(var, 0.0))
        return np.where(std < floor, 1.0, 1.0 / np.where(std < floor, 1.0, std))

    @staticmethod
    def vjp(g, out, var):
        # first-order only; never sits on a path that is differentiated twice
        std = np.sqrt(np.maximum(var.value, 0.0))
        live = std >= out.attrs["floor"]
        d = np.where(live, -0.5 / np.where(live, std**3, 1.0), 0.0)
        return (mul(g, _const(g, d)),)


def add(a: Node, b: Node) -> Node:
    _same_shape("add", a, b)
    return _emit(Add, a.value + b.value, (a, b))


def sub(a: Node, b: Node) -> Node:
    _same_shape("sub", a, b)
    return _emit(Sub, a.value - b.value, (a, b))


def mul(a: Node, b: Node) -> Node:
    _same_shape("mul", a, b)
    return _emit(Mul, a.value * b.value, (a, b))


def div(a: Node, b: Node) -> Node:
    _same_shape("div", a, b)
    return _emit(Div, a.value / b.value, (a, b))


def scale(a: Node, s: float) -> Node:
    return _emit(Scale, a.value * s, (a,), {"s": s})


def add_scalar(a: Node, s: float) -> Node:
    return _emit(AddScalar, a.value + s, (a,), {"s": s})


def matmul(a: Node, b: Node) -> Node:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: {a.value.shape} @ {b.value.shape}")
    return _emit(MatMul, a.value @ b.value, (a, b))


def transpose(a: Node) -> Node:
    return _emit(Transpose, a.value.T, (a,))


def add_row(x: Node, row: Node) -> Node:
    """``x + row`` with the ``1 x n`` row broadcast down every row of x."""
    if row.value.shape != (1, x.value.shape[1]):
        raise ShapeError(f"add_row: row {row.value.shape} vs matrix {x.value.shape}")
    return _emit(AddRow, x.value + row.value, (x, row))


def mul_row(x: Node, row: Node) -> Node:
    if row.value.shape != (1, x.value.shape[1]):
        raise ShapeError(f"mul_row: row {row.value.shape} vs matrix {x.value.shape}")
    return _emit(MulRow, x.value * row.value, (x, row))


def sum_all(a: Node) -> Node:
    return _emit(SumAll, np.array([[a.value.sum()]]), (a,))


def mean_all(a: Node) -> Node:
    return scale(sum_all(a), 1.0 / a.value.size)


def fill(a: Node, shape) -> Node:
    shape = tuple(shape)
    return _emit(Fill, np.full(shape, a.value[0, 0]), (a,), {"shape": shape})


def sum_rows(a: Node) -> Node:
    """Column sums as a ``1 x n`` row."""
    return _emit(SumRows, a.value.sum(axis=0, keepdims=True), (a,))


def tile_rows(a: Node, n: int) -> Node:
    return _emit(TileRows, np.repeat(a.value, n, axis=0), (a,), {"n": n})


def sum_cols(a: Node) -> Node:
    """Row sums as an ``m x 1`` column."""
    return _emit(SumCols, a.value.sum(axis=1, keepdims=True), (a,))


def tile_cols(a: Node, n: int) -> Node:
    return _emit(TileCols, np.repeat(a.value, n, axis=1), (a,), {"n": n})


def leaky_relu(a: Node, slope: float = 0.2) -> Node:
    v = a.value
    return _emit(LeakyRelu, np.where(v > 0, v, slope * v), (a,), {"slope": slope})


def relu(a: Node) -> Node:
    return leaky_relu(a, 0.0)


def softplus(a: Node) -> Node:
    return _emit(Softplus, np.logaddexp(0.0, a.value), (a,))


def sigmoid(a: Node) -> Node:
    return _emit(Sigmoid, Sigmoid.forward(a.value), (a,))


def square(a: Node) -> Node:
    return _emit(Square, np.square(a.value), (a,))


def diag(a: Node) -> Node:
    """Diagonal of a square matrix as a ``1 x n`` row."""
    if a.value.shape[0] != a.value.shape[1]:
        raise ShapeError(f"diag needs a square matrix, got {a.value.shape}")
    return _emit(Diag, np.diag(a.value).reshape(1, -1).copy(), (a,))


def diag_embed(a: Node) -> Node:
    return _emit(DiagEmbed, np.diag(a.value[0]), (a,))


def gather_rows(a: Node, idx) -> Node:
    idx = np.asarray(idx, dtype=np.intp)
    return _emit(GatherRows, a.value[idx], (a,), {"idx": idx})


def scatter_rows(a: Node, idx, n: int) -> Node:
    return _emit(ScatterRows, ScatterRows.forward(a.value, idx, n), (a,), {"idx": idx, "n": n})


def slice_cols(a: Node, start: int, stop: int) -> Node:
    return _emit(SliceCols, a.value[:, start:stop].copy(), (a,), {"start": start, "stop": stop})


def pad_cols(a: Node, start: int, total: int) -> Node:
    return _emit(PadCols, PadCols.forward(a.value, start, total), (a,), {"start": start, "total": total})


def concat_cols(*parts: Node) -> Node:
    rows = {p.value.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {sorted(rows)}")
    return _emit(ConcatCols, np.concatenate([p.value for p in parts], axis=1), tuple(parts))


def slice_rows(a: Node, start: int, stop: int) -> Node:
    return _emit(SliceRows, a.value[start:stop], (a,), {"start": start, "stop": stop})


def pad_rows(a: Node, start: int, total: int) -> Node:
    return _emit(PadRows, PadRows.forward(a.value, start, total), (a,), {"start": start, "total": total})


def concat_rows(*parts: Node) -> Node:
    cols = {p.value.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ {sorted(cols)}")
    return _emit(ConcatRows, np.concatenate([p.value for p in parts], axis=0), tuple(parts))


def inv_std(var: Node, floor: float = 1e-8) -> Node:
    return _emit(InvStd, InvStd.forward(var.value, floor), (var,), {"floor": floor})


def linear(x: Node, weight: Node, bias: Node) -> Node:
    return add_row(matmul(x, weight), bias)


def value_and_grad(fn: Callable[..., Node]) -> Callable:
    """Wrap ``fn(tape, *leaf_nodes) -> scalar node`` as ``f(arrays) -> (value, grads)``."""

    def wrapped(arrays: Iterable[np.ndarray]):
        tape = Tape()
        leaves = [tape.leaf(a) for a in arrays]
        out = fn(tape, *leaves)
        return out.item(), tape.backward(out, leaves)

    return wrapped
