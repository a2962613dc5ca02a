"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every operation applied to its :class:`Node` values.
:func:`backward` walks the recording in reverse and returns a fresh gradient
map; nothing is written back onto the nodes, so repeated calls on the same
tape give identical results.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not fit the operation."""


class ContractError(RuntimeError):
    """An operation was invoked outside its preconditions."""


def as_array(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite value in tensor data")
    return arr


class Node:
    """One value on a tape.

    ``kind`` is ``"param"`` (trainable leaf), ``"const"`` (leaf without
    gradient) or ``"op"`` (result of a recorded operation).
    """

    __slots__ = ("tape", "index", "value", "kind", "name", "parents", "vjp")

    def __init__(self, tape, index, value, kind, name=None, parents=(), vjp=None):
        self.tape = tape
        self.index = index
        self.value = value
        self.kind = kind
        self.name = name
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        label = self.name or self.kind
        return f"Node({label}, shape={self.shape})"

    # arithmetic sugar, kept to what the model needs
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


class Tape:
    """Append-only record of nodes in creation (hence topological) order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _push(self, value, kind, name=None, parents=(), vjp=None) -> Node:
        node = Node(self, len(self.nodes), value, kind, name, tuple(parents), vjp)
        self.nodes.append(node)
        return node

    def param(self, name: str, value) -> Node:
        return self._push(as_array(value), "param", name=name)

    def const(self, value, name: str | None = None) -> Node:
        return self._push(as_array(value), "const", name=name)

    def record(self, value: np.ndarray, parents: Sequence[Node], vjp: Callable) -> Node:
        """Add an op node. ``vjp(g)`` maps the output cotangent to one
        cotangent per parent (``None`` where the parent needs none)."""
        for p in parents:
            if p.tape is not self:
                raise ContractError("operands recorded on different tapes")
        if not np.all(np.isfinite(value)):
            raise FloatingPointError("operation produced a non-finite value")
        return self._push(value, "op", parents=parents, vjp=vjp)

    def params(self) -> dict[str, Node]:
        return {n.name: n for n in self.nodes if n.kind == "param"}


def backward(tape: Tape, root: Node) -> dict[str, np.ndarray]:
    """Gradient of the scalar ``root`` with respect to every trainable leaf.

    Leaves that do not reach ``root`` get a zero gradient; constants get none.
    """
    if root.tape is not tape:
        raise ContractError("root is not recorded on this tape")
    if root.value.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")

    cot: dict[int, np.ndarray] = {root.index: np.ones_like(root.value)}
    for node in reversed(tape.nodes[: root.index + 1]):
        g = cot.get(node.index)
        if g is None or node.kind != "op":
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or parent.kind == "const":
                continue
            if parent.index >= node.index:
                raise RuntimeError("tape order violated: parent recorded after child")
            prev = cot.get(parent.index)
            cot[parent.index] = pg if prev is None else prev + pg

    grads = {}
    for node in tape.nodes:
        if node.kind == "param":
            g = cot.get(node.index)
            grads[node.name] = np.zeros_like(node.value) if g is None else g.reshape(node.shape)
    return grads


# ---------------------------------------------------------------------------
# operations


def _check_same(a: Node, b: Node, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Node, b: Node) -> Node:
    _check_same(a, b, "add")
    return a.tape.record(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _check_same(a, b, "sub")
    return a.tape.record(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    """Elementwise product."""
    _check_same(a, b, "mul")
    av, bv = a.value, b.value
    return a.tape.record(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Node, c: float) -> Node:
    return a.tape.record(a.value * c, (a,), lambda g: (g * c,))


def one_minus(a: Node) -> Node:
    return a.tape.record(1.0 - a.value, (a,), lambda g: (-g,))


def project(P: Node, b: Node, x: Node) -> Node:
    """Affine map ``Pᵀx + b`` with ``P`` stored input×output."""
    if P.value.ndim != 2 or b.value.ndim != 1 or x.value.ndim != 1 \
            or P.shape[1] != b.shape[0] or P.shape[0] != x.shape[0]:
        raise ShapeError(
            f"project: weight {P.shape}, bias {b.shape}, input {x.shape} do not fit")
    Pv, xv = P.value, x.value
    return P.tape.record(Pv.T @ xv + b.value, (P, b, x),
                         lambda g: (np.outer(xv, g), g, Pv @ g))


def project_rows(P: Node, b: Node, X: Node) -> Node:
    """Row-wise affine map: row j of the result is ``Pᵀ X[j] + b``."""
    if X.value.ndim != 2 or P.shape[0] != X.shape[1] or P.shape[1] != b.shape[0]:
        raise ShapeError(
            f"project_rows: weight {P.shape}, bias {b.shape}, rows {X.shape} do not fit")
    Pv, Xv = P.value, X.value
    return P.tape.record(Xv @ Pv + b.value, (P, b, X),
                         lambda g: (Xv.T @ g, g.sum(axis=0), g @ Pv.T))


def matvec(W: Node, x: Node) -> Node:
    """``W x`` (left multiplication, no transpose)."""
    if W.value.ndim != 2 or x.value.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: matrix {W.shape} and vector {x.shape} do not fit")
    Wv, xv = W.value, x.value
    return W.tape.record(Wv @ xv, (W, x), lambda g: (np.outer(g, xv), Wv.T @ g))


def rows_dot(X: Node, v: Node) -> Node:
    """Vector of ``vᵀ X[j]`` over the rows of ``X``."""
    if X.value.ndim != 2 or X.shape[1] != v.shape[0]:
        raise ShapeError(f"rows_dot: rows {X.shape} and vector {v.shape} do not fit")
    Xv, vv = X.value, v.value
    return X.tape.record(Xv @ vv, (X, v), lambda g: (np.outer(g, vv), Xv.T @ g))


def weighted_rows(a: Node, X: Node) -> Node:
    """``Σ_j a[j] X[j]``."""
    if a.value.ndim != 1 or X.value.ndim != 2 or a.shape[0] != X.shape[0]:
        raise ShapeError(f"weighted_rows: weights {a.shape} and rows {X.shape} do not fit")
    av, Xv = a.value, X.value
    return a.tape.record(av @ Xv, (a, X), lambda g: (Xv @ g, np.outer(av, g)))


def concat(a: Node, b: Node) -> Node:
    na = a.shape[0]
    return a.tape.record(np.concatenate([a.value, b.value]), (a, b),
                         lambda g: (g[:na], g[na:]))


def take_row(M: Node, row: int) -> Node:
    Mv = M.value
    if not 0 <= row < Mv.shape[0]:
        raise IndexError(f"row {row} outside matrix with {Mv.shape[0]} rows")

    def vjp(g):
        out = np.zeros_like(Mv)
        out[row] = g
        return (out,)

    return M.tape.record(Mv[row].copy(), (M,), vjp)


def softmax_values(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(s)):
        raise ValueError("softmax input must be finite")
    e = np.exp(s - s.max())
    return e / e.sum()


def softmax(s: Node) -> Node:
    a = softmax_values(s.value)
    return s.tape.record(a, (s,), lambda g: (a * (g - a @ g),))


def sigmoid_values(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Node) -> Node:
    y = sigmoid_values(x.value)
    return x.tape.record(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    return x.tape.record(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Node) -> Node:
    xv = x.value
    mask = xv > 0
    return x.tape.record(np.where(mask, xv, 0.0), (x,), lambda g: (g * mask,))


def sum_squares(x: Node) -> Node:
    xv = x.value
    return x.tape.record(np.array(np.sum(xv * xv)), (x,), lambda g: (2.0 * g * xv,))


def total(x: Node) -> Node:
    xv = x.value
    return x.tape.record(np.array(xv.sum()), (x,), lambda g: (np.full_like(xv, g),))


def elementwise(kind: str, x: Node) -> Node:
    try:
        fn = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(x)
