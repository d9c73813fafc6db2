"""Tape-based reverse-mode autodiff over dense float64 arrays.

A Tape records every primitive application in insertion order (which is a
valid topological order), so the backward pass is a single reverse sweep
with additive gradient accumulation across fan-out. Custom-gradient nodes
(straight-through / surrogate backward) are first-class: their forward
value comes from an arbitrary function while their backward contribution
is the vector-Jacobian product of a substitute transform.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteError, ShapeError

Array = np.ndarray


def _as_array(value) -> Array:
    return np.asarray(value, dtype=np.float64)


class Node:
    __slots__ = ("kind", "parents", "value", "vjp")

    def __init__(self, kind: str, parents: tuple, value: Array, vjp: Optional[Callable]):
        self.kind = kind
        self.parents = parents  # node ids, each < this node's id
        self.value = value
        self.vjp = vjp  # upstream grad -> list of grads aligned with parents


class Tape:
    """Append-only record of primitive operations for one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _record(self, kind, parents, value, vjp) -> "Tensor":
        self.nodes.append(Node(kind, parents, value, vjp))
        return Tensor(self, len(self.nodes) - 1)

    def input(self, value) -> "Tensor":
        return self._record("input", (), _as_array(value), None)

    def constant(self, value) -> "Tensor":
        return self._record("const", (), _as_array(value), None)


class Tensor:
    """Handle to a tape node; `value` is the forward array."""

    __slots__ = ("tape", "nid")

    def __init__(self, tape: Tape, nid: int):
        self.tape = tape
        self.nid = nid

    @property
    def value(self) -> Array:
        return self.tape.nodes[self.nid].value

    @property
    def shape(self):
        return self.value.shape


def _coerce(tape: Tape, x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return tape.constant(x)


def _binary_shapes(kind: str, a: Array, b: Array):
    """Allowed: equal shapes, scalar-with-tensor, and (B, n) + (n,) row broadcast."""
    if a.shape == b.shape:
        return "same"
    if a.ndim == 0:
        return "scalar_left"
    if b.ndim == 0:
        return "scalar_right"
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return "row_right"
    raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(grad: Array, shape) -> Array:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    # (B, n) gradient reduced onto an (n,) operand
    return grad.sum(axis=0)


def add(a: Tensor, b) -> Tensor:
    tape = a.tape
    b = _coerce(tape, b)
    _binary_shapes("add", a.value, b.value)
    value = a.value + b.value

    def vjp(up):
        return [_reduce_to(up, a.value.shape), _reduce_to(up, b.value.shape)]

    return tape._record("add", (a.nid, b.nid), value, vjp)


def sub(a: Tensor, b) -> Tensor:
    tape = a.tape
    b = _coerce(tape, b)
    _binary_shapes("sub", a.value, b.value)
    value = a.value - b.value

    def vjp(up):
        return [_reduce_to(up, a.value.shape), _reduce_to(-up, b.value.shape)]

    return tape._record("sub", (a.nid, b.nid), value, vjp)


def mul(a: Tensor, b) -> Tensor:
    tape = a.tape
    b = _coerce(tape, b)
    _binary_shapes("mul", a.value, b.value)
    av, bv = a.value, b.value
    value = av * bv

    def vjp(up):
        return [_reduce_to(up * bv, av.shape), _reduce_to(up * av, bv.shape)]

    return tape._record("mul", (a.nid, b.nid), value, vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    tape = a.tape
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    value = av @ bv

    def vjp(up):
        return [up @ bv.T, av.T @ up]

    return tape._record("matmul", (a.nid, b.nid), value, vjp)


def relu(x: Tensor) -> Tensor:
    tape = x.tape
    xv = x.value
    mask = xv > 0.0  # gradient at exactly 0 is 0
    value = np.where(mask, xv, 0.0)

    def vjp(up):
        return [up * mask]

    return tape._record("relu", (x.nid,), value, vjp)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    tape = x.tape
    xv = x.value
    inside = (xv > lo) & (xv < hi)  # gradient 0 at and outside boundaries
    value = np.clip(xv, lo, hi)

    def vjp(up):
        return [up * inside]

    return tape._record("clamp", (x.nid,), value, vjp)


def _zero_grad_unary(kind: str, x: Tensor, value: Array) -> Tensor:
    def vjp(up):
        return [np.zeros_like(x.value)]

    return x.tape._record(kind, (x.nid,), value, vjp)


def floor(x: Tensor) -> Tensor:
    return _zero_grad_unary("floor", x, np.floor(x.value))


def sign(x: Tensor) -> Tensor:
    return _zero_grad_unary("sign", x, np.sign(x.value))


def where_ge(x: Tensor, threshold: float) -> Tensor:
    """Indicator [x >= threshold] with a zero backward rule."""
    return _zero_grad_unary("where_ge", x, (x.value >= threshold).astype(np.float64))


def sum_all(x: Tensor) -> Tensor:
    tape = x.tape
    xv = x.value

    def vjp(up):
        return [np.full_like(xv, float(up))]

    return tape._record("sum", (x.nid,), np.asarray(xv.sum()), vjp)


def xent_per_sample(logits: Tensor, labels: Array) -> Tensor:
    """Per-sample cross entropy, fused and max-subtracted for stability.

    logits: (B, k); labels: (B,) int class indices. Output shape (B,).
    Backward rule is the analytic softmax(logits) - onehot(label).
    """
    tape = logits.tape
    z = logits.value
    if z.ndim != 2:
        raise ShapeError(f"xent: logits must be 2-D, got {z.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (z.shape[0],):
        raise ShapeError(f"xent: labels shape {labels.shape} does not match batch {z.shape[0]}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= z.shape[1]:
        raise ShapeError(f"xent: label out of range for {z.shape[1]} classes")
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    value = lse - shifted[rows, labels]
    softmax = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)

    def vjp(up):
        g = softmax.copy()
        g[rows, labels] -= 1.0
        return [g * up[:, None]]

    return tape._record("xent", (logits.nid,), value, vjp)


def mean_all(x: Tensor) -> Tensor:
    n = x.value.size
    return mul(sum_all(x), 1.0 / n)


def custom_grad(
    tape: Tape,
    x: Tensor,
    forward: Callable[[Array], Array],
    substitute: Optional[Callable[[Tape, Tensor], Tensor]] = None,
    name: str = "custom_grad",
) -> Tensor:
    """Forward runs `forward` on the raw array; backward uses the VJP of
    `substitute` (a tape-building transform) evaluated at x. With the
    default identity substitute the upstream gradient passes through
    unchanged (straight-through estimator).
    """
    value = _as_array(forward(np.array(x.value)))
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{name}: forward produced non-finite values")

    if substitute is None:
        def vjp(up):
            if up.shape != x.value.shape:
                raise ShapeError(
                    f"{name}: upstream shape {up.shape} does not match input {x.value.shape}"
                )
            return [up]
    else:
        def vjp(up):
            inner = Tape()
            leaf = inner.input(x.value)
            out = substitute(inner, leaf)
            grads = _backward_from(inner, out.nid, up)
            g = grads.get(leaf.nid)
            if g is None:
                g = np.zeros_like(x.value)
            return [g]

    return tape._record(name, (x.nid,), value, vjp)


def _backward_from(tape: Tape, root: int, seed: Array) -> dict:
    nodes = tape.nodes
    if root >= len(nodes):
        raise ShapeError("backward: node is not on this tape")
    grads: dict[int, Array] = {root: _as_array(seed)}
    for nid in range(root, -1, -1):
        up = grads.get(nid)
        if up is None:
            continue
        node = nodes[nid]
        if node.vjp is None:
            continue
        for pid, g in zip(node.parents, node.vjp(up)):
            if pid in grads:
                grads[pid] = grads[pid] + g
            else:
                grads[pid] = g
    return grads


def backward(tape: Tape, loss: Tensor) -> dict:
    """dLoss/dNode for every node reachable backward from a scalar loss."""
    if loss.tape is not tape:
        raise ShapeError("backward: loss was not produced on this tape")
    if loss.value.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    return _backward_from(tape, loss.nid, np.asarray(1.0))


def finite_diff_grad(f: Callable[[Array], float], x: Array, h: float = 1e-5) -> Array:
    """Central-difference gradient oracle, one coordinate at a time."""
    if h <= 0:
        raise ShapeError("finite_diff_grad: h must be positive")
    x = np.array(x, dtype=np.float64)  # private contiguous copy; flat is a view
    flat = x.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        fp = float(f(x))
        flat[i] = saved - h
        fm = float(f(x))
        flat[i] = saved
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"finite_diff_grad: non-finite value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)
