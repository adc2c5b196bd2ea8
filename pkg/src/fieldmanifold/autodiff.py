"""Minimal reverse-mode differentiation over dense numpy arrays.

A :class:`Tape` records every primitive applied to its tensors in execution
order (a Wengert list).  :meth:`Tape.backward` walks that list once in reverse
and accumulates vector-Jacobian products into the leaves.

    tape = Tape()
    x = tape.leaf(np.array([3.0]))
    y = ad.sum(ad.square(x))
    grads = tape.backward(y)
    grads[x]            # array([6.], dtype=float32)

Only the primitives needed by the field model and the manifold losses are
provided.  Elementwise binary ops follow numpy broadcasting; the backward
pass reduces gradients back onto each operand's shape.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError", "NumericError", "Tensor", "Tape",
    "add", "sub", "mul", "div", "neg", "matmul", "transpose", "reshape",
    "sigmoid", "sin", "cos", "relu", "square", "sqrt", "abs", "sum", "mean",
    "gather", "concat", "getitem", "solve",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with an op's signature."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        desc = ", ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class NumericError(FloatingPointError):
    """A non-finite value appeared where finite values are required."""


class Tensor:
    __slots__ = ("tape", "index", "value", "is_leaf", "name", "requires_grad", "__weakref__")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray, is_leaf=False, name=None,
                 requires_grad=False):
        self.tape = tape
        self.index = index
        self.value = value
        self.is_leaf = is_leaf
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        kind = "leaf" if self.is_leaf else "node"
        return f"Tensor({kind} #{self.index}, shape={self.shape})"

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


class _Node:
    __slots__ = ("op", "inputs", "vjp", "kink", "requires_grad")

    def __init__(self, op, inputs, vjp, kink, requires_grad):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp
        self.kink = kink
        self.requires_grad = requires_grad


class Tape:
    """Ordered record of primitive ops; single writer.

    ``debug=True`` checks every op output for NaN/Inf and raises
    :class:`NumericError` naming the op that produced it.
    """

    def __init__(self, dtype=np.float32, debug: bool = False):
        self.dtype = np.dtype(dtype)
        self.debug = debug
        self.nodes: list[_Node] = []
        self.leaves: list[Tensor] = []

    def __len__(self):
        return len(self.nodes)

    def _new(self, value, op, inputs, vjp, is_leaf=False, name=None, kink=None,
             requires_grad=False) -> Tensor:
        value = np.asarray(value)
        if value.dtype != self.dtype:
            value = value.astype(self.dtype)
        if self.debug and not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite output from op '{op}' (node {len(self.nodes)})")
        value.flags.writeable = False
        self.nodes.append(_Node(op, inputs, vjp, kink, requires_grad))
        return Tensor(self, len(self.nodes) - 1, value, is_leaf, name, requires_grad)

    def leaf(self, value, name: str | None = None) -> Tensor:
        """A differentiable input.  The array is copied."""
        value = np.array(value, dtype=self.dtype)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite value in leaf {name or len(self.nodes)}")
        t = self._new(value, "leaf", (), None, is_leaf=True, name=name, requires_grad=True)
        self.leaves.append(t)
        return t

    def const(self, value) -> Tensor:
        """A non-differentiable input."""
        value = np.array(value, dtype=self.dtype)
        if not np.all(np.isfinite(value)):
            raise NumericError("non-finite value in constant")
        return self._new(value, "const", (), None)

    def record(self, op: str, inputs: Sequence[Tensor], value, vjp: Callable, kink=None) -> Tensor:
        """Append an op.  ``vjp(g)`` returns one gradient (or None) per input."""
        rg = any(t.requires_grad for t in inputs)
        return self._new(value, op, tuple(t.index for t in inputs), vjp if rg else None,
                         kink=kink, requires_grad=rg)

    def kink_signature(self) -> bytes:
        """Sign pattern at every non-smooth primitive (relu, abs) recorded so far.

        Two forward passes with equal signatures ran on the same smooth
        piece of the function, so a finite difference between them is
        meaningful.
        """
        parts = [np.packbits(n.kink).tobytes() for n in self.nodes if n.kink is not None]
        return b"".join(parts)

    def backward(self, output: Tensor) -> dict[Tensor, np.ndarray]:
        """Gradients of the scalar ``output`` w.r.t. every leaf of this tape."""
        if output.tape is not self:
            raise ValueError("output belongs to a different tape")
        if output.value.size != 1:
            raise ShapeError("backward (output must be scalar)", output.shape)
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[output.index] = np.ones(output.shape, dtype=self.dtype)
        for i in range(output.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            if node.vjp is None:
                continue
            in_grads = node.vjp(g)
            for j, gj in zip(node.inputs, in_grads):
                if gj is None or not self.nodes[j].requires_grad:
                    continue
                gj = np.asarray(gj, dtype=self.dtype)
                if grads[j] is None:
                    grads[j] = gj
                else:
                    grads[j] = grads[j] + gj
            if i != output.index:
                grads[i] = None
        out = {}
        for leaf in self.leaves:
            g = grads[leaf.index] if leaf.index != output.index else np.ones(leaf.shape, self.dtype)
            out[leaf] = np.zeros(leaf.shape, self.dtype) if g is None else g
        return out


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise TypeError("at least one operand must be a Tensor")


def _lift(tape: Tape, x) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise ValueError("operands recorded on different tapes")
        return x
    return tape.const(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _bshape(op, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _bshape("add", a, b)
    sa, sb = a.shape, b.shape
    return tape.record("add", (a, b), a.value + b.value,
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _bshape("sub", a, b)
    sa, sb = a.shape, b.shape
    return tape.record("sub", (a, b), a.value - b.value,
                       lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _bshape("mul", a, b)
    av, bv = a.value, b.value
    return tape.record("mul", (a, b), av * bv,
                       lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _bshape("div", a, b)
    av, bv = a.value, b.value
    out = av / bv

    def vjp(g):
        ga = g / bv
        return _unbroadcast(ga, av.shape), _unbroadcast(-ga * out, bv.shape)

    return tape.record("div", (a, b), out, vjp)


def neg(a: Tensor) -> Tensor:
    return a.tape.record("neg", (a,), -a.value, lambda g: (-g,))


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    av, bv = a.value, b.value
    ra, rb = a.requires_grad, b.requires_grad

    def vjp(g):
        return (_unbroadcast(g @ _swap(bv), av.shape) if ra else None,
                _unbroadcast(_swap(av) @ g, bv.shape) if rb else None)

    return tape.record("matmul", (a, b), av @ bv, vjp)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError("transpose", a.shape)
    return a.tape.record("transpose", (a,), _swap(a.value), lambda g: (_swap(g),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, tuple(shape)) from None
    return a.tape.record("reshape", (a,), out, lambda g: (g.reshape(old),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    # tanh form never overflows
    out = 0.5 + 0.5 * np.tanh(0.5 * x)
    return a.tape.record("sigmoid", (a,), out, lambda g: (g * out * (1 - out),))


def sin(a: Tensor) -> Tensor:
    x = a.value
    return a.tape.record("sin", (a,), np.sin(x), lambda g: (g * np.cos(x),))


def cos(a: Tensor) -> Tensor:
    x = a.value
    return a.tape.record("cos", (a,), np.cos(x), lambda g: (-g * np.sin(x),))


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return a.tape.record("relu", (a,), a.value * mask, lambda g: (g * mask,), kink=mask)


def square(a: Tensor) -> Tensor:
    x = a.value
    return a.tape.record("square", (a,), x * x, lambda g: (2 * g * x,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.value < 0):
        raise NumericError("sqrt of negative value")
    out = np.sqrt(a.value)
    return a.tape.record("sqrt", (a,), out, lambda g: (g / (2 * out),))


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    s = np.sign(a.value)
    return a.tape.record("abs", (a,), np.abs(a.value), lambda g: (g * s,),
                         kink=s > 0)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return a.tape.record("sum", (a,), out, vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.value.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis, keepdims), 1.0 / n)


def gather(a: Tensor, index) -> Tensor:
    """Rows of ``a`` selected by an integer array of any shape."""
    index = np.asarray(index)
    if index.dtype.kind not in "iu":
        raise TypeError("gather index must be integer")
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError("gather (index out of range)", a.shape, index.shape)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape, g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return a.tape.record("gather", (a,), a.value[index], vjp)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]
    try:
        out = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[x.shape for x in xs]) from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tape.record("concat", xs, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def getitem(a: Tensor, key) -> Tensor:
    """Basic slicing (ints and slices)."""
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape, g.dtype)
        out[key] = g
        return (out,)

    return a.tape.record("getitem", (a,), a.value[key], vjp)


def solve(A, b) -> Tensor:
    """Solve ``A x = b`` for square ``A`` (..., J, J) and ``b`` (..., J).

    Solved in float64 regardless of the tape dtype; the result is rounded
    back to the tape dtype.
    """
    tape = _tape_of(A, b)
    A, b = _lift(tape, A), _lift(tape, b)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2] or A.shape[:-1] != b.shape:
        raise ShapeError("solve", A.shape, b.shape)
    A64 = A.value.astype(np.float64)
    try:
        x = np.linalg.solve(A64, b.value.astype(np.float64)[..., None])[..., 0]
    except np.linalg.LinAlgError:
        raise NumericError("solve: singular matrix") from None

    def vjp(g):
        gb = np.linalg.solve(_swap(A64), g.astype(np.float64)[..., None])[..., 0]
        gA = -gb[..., :, None] * x[..., None, :]
        return gA, gb

    return tape.record("solve", (A, b), x, vjp)
