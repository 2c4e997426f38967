"""
Reverse-mode automatic differentiation over numpy arrays.

A ``Var`` wraps an array value, the parents it was computed from and a
closure that pushes its gradient back to them. Every ``Var`` is appended to
the ``Tape`` it belongs to at creation time, so tape order is a valid
topological order and the backward pass is a single reverse sweep.

The module-level operators accept plain arrays as well as ``Var`` values.
With arrays only they return arrays and record nothing, which lets the same
coefficient function serve as an untaped ground-truth evaluation and as a
taped surrogate evaluation.
"""

from collections.abc import Callable, Sequence
from typing import Any, Union

import numpy as np

ArrayLike = Union[np.ndarray, float, int]


class TapeError(RuntimeError):
    """Raised when a tape cannot be differentiated."""


class Tape:
    """Creation-ordered record of the nodes of one computation."""

    def __init__(self) -> None:
        self.nodes: list["Var"] = []
        self.parameters: dict[str, "Var"] = {}
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: "Var") -> None:
        if self.consumed:
            raise TapeError("cannot record on a tape that has already been differentiated")
        self.nodes.append(node)

    def parameter(self, name: str, value: np.ndarray) -> "Var":
        """Register a differentiable leaf under a unique name."""
        if name in self.parameters:
            raise TapeError(f"parameter {name!r} registered twice")
        leaf = Var(np.asarray(value, dtype=np.float64), self)
        self.parameters[name] = leaf
        return leaf


class Var:
    """Array-valued node on a tape."""

    __array_ufunc__ = None  # ndarray (op) Var defers to Var's reflected operator
    __slots__ = ("_backward", "grad", "parents", "tape", "value")

    def __init__(
        self,
        value: np.ndarray,
        tape: Tape,
        parents: tuple["Var", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ) -> None:
        self.value = value
        self.tape = tape
        self.parents = parents
        self._backward = backward
        self.grad: np.ndarray | None = None
        tape.record(self)

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape})"

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def ndim(self) -> int:
        return int(self.value.ndim)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __add__(self, other: Any) -> Any:
        return add(self, other)

    def __radd__(self, other: Any) -> Any:
        return add(other, self)

    def __sub__(self, other: Any) -> Any:
        return sub(self, other)

    def __rsub__(self, other: Any) -> Any:
        return sub(other, self)

    def __mul__(self, other: Any) -> Any:
        return mul(self, other)

    def __rmul__(self, other: Any) -> Any:
        return mul(other, self)

    def __truediv__(self, other: Any) -> Any:
        return div(self, other)

    def __rtruediv__(self, other: Any) -> Any:
        return div(other, self)

    def __neg__(self) -> Any:
        return neg(self)

    def __pow__(self, exponent: float) -> Any:
        if isinstance(exponent, Var):
            return NotImplemented
        return power(self, exponent)

    def __getitem__(self, index: Any) -> Any:
        return take(self, index)

    def sum(self, axis: int | tuple[int, ...] | None = None) -> Any:
        return reduce_sum(self, axis)


Operand = Union[Var, np.ndarray, float, int]


def is_var(x: Any) -> bool:
    return isinstance(x, Var)


def value_of(x: Any) -> np.ndarray:
    """The numeric value of a Var, or the array itself."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs: Any) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError("operands belong to different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _push(x: Any, g: np.ndarray) -> None:
    if isinstance(x, Var):
        x.accumulate(_unbroadcast(g, x.shape))


def add(a: Operand, b: Operand) -> Any:
    tape = _tape_of(a, b)
    out = value_of(a) + value_of(b)
    if tape is None:
        return out

    def _backward(g: np.ndarray) -> None:
        _push(a, g)
        _push(b, g)

    return Var(out, tape, tuple(x for x in (a, b) if isinstance(x, Var)), _backward)


def sub(a: Operand, b: Operand) -> Any:
    tape = _tape_of(a, b)
    out = value_of(a) - value_of(b)
    if tape is None:
        return out

    def _backward(g: np.ndarray) -> None:
        _push(a, g)
        _push(b, -g)

    return Var(out, tape, tuple(x for x in (a, b) if isinstance(x, Var)), _backward)


def mul(a: Operand, b: Operand) -> Any:
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = av * bv
    if tape is None:
        return out

    def _backward(g: np.ndarray) -> None:
        _push(a, g * bv)
        _push(b, g * av)

    return Var(out, tape, tuple(x for x in (a, b) if isinstance(x, Var)), _backward)


def div(a: Operand, b: Operand) -> Any:
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = av / bv
    if tape is None:
        return out

    def _backward(g: np.ndarray) -> None:
        _push(a, g / bv)
        _push(b, -g * av / (bv * bv))

    return Var(out, tape, tuple(x for x in (a, b) if isinstance(x, Var)), _backward)


def neg(a: Operand) -> Any:
    if not isinstance(a, Var):
        return -value_of(a)
    return Var(-a.value, a.tape, (a,), lambda g: a.accumulate(-g))


def square(a: Operand) -> Any:
    av = value_of(a)
    if not isinstance(a, Var):
        return av * av
    return Var(av * av, a.tape, (a,), lambda g: a.accumulate(2.0 * av * g))


def power(a: Operand, exponent: float) -> Any:
    """a ** exponent for a constant real exponent."""
    p = float(exponent)
    av = value_of(a)
    out = av**p
    if not isinstance(a, Var):
        return out
    return Var(out, a.tape, (a,), lambda g: a.accumulate(p * av ** (p - 1.0) * g))


def exp(a: Operand) -> Any:
    out = np.exp(value_of(a))
    if not isinstance(a, Var):
        return out
    return Var(out, a.tape, (a,), lambda g: a.accumulate(g * out))


def sqrt_abs(a: Operand) -> Any:
    """sqrt(|a|); the derivative at exactly 0 is taken as 0."""
    av = value_of(a)
    out = np.sqrt(np.abs(av))
    if not isinstance(a, Var):
        return out

    def _backward(g: np.ndarray) -> None:
        slope = np.zeros_like(av)
        np.divide(0.5 * np.sign(av), out, out=slope, where=out > 0)
        a.accumulate(g * slope)

    return Var(out, a.tape, (a,), _backward)


def relu(a: Operand) -> Any:
    """max(a, 0) with subgradient 0 at the kink."""
    av = value_of(a)
    out = np.maximum(av, 0.0)
    if not isinstance(a, Var):
        return out
    return Var(out, a.tape, (a,), lambda g: a.accumulate(g * (av > 0)))


def affine(x: Operand, weight: Operand, bias: Operand) -> Any:
    """x @ weight + bias over the last axis of x."""
    tape = _tape_of(x, weight, bias)
    xv, wv, bv = value_of(x), value_of(weight), value_of(bias)
    out = xv @ wv + bv
    if tape is None:
        return out

    def _backward(g: np.ndarray) -> None:
        if isinstance(x, Var):
            x.accumulate(g @ wv.T)
        if isinstance(weight, Var):
            weight.accumulate(xv.reshape(-1, xv.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
        if isinstance(bias, Var):
            bias.accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    parents = tuple(v for v in (x, weight, bias) if isinstance(v, Var))
    return Var(out, tape, parents, _backward)


def matvec(A: Operand, v: Operand) -> Any:
    """Batched A[..., i, j] v[..., j] -> [..., i]."""
    tape = _tape_of(A, v)
    Av, vv = value_of(A), value_of(v)
    out = np.einsum("...ij,...j->...i", Av, vv)
    if tape is None:
        return out

    def _backward(g: np.ndarray) -> None:
        if isinstance(A, Var):
            A.accumulate(_unbroadcast(g[..., :, None] * vv[..., None, :], A.shape))
        if isinstance(v, Var):
            v.accumulate(_unbroadcast(np.einsum("...ij,...i->...j", Av, g), v.shape))

    return Var(out, tape, tuple(x for x in (A, v) if isinstance(x, Var)), _backward)


def reduce_sum(a: Operand, axis: int | tuple[int, ...] | None = None) -> Any:
    av = value_of(a)
    out = np.sum(av, axis=axis)
    if not isinstance(a, Var):
        return out

    def _backward(g: np.ndarray) -> None:
        if axis is not None:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, av.shape))

    return Var(np.asarray(out, dtype=np.float64), a.tape, (a,), _backward)


def take(a: Operand, index: Any) -> Any:
    """a[index] for basic (non-fancy) indices."""
    av = value_of(a)
    out = av[index]
    if not isinstance(a, Var):
        return out

    def _backward(g: np.ndarray) -> None:
        full = np.zeros_like(av)
        full[index] += g
        a.accumulate(full)

    return Var(np.array(out, dtype=np.float64), a.tape, (a,), _backward)


def reshape(a: Operand, shape: tuple[int, ...]) -> Any:
    av = value_of(a)
    out = av.reshape(shape)
    if not isinstance(a, Var):
        return out
    return Var(out, a.tape, (a,), lambda g: a.accumulate(g.reshape(av.shape)))


def stack(items: Sequence[Operand], axis: int = 0) -> Any:
    tape = _tape_of(*items)
    values = [value_of(x) for x in items]
    out = np.stack(values, axis=axis)
    if tape is None:
        return out

    def _backward(g: np.ndarray) -> None:
        for k, x in enumerate(items):
            if isinstance(x, Var):
                x.accumulate(np.take(g, k, axis=axis))

    return Var(out, tape, tuple(x for x in items if isinstance(x, Var)), _backward)


def concatenate(items: Sequence[Operand], axis: int = -1) -> Any:
    tape = _tape_of(*items)
    values = [np.asarray(value_of(x), dtype=np.float64) for x in items]
    out = np.concatenate(values, axis=axis)
    if tape is None:
        return out
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def _backward(g: np.ndarray) -> None:
        for x, part in zip(items, np.split(g, bounds, axis=axis), strict=True):
            if isinstance(x, Var):
                x.accumulate(part)

    return Var(out, tape, tuple(x for x in items if isinstance(x, Var)), _backward)


def backward(tape: Tape, seed_gradient: ArrayLike, output: Var | None = None) -> dict[str, np.ndarray]:
    """
    Reverse-accumulate ``seed_gradient`` from ``output`` through the tape.

    Args:
        tape: Tape holding the computation
        seed_gradient: Gradient of the final scalar with respect to ``output``
        output: Node to seed; defaults to the last recorded node

    Returns:
        Gradient for every registered parameter, zeros for those the output
        does not depend on
    """
    if tape.consumed:
        raise TapeError("tape has already been differentiated")
    if not tape.nodes:
        raise TapeError("tape is empty")
    if output is None:
        output = tape.nodes[-1]
    if output.tape is not tape:
        raise TapeError("output node was not recorded on this tape")

    seed = np.broadcast_to(np.asarray(seed_gradient, dtype=np.float64), output.shape)
    for node in tape.nodes:
        node.grad = None
    output.accumulate(seed)

    for node in reversed(tape.nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
    tape.consumed = True

    return {
        name: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        for name, leaf in tape.parameters.items()
    }
