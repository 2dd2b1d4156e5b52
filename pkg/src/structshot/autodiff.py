"""Dense reverse-mode differentiation over float64 numpy arrays.

A Value wraps one array. Primitive applications go through forward_eval(), which records them on
the active Tape when any input requires gradient. backward() walks a tape in reverse and returns
gradients for every leaf that required them. Tapes are bound per execution context, so threads
each see their own active tape.
"""

from __future__ import annotations

from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass

import numpy as np

from structshot.errors import BackwardError, NonFiniteError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]
PrimitiveFn = Callable[..., tuple[np.ndarray, BackwardFn]]

# Primitive registry: name -> forward function returning (output, backward closure)
PRIMITIVES: dict[str, PrimitiveFn] = {}

_ACTIVE_TAPE: ContextVar[Tape | None] = ContextVar("structshot_active_tape", default=None)


def primitive(name: str):
    """Decorator to register a primitive.

    Usage:
        @primitive("relu")
        def _relu(a):
            mask = a > 0
            return np.where(mask, a, 0.0), lambda g: (g * mask,)
    """

    def decorator(func: PrimitiveFn):
        PRIMITIVES[name] = func
        return func

    return decorator


class Value:
    """A float64 array taking part in differentiable computation."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        array = np.asarray(data, dtype=np.float64)
        if any(dim <= 0 for dim in array.shape):
            raise ShapeError("value", [array.shape], "dimensions must be positive")
        self.data = array
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Value:  # noqa: N802
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Value(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other) -> Value:
        return add(self, other)

    def __radd__(self, other) -> Value:
        return add(other, self)

    def __sub__(self, other) -> Value:
        return sub(self, other)

    def __rsub__(self, other) -> Value:
        return sub(other, self)

    def __mul__(self, other) -> Value:
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other) -> Value:
        return self.__mul__(other)

    def __truediv__(self, other) -> Value:
        return div(self, other)

    def __neg__(self) -> Value:
        return scale(self, -1.0)

    def __matmul__(self, other) -> Value:
        return matmul(self, other)


@dataclass
class TapeEntry:
    """One recorded primitive application; saved intermediates live in the backward closure."""

    op: str
    inputs: tuple[Value, ...]
    output: Value
    backward: BackwardFn


class Tape:
    """Ordered record of primitive applications.

    Entries are appended as primitives run, so every input of an entry was produced earlier
    on the tape or is a leaf.

    Usage:
        with Tape() as tape:
            loss = f(x)
        grads = backward(tape, loss)
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self._producer: dict[int, int] = {}
        self._tokens: list = []

    def record(self, op: str, inputs: tuple[Value, ...], output: Value, backward_fn: BackwardFn):
        self._producer[id(output)] = len(self.entries)
        self.entries.append(TapeEntry(op, inputs, output, backward_fn))

    def index_of(self, value: Value) -> int | None:
        """Position of the entry that produced value, or None for leaves and foreign values."""
        index = self._producer.get(id(value))
        if index is not None and self.entries[index].output is value:
            return index
        return None

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> Tape:
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording in the current context."""
    token = _ACTIVE_TAPE.set(None)
    try:
        yield
    finally:
        _ACTIVE_TAPE.reset(token)


def _as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def forward_eval(op: str, inputs: Sequence[Value], **attrs) -> Value:
    """Apply a registered primitive, recording it on the active tape when gradients are needed."""
    try:
        func = PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"unknown primitive: {op}") from None
    inputs = tuple(_as_value(v) for v in inputs)
    arrays = [v.data for v in inputs]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out, backward_fn = func(*arrays, **attrs)
    out = np.asarray(out, dtype=np.float64)
    if not np.isfinite(out).all() and all(np.isfinite(a).all() for a in arrays):
        raise NonFiniteError(f"{op}: non-finite output from finite inputs")
    tape = _ACTIVE_TAPE.get()
    track = tape is not None and any(v.requires_grad for v in inputs)
    result = Value(out, requires_grad=track)
    if track:
        tape.record(op, inputs, result, backward_fn)
    return result


def backward(tape: Tape, output: Value) -> dict[Value, Value]:
    """Reverse pass from a scalar output.

    Returns a gradient Value for every leaf requiring gradient that the output depends on.
    Gradients of a leaf used at several sites are summed.
    """
    if output.size != 1:
        raise BackwardError(f"backward needs a scalar output, got shape {output.shape}")
    end = tape.index_of(output)
    if end is None:
        raise BackwardError("output is detached: it was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    leaves: dict[int, Value] = {}
    for entry in reversed(tape.entries[: end + 1]):
        grad = grads.pop(id(entry.output), None)
        if grad is None:
            continue
        input_grads = entry.backward(grad)
        for value, input_grad in zip(entry.inputs, input_grads):
            if not value.requires_grad:
                continue
            key = id(value)
            if tape.index_of(value) is None:
                leaves[key] = value
            if input_grad is None:
                continue
            grads[key] = input_grad if key not in grads else grads[key] + input_grad

    return {
        value: Value(grads.get(key, np.zeros_like(value.data)).reshape(value.shape))
        for key, value in leaves.items()
    }


# Shape helpers


def _broadcast(op: str, a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, [a.shape, b.shape], "not broadcastable") from None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to shape, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _normalize_axis(op: str, axis: int, ndim: int, shape: tuple[int, ...]) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(op, [shape], f"axis {axis} out of range")
    return axis % ndim


def _expand_reduced(grad: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape).copy()


# Primitives


@primitive("matmul")
def _matmul(a: np.ndarray, b: np.ndarray):
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", [a.shape, b.shape], "inner dimensions must match")

    def backward_fn(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.T, a.T @ g
        if a.ndim == 1 and b.ndim == 2:
            return b @ g, np.outer(a, g)
        if a.ndim == 2 and b.ndim == 1:
            return np.outer(g, b), a.T @ g
        return g * b, g * a

    return a @ b, backward_fn


@primitive("add")
def _add(a, b):
    _broadcast("add", a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


@primitive("sub")
def _sub(a, b):
    _broadcast("sub", a, b)
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


@primitive("mul")
def _mul(a, b):
    _broadcast("mul", a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


@primitive("div")
def _div(a, b):
    _broadcast("div", a, b)
    return a / b, lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape))


@primitive("scale")
def _scale(a, factor: float):
    return a * factor, lambda g: (g * factor,)


@primitive("relu")
def _relu(a):
    # Subgradient at exactly 0 is 0.
    mask = a > 0
    return np.where(mask, a, 0.0), lambda g: (g * mask,)


@primitive("tanh")
def _tanh(a):
    t = np.tanh(a)
    return t, lambda g: (g * (1.0 - t * t),)


@primitive("exp")
def _exp(a):
    e = np.exp(a)
    return e, lambda g: (g * e,)


@primitive("log")
def _log(a):
    return np.log(a), lambda g: (g / a,)


@primitive("sqrt")
def _sqrt(a):
    s = np.sqrt(a)
    return s, lambda g: (np.where(s > 0, g / (2.0 * np.where(s > 0, s, 1.0)), 0.0),)


@primitive("softmax")
def _softmax(a, axis: int = -1):
    axis = _normalize_axis("softmax", axis, a.ndim, a.shape)
    shifted = a - a.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    return s, lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),)


@primitive("concat")
def _concat(*arrays, axis: int = -1):
    first = arrays[0]
    axis = _normalize_axis("concat", axis, first.ndim, first.shape)
    for other in arrays[1:]:
        same_rank = other.ndim == first.ndim
        if not same_rank or any(
            other.shape[d] != first.shape[d] for d in range(first.ndim) if d != axis
        ):
            raise ShapeError("concat", [x.shape for x in arrays], f"mismatch off axis {axis}")
    cuts = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return np.concatenate(arrays, axis=axis), lambda g: tuple(np.split(g, cuts, axis=axis))


@primitive("sum")
def _sum(a, axis: int | None = None, keepdims: bool = False):
    if axis is not None:
        axis = _normalize_axis("sum", axis, a.ndim, a.shape)
    out = a.sum(axis=axis, keepdims=keepdims)
    return out, lambda g: (_expand_reduced(g, a.shape, axis, keepdims),)


@primitive("mean")
def _mean(a, axis: int | None = None, keepdims: bool = False):
    if axis is not None:
        axis = _normalize_axis("mean", axis, a.ndim, a.shape)
    count = a.size if axis is None else a.shape[axis]
    out = a.mean(axis=axis, keepdims=keepdims)
    return out, lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,)


@primitive("max")
def _max(a, axis: int | None = None, keepdims: bool = False):
    # Gradient flows to the first maximal entry only.
    if axis is None:
        out = a.max(keepdims=keepdims)

        def backward_fn(g):
            grad = np.zeros_like(a)
            grad.flat[int(np.argmax(a))] = np.asarray(g).reshape(-1)[0]
            return (grad,)

        return out, backward_fn

    axis = _normalize_axis("max", axis, a.ndim, a.shape)
    out = a.max(axis=axis, keepdims=keepdims)
    winners = np.expand_dims(np.argmax(a, axis=axis), axis)

    def backward_fn(g):
        grad = np.zeros_like(a)
        values = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(grad, winners, values, axis=axis)
        return (grad,)

    return out, backward_fn


@primitive("l2_norm")
def _l2_norm(a, axis: int | None = None, keepdims: bool = False):
    if axis is not None:
        axis = _normalize_axis("l2_norm", axis, a.ndim, a.shape)
    norm = np.sqrt((a * a).sum(axis=axis, keepdims=True))
    out = norm if keepdims else (norm.reshape(()) if axis is None else np.squeeze(norm, axis))

    def backward_fn(g):
        g = np.asarray(g)
        if axis is None:
            g = g.reshape((1,) * a.ndim)
        elif not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(norm > 0, norm, 1.0)
        return (np.where(norm > 0, g * a / safe, 0.0),)

    return out, backward_fn


@primitive("add_row")
def _add_row(a, row):
    if a.ndim != 2 or row.ndim != 1 or a.shape[1] != row.shape[0]:
        raise ShapeError("add_row", [a.shape, row.shape], "expected (m, k) + (k,)")
    return a + row, lambda g: (g, g.sum(axis=0))


@primitive("transpose")
def _transpose(a):
    if a.ndim > 2:
        raise ShapeError("transpose", [a.shape], "at most 2 dimensions")
    return a.T, lambda g: (g.T,)


@primitive("gather_rows")
def _gather_rows(a, indices: tuple[int, ...]):
    index = np.asarray(indices, dtype=np.int64)
    if index.size == 0 or index.min() < 0 or index.max() >= a.shape[0]:
        raise ShapeError("gather_rows", [a.shape], f"row indices {tuple(indices)} out of range")

    def backward_fn(g):
        grad = np.zeros_like(a)
        np.add.at(grad, index, g)
        return (grad,)

    return a[index], backward_fn


@primitive("reshape")
def _reshape(a, shape: tuple[int, ...]):
    if int(np.prod(shape)) != a.size:
        raise ShapeError("reshape", [a.shape, tuple(shape)], "sizes differ")
    return a.reshape(shape), lambda g: (g.reshape(a.shape),)


# Functional API


def matmul(a, b) -> Value:
    return forward_eval("matmul", [a, b])


def add(a, b) -> Value:
    return forward_eval("add", [a, b])


def sub(a, b) -> Value:
    return forward_eval("sub", [a, b])


def mul(a, b) -> Value:
    return forward_eval("mul", [a, b])


def div(a, b) -> Value:
    return forward_eval("div", [a, b])


def scale(a, factor: float) -> Value:
    return forward_eval("scale", [a], factor=float(factor))


def relu(a) -> Value:
    return forward_eval("relu", [a])


def tanh(a) -> Value:
    return forward_eval("tanh", [a])


def exp(a) -> Value:
    return forward_eval("exp", [a])


def log(a) -> Value:
    return forward_eval("log", [a])


def sqrt(a) -> Value:
    return forward_eval("sqrt", [a])


def softmax(a, axis: int = -1) -> Value:
    return forward_eval("softmax", [a], axis=axis)


def concat(values: Sequence[Value], axis: int = -1) -> Value:
    return forward_eval("concat", list(values), axis=axis)


def reduce_sum(a, axis: int | None = None, keepdims: bool = False) -> Value:
    return forward_eval("sum", [a], axis=axis, keepdims=keepdims)


def reduce_mean(a, axis: int | None = None, keepdims: bool = False) -> Value:
    return forward_eval("mean", [a], axis=axis, keepdims=keepdims)


def reduce_max(a, axis: int | None = None, keepdims: bool = False) -> Value:
    return forward_eval("max", [a], axis=axis, keepdims=keepdims)


def l2_norm(a, axis: int | None = None, keepdims: bool = False) -> Value:
    return forward_eval("l2_norm", [a], axis=axis, keepdims=keepdims)


def add_row(a, row) -> Value:
    return forward_eval("add_row", [a, row])


def transpose(a) -> Value:
    return forward_eval("transpose", [a])


def gather_rows(a, indices: Sequence[int]) -> Value:
    return forward_eval("gather_rows", [a], indices=tuple(int(i) for i in indices))


def reshape(a, shape: Sequence[int]) -> Value:
    return forward_eval("reshape", [a], shape=tuple(int(d) for d in shape))


def stack(values: Sequence[Value]) -> Value:
    """Stack equal-shaped values along a new leading axis."""
    return concat([reshape(v, (1, *v.shape)) for v in values], axis=0)


def row(a: Value, index: int) -> Value:
    """Row `index` of a 2-D value as a 1-D value."""
    return reshape(gather_rows(a, [index]), (a.shape[1],))


def log_softmax(a: Value, axis: int = -1) -> Value:
    shifted = a - reduce_max(a, axis=axis, keepdims=True)
    return shifted - log(reduce_sum(exp(shifted), axis=axis, keepdims=True))


# Finite-difference verification


def _scalar(value: Value) -> float:
    result = float(value.data.reshape(-1)[0])
    if not np.isfinite(result):
        raise NonFiniteError("function is not finite at a perturbed point")
    return result


def grad_check_params(f: Callable[[], Value], leaves: Sequence[Value], step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    f is re-evaluated with each coordinate of each leaf perturbed in place by +/- step. The
    error per coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    for leaf in leaves:
        leaf.requires_grad = True
    with Tape() as tape:
        out = f()
    grads = backward(tape, out)

    worst = 0.0
    with no_grad():
        for leaf in leaves:
            analytic = grads[leaf].data.reshape(-1) if leaf in grads else np.zeros(leaf.size)
            for i in range(leaf.size):
                original = leaf.data.flat[i]
                leaf.data.flat[i] = original + step
                plus = _scalar(f())
                leaf.data.flat[i] = original - step
                minus = _scalar(f())
                leaf.data.flat[i] = original
                numeric = (plus - minus) / (2.0 * step)
                a = float(analytic[i])
                worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
    return worst


def grad_check(f: Callable[[Value], Value], point: Value, step: float = 1e-5) -> float:
    """grad_check_params for a function of one argument evaluated at point."""
    leaf = Value(np.array(point.data), requires_grad=True)
    return grad_check_params(lambda: f(leaf), [leaf], step)
