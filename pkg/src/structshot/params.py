"""Trainable parameter containers, initialization, and flat name <-> array state."""

from __future__ import annotations

import dataclasses
from collections.abc import Iterator, Mapping
from dataclasses import dataclass

import numpy as np

from structshot.autodiff import Value, add_row, matmul
from structshot.errors import ShapeError


def uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...], name: str) -> Value:
    """Trainable Value drawn from U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return Value(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


@dataclass(eq=False)
class Affine:
    """x @ weight + bias, with weight stored as (in, out)."""

    weight: Value
    bias: Value

    @classmethod
    def init(cls, rng: np.random.Generator, fan_in: int, fan_out: int) -> Affine:
        return cls(
            weight=uniform(rng, fan_in, (fan_in, fan_out), "weight"),
            bias=uniform(rng, fan_in, (fan_out,), "bias"),
        )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Value) -> Value:
        if x.ndim == 1:
            return matmul(x, self.weight) + self.bias
        return add_row(matmul(x, self.weight), self.bias)


def named_values(obj, prefix: str = "") -> Iterator[tuple[str, Value]]:
    """Walk dataclasses, sequences and mappings, yielding (dotted name, Value) pairs.

    Objects reachable along several paths (shared parameters) are yielded once, under the
    first name reached.
    """
    seen: set[int] = set()

    def walk(node, path: str):
        if node is None:
            return
        if isinstance(node, Value):
            if id(node) not in seen:
                seen.add(id(node))
                yield path, node
            return
        if dataclasses.is_dataclass(node) and not isinstance(node, type):
            if id(node) in seen:
                return
            seen.add(id(node))
            for f in dataclasses.fields(node):
                yield from walk(getattr(node, f.name), f"{path}.{f.name}" if path else f.name)
            return
        if isinstance(node, Mapping):
            for key in sorted(node):
                yield from walk(node[key], f"{path}.{key}" if path else str(key))
            return
        if isinstance(node, (list, tuple)):
            for i, item in enumerate(node):
                yield from walk(item, f"{path}.{i}" if path else str(i))

    yield from walk(obj, prefix)


def trainable(obj) -> list[Value]:
    return [v for _, v in named_values(obj) if v.requires_grad]


def state_dict(obj) -> dict[str, np.ndarray]:
    return {name: value.data.copy() for name, value in named_values(obj)}


def load_state_dict(obj, state: Mapping[str, np.ndarray]) -> None:
    """Overwrite every parameter of obj from state; names and shapes must match exactly."""
    named = dict(named_values(obj))
    missing = sorted(set(named) - set(state))
    unexpected = sorted(set(state) - set(named))
    if missing or unexpected:
        raise KeyError(f"parameter mismatch: missing={missing} unexpected={unexpected}")
    for name, value in named.items():
        array = np.asarray(state[name], dtype=np.float64)
        if array.shape != value.shape:
            raise ShapeError("load_state_dict", [value.shape, array.shape], name)
        value.data = array.copy()
