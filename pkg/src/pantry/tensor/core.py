"""Tensor container and the gradient tape.

A :class:`Tape` is activated with a ``with`` block. While one is active on the
current thread, every op whose inputs include a tensor with
``requires_grad=True`` appends a record ``(op, inputs, output, backward_fn)``.
:func:`backward` replays those records in reverse order and then clears the
tape.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from pantry.errors import ArgumentError, NumericError, StateError

DEFAULT_DTYPE = np.float32

_local = threading.local()


class Tensor:
    """An n-dimensional float array that may take part in a gradient tape.

    Layout convention: ``(batch, channel, height, width)`` for 4-D tensors and
    ``(batch, feature)`` for 2-D ones.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE if dtype is None else dtype)
        if any(d <= 0 for d in arr.shape):
            raise ArgumentError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ArgumentError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    records: list[Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, op, inputs, output, backward_fn) -> None:
        self.records.append(Record(op, tuple(inputs), output, backward_fn))
        output._tape = self

    def clear(self) -> None:
        for rec in self.records:
            rec.output._tape = None
        self.records.clear()

    def __len__(self) -> int:
        return len(self.records)


def _stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def check_finite(arr: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {where}")
    return arr


def make_output(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``data`` as an op result and record it when gradients are needed.

    ``backward_fn`` maps the output gradient to one gradient (or None) per input.
    """
    check_finite(data, op)
    needs_grad = any(t.requires_grad for t in inputs)
    tape = active_tape() if needs_grad else None
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._tape = None
    out.requires_grad = tape is not None
    if tape is not None:
        tape.record(op, inputs, out, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every ``requires_grad`` leaf reached from ``loss``.

    Leaf gradients are overwritten, not accumulated. The tape is cleared afterwards.
    """
    if loss.size != 1:
        raise ArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise StateError("loss was not produced by a taped forward pass")

    produced = {id(rec.output) for rec in tape.records}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g_out = grads.pop(id(rec.output), None)
        if g_out is None:
            continue
        g_ins = rec.backward(g_out)
        for t, g in zip(rec.inputs, g_ins):
            if g is None or not t.requires_grad:
                continue
            check_finite(g, f"backward of {rec.op}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if key not in produced:
                leaves[key] = t
    for key, t in leaves.items():
        g = grads[key]
        t.grad = np.ascontiguousarray(g, dtype=t.data.dtype).reshape(t.shape)
    tape.clear()
