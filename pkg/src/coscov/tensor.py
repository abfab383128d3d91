"""Tensor value type and the computation tape that replays the chain rule.

Ops executed while a :class:`Tape` is active are appended to it in
execution order; :meth:`Tape.backward` walks the records in exact reverse
order and accumulates gradients into every input that requires them.
Outside a tape nothing is recorded, which is how inference runs.
"""
from __future__ import annotations

import os
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError

_DEBUG = bool(os.environ.get("COSCOV_DEBUG"))
_ACTIVE: list["Tape"] = []


def set_debug(flag: bool) -> None:
    """Toggle the finite-value assertion applied to every op output."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    """Dense array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered log of executed ops.

    Use as a context manager::

        with Tape() as tape:
            loss = model_loss(...)
        tape.backward(loss)
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if loss.data.size != 1:
                raise ValueError("backward() without grad needs a scalar loss")
            grad = np.ones_like(loss.data)
        loss.grad = np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
        for rec in reversed(self.records):
            g = rec.out.grad
            if g is None:
                continue
            input_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, input_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.array(gi, dtype=t.dtype, copy=True)
                else:
                    t.grad += gi


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def record(out_data: np.ndarray, inputs: Sequence[Tensor],
           backward: Callable[[np.ndarray], Sequence[np.ndarray | None]],
           name: str | None = None) -> Tensor:
    """Wrap an op result and log it on the active tape when any input needs grad."""
    if _DEBUG and not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite output from {name or 'op'}")
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs, name=name)
    if needs:
        tape.records.append(_Record(out, tuple(inputs), backward))
    return out
