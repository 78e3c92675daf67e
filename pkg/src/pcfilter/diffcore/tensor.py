"""Tensors and the define-by-run compute tape.

Operations only record onto a tape when one is active (``with Tape() as tape``)
and at least one input requires a gradient. Outside a tape every primitive is
a plain numpy evaluation, which is what inference uses.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

_ACTIVE_TAPES: list["Tape"] = []


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Record:
    __slots__ = ("output", "inputs", "vjp", "op")

    def __init__(self, output: Tensor, inputs: tuple, vjp: Callable, op: str):
        self.output = output
        self.inputs = inputs
        self.vjp = vjp
        self.op = op


class Tape:
    """Ordered log of primitive applications, replayed in reverse by backward."""

    def __init__(self):
        self.records: list[Record] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _ACTIVE_TAPES.pop()
        assert popped is self, "tapes must be exited in LIFO order"
        return False

    def __len__(self):
        return len(self.records)

    def record(self, output: Tensor, inputs: tuple, vjp: Callable, op: str):
        self.records.append(Record(output, inputs, vjp, op))

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` on every leaf that requires a gradient.

        Leaf gradients are overwritten, not accumulated. Leaves that the loss
        does not depend on receive zeros.
        """
        if loss.data.size != 1 or loss.data.ndim != 0:
            raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
        produced = {id(r.output) for r in self.records}
        if id(loss) not in produced:
            raise ValueError("backward: loss was not produced on this tape")

        adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            g = adjoints.pop(id(rec.output), None)
            for inp in rec.inputs:
                if inp.requires_grad and id(inp) not in produced:
                    leaves.setdefault(id(inp), inp)
            if g is None:
                continue
            grads = rec.vjp(g)
            for inp, gi in zip(rec.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + gi
                else:
                    adjoints[key] = gi
        for key, leaf in leaves.items():
            g = adjoints.get(key)
            leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.shape)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def emit(value: np.ndarray, inputs: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    """Wrap a primitive's result, recording it when a tape wants it."""
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op}: non-finite values in forward result")
    needs = bool(_ACTIVE_TAPES) and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs:
        # nested tapes all see the operation, so an outer tape can
        # differentiate through code that opens its own
        for tape in _ACTIVE_TAPES:
            tape.record(out, tuple(inputs), vjp, op)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)
