"""Reverse-mode autodiff core: tensors and the operation tape.

Every layer primitive in :mod:`siamverify.ops` produces plain numpy arrays
wrapped in :class:`Tensor` and, while a :class:`Tape` is active, records a
backward closure.  Calling :func:`backward` replays those closures in exact
reverse execution order, accumulating gradients additively into every
tensor that requires them.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def as_float_array(values, dtype=np.float32) -> np.ndarray:
    """Coerce ``values`` to a contiguous float array (float32 by default)."""
    arr = np.asarray(values)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(dtype)
    return np.ascontiguousarray(arr)


class Tensor:
    """N-dimensional float array with an optional gradient buffer.

    Data is stored row-major.  float32 is the training default; float64 is
    accepted so gradients can be verified at tighter tolerances.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        self.data = as_float_array(values)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += delta

    def clear_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{tag})"


class _Record:
    """One executed operation: its output, inputs, and backward closure."""

    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable[[np.ndarray], None]):
        self.output = output
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn


_tape_stack = threading.local()


def _stack() -> list:
    if not hasattr(_tape_stack, "tapes"):
        _tape_stack.tapes = []
    return _tape_stack.tapes


class Tape:
    """Ordered record of executed operations for one backward pass.

    Use as a context manager around a forward computation.  Tapes are
    thread-confined: each thread sees only the tapes it opened, so
    independent single-threaded training jobs can share a process.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._output_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    @staticmethod
    def active() -> Optional["Tape"]:
        stack = _stack()
        return stack[-1] if stack else None

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable[[np.ndarray], None]) -> None:
        self._records.append(_Record(output, inputs, backward_fn))
        self._output_ids.add(id(output))

    def clear(self) -> None:
        """Drop all records, freeing every saved forward value."""
        self._records.clear()
        self._output_ids.clear()

    def __len__(self) -> int:
        return len(self._records)


def record_op(output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Record ``output`` on the active tape when gradients are needed."""
    output.requires_grad = any(t.requires_grad for t in inputs)
    if output.requires_grad:
        tape = Tape.active()
        if tape is not None:
            tape.record(output, inputs, backward_fn)
    return output


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``grad`` for every tensor reachable from ``loss``.

    Gradients accumulate additively when a tensor feeds several
    operations.  Tensors requiring gradients that are unreachable from the
    loss end up with an explicit zero gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if id(loss) not in tape._output_ids:
        raise ContractError("loss tensor was not produced on this tape")

    loss.grad = np.ones_like(loss.data)
    for rec in reversed(tape._records):
        out_grad = rec.output.grad
        if out_grad is None:
            continue
        rec.backward_fn(out_grad)

    for rec in tape._records:
        for t in rec.inputs:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)
