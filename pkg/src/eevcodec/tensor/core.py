"""Tensor container and the reverse-mode gradient tape."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class TensorError(Exception):
    """Base class for tensor engine errors."""


class ShapeError(TensorError, ValueError):
    pass


class NonFiniteError(TensorError, FloatingPointError):
    pass


class BackwardError(TensorError, RuntimeError):
    pass


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype == np.float64:
        return arr
    return arr.astype(np.float32, copy=False)


class Tensor:
    """Dense array plus optional gradient buffer.

    Image-like signals are (N, C, H, W); reductions produce 0-d tensors.
    Storage is float32 unless the caller hands in float64 data, which is
    how the gradient checker runs its 64-bit mode.
    """

    __slots__ = ("data", "grad", "requires_grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a python scalar")
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


def _raise_not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


@dataclass
class TapeRecord:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


_state = threading.local()


def current_tape() -> Optional["GradTape"]:
    return getattr(_state, "tape", None)


@dataclass
class GradTape:
    """Ordered log of executed operators.

    Use as a context manager; operators executed inside the block whose
    inputs require gradients are recorded. Outside any tape nothing is
    recorded, which is the inference path.
    """

    records: list = field(default_factory=list)
    _outputs: set = field(default_factory=set)

    def __enter__(self) -> "GradTape":
        if current_tape() is not None:
            raise BackwardError("nested gradient tapes are not supported")
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = None

    def record(self, op, inputs, output, backward) -> None:
        self.records.append(TapeRecord(op, tuple(inputs), output, backward))
        self._outputs.add(id(output))

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def record(op: str, inputs: Sequence, output: Tensor, backward_fn) -> Tensor:
    tape = current_tape()
    if tape is None:
        return output
    tensors = [t for t in inputs if isinstance(t, Tensor)]
    if any(t.requires_grad for t in tensors):
        output.requires_grad = True
        tape.record(op, inputs, output, backward_fn)
    return output


def backward(tape: GradTape, loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf tensor that requires gradients."""
    if loss.data.size != 1:
        raise BackwardError(f"loss must be scalar, got shape {loss.shape}")
    if id(loss) not in tape._outputs:
        raise BackwardError("loss tensor was not produced on this tape")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for inp, ig in zip(rec.inputs, in_grads):
            if ig is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
            if key not in tape._outputs:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = grads[key].astype(leaf.data.dtype, copy=False)
        leaf.grad = g if leaf.grad is None else leaf.grad + g


def check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return arr
