"""Dense float64 tensor with an explicit reverse-mode gradient tape.

Operations are eager. When a :class:`GradTape` is active on the current
thread and at least one operand requires a gradient, the operation appends a
record holding its inputs, its output and a vector-Jacobian product. Calling
:meth:`GradTape.backward` replays the records in reverse order and
accumulates (``+=``) gradients into every leaf tensor that requires them.

Example::

    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with GradTape() as tape:
        loss = ops.sum(ops.matmul(x, w))
    tape.backward(loss)
    w.grad
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from sacanet.errors import DimensionError

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional["GradTape"]:
    """Innermost tape entered on this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """N-dimensional float64 array plus gradient bookkeeping.

    ``data`` is stored row-major (C order). Leaf tensors created with
    ``requires_grad=True`` receive accumulated gradients in ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_leaf", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._leaf = True

    @classmethod
    def _result(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64, order="C")
        out.grad = None
        out.requires_grad = requires_grad
        out._leaf = False
        return out

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
    def is_leaf(self) -> bool:
        return self._leaf

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {list(self.shape)}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def strides(self) -> tuple[int, ...]:
        """Element (not byte) strides of the row-major layout."""
        out = []
        acc = 1
        for n in reversed(self.shape):
            out.append(acc)
            acc *= n
        return tuple(reversed(out))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    # Operator sugar; the implementations live in sacanet.ops.
    def __add__(self, other):
        from sacanet import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from sacanet import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from sacanet import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from sacanet import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from sacanet import ops
        if isinstance(other, Tensor):
            return ops.div(self, other)
        return ops.mul(self, 1.0 / float(other))

    def __neg__(self):
        from sacanet import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from sacanet import ops
        return ops.matmul(self, other)


@dataclass
class _Record:
    inputs: tuple
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class GradTape:
    """Ordered log of differentiable operations executed on one thread.

    A tape may be entered once and replayed once. Recording or replaying it
    from a thread other than the one that created it raises ``RuntimeError``.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._owner = threading.get_ident()
        self._consumed = False
        self._entered = False

    def __enter__(self) -> "GradTape":
        self._check_thread()
        if self._entered:
            raise RuntimeError("a GradTape can only be entered once")
        self._entered = True
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    def _check_thread(self) -> None:
        if threading.get_ident() != self._owner:
            raise RuntimeError("GradTape used from a thread that does not own it")

    def record(self, inputs: Sequence[Tensor], output: Tensor, vjp) -> None:
        self._check_thread()
        if self._consumed:
            raise RuntimeError("cannot record onto a tape that was already replayed")
        self._records.append(_Record(tuple(inputs), output, vjp))

    def backward(self, loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape."""
        self._check_thread()
        if self._consumed:
            raise RuntimeError("backward already ran on this tape")
        self._consumed = True
        if grad is None:
            if loss.size != 1:
                raise DimensionError(
                    f"backward without an explicit seed needs a scalar, got shape {list(loss.shape)}"
                )
            grad = np.ones_like(loss.data)
        grads: dict[int, tuple[Tensor, np.ndarray]] = {id(loss): (loss, np.asarray(grad, dtype=np.float64))}
        leaves: dict[int, Tensor] = {}
        if loss.is_leaf and loss.requires_grad:
            leaves[id(loss)] = loss
        for rec in reversed(self._records):
            entry = grads.pop(id(rec.output), None)
            if entry is None:
                continue
            in_grads = rec.vjp(entry[1])
            for t, g in zip(rec.inputs, in_grads):
                if g is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                prev = grads.get(id(t))
                grads[id(t)] = (t, g if prev is None else prev[1] + g)
                if t.is_leaf:
                    leaves[id(t)] = t
        for key, t in leaves.items():
            entry = grads.get(key)
            if entry is None:
                continue
            g = np.array(entry[1], dtype=np.float64).reshape(t.shape)
            t.grad = g if t.grad is None else t.grad + g
        self._records.clear()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap ``data`` as an op output and record ``vjp`` if a tape is listening."""
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._result(data, needs)
    if needs:
        tape.record(inputs, out, vjp)
    return out
