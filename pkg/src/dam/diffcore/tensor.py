"""Reverse-mode differentiable tensors over dense numpy storage.

Tensors are immutable once produced by a primitive. Primitives record
themselves on the thread-local active tape (if any); ``Tape.backward`` replays
the recorded primitives once each, in reverse order of recording, which is a
valid topological order because records are appended at creation time.
"""

import threading

import numpy as np

DEFAULT_DTYPE = np.float32

_local = threading.local()


class ShapeError(ValueError):
    """Raised when a primitive's operands have incompatible shapes."""


def _tape_stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; implemented in ops.py and bound at import time to
    # avoid a circular import.
    def __add__(self, other):
        from . import ops

        return ops.add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, _as_tensor(other, self.dtype))

    def __neg__(self):
        from . import ops

        return ops.neg(self)


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class Tape:
    """Ordered record of primitive applications for one backward pass."""

    def __init__(self):
        self._records = []  # (output Tensor, input Tensors, backward fn)
        self._produced = set()

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self

    def record(self, out, inputs, backward):
        self._records.append((out, inputs, backward))
        self._produced.add(id(out))

    def __len__(self):
        return len(self._records)

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``."""
        if loss.data.shape != ():
            raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
        grads = {id(loss): np.ones((), dtype=loss.dtype)}
        for out, inputs, backward in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for tensor, tg in zip(inputs, backward(g)):
                if tg is None or not tensor.requires_grad:
                    continue
                if tg.dtype != tensor.dtype:
                    tg = tg.astype(tensor.dtype)
                if id(tensor) in self._produced:
                    key = id(tensor)
                    if key in grads:
                        grads[key] = grads[key] + tg
                    else:
                        grads[key] = tg
                else:
                    if tensor.grad is None:
                        # copy: tg may alias an array shared with other records
                        tensor.grad = tg.reshape(tensor.data.shape).copy()
                    else:
                        tensor.grad += tg.reshape(tensor.data.shape)
