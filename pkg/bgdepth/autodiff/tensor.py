"""Dense float64 tensors and the tape that records operations for reverse-mode AD."""
import contextvars
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from bgdepth.exceptions import ShapeError, TapeError

MAX_RANK = 5

_ACTIVE_TAPE: contextvars.ContextVar = contextvars.ContextVar("bgdepth_active_tape", default=None)


class Tensor:
    """An N-dimensional float64 array, optionally tracked for differentiation.

    Scalars (losses) have shape ``(1,)``.
    """

    def __init__(self, data, requires_grad: bool = False):
        array = np.array(data, dtype=np.float64, copy=True)
        if array.ndim == 0:
            array = array.reshape(1)
        if array.ndim > MAX_RANK or array.size == 0:
            raise ShapeError(f"Tensor rank must be 1..{MAX_RANK} with non-empty extents, got {array.shape}")
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Param(Tensor):
    """A trainable tensor with a name path inside its model and an always-allocated grad."""

    def __init__(self, data, name: str, requires_grad: bool = True):
        super().__init__(data, requires_grad=requires_grad)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Param(name={self.name!r}, shape={self.shape})"


@dataclass
class TapeEntry:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of executed operations.

    Operations record themselves only while a tape is active (``with Tape():``); outside
    a tape the same functions run as plain inference. A tape can be differentiated once.
    """

    def __init__(self):
        self.entries = []
        self._consumed = False
        self._token = None

    def __enter__(self):
        if self._consumed:
            raise TapeError("Tape has already been differentiated")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.entries)

    def record(self, op, inputs, output, backward):
        if self._consumed:
            raise TapeError("Cannot record on a tape that has already been differentiated")
        output._tape = self
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward))

    def backward(self, loss: Tensor):
        if self._consumed:
            raise TapeError("backward() called twice on the same tape")
        if loss.data.size != 1:
            raise TapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad or loss._tape is not self:
            raise TapeError("Loss was not recorded on this tape")
        self._consumed = True
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for entry in reversed(self.entries):
            grad_out = grads.pop(id(entry.output), None)
            if grad_out is None:
                continue
            for tensor, grad in zip(entry.inputs, entry.backward(grad_out)):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + grad if key in grads else grad
                if tensor._tape is not self:
                    leaves[key] = tensor
        for key, tensor in leaves.items():
            grad = grads.get(key)
            if grad is None:
                continue
            tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
        self.entries = []


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def record(op: str, inputs: Sequence[Tensor], data: np.ndarray, backward) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and record it on the active tape, if any."""
    tape = active_tape()
    requires_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data if data.ndim else data.reshape(1)
    out.requires_grad = requires_grad
    out.grad = None
    out._tape = None
    if requires_grad:
        tape.record(op, inputs, out, backward)
    return out


def backward(loss: Tensor):
    if loss._tape is None:
        raise TapeError("Loss has no recorded tape; run the forward pass inside `with Tape():`")
    loss._tape.backward(loss)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)
