"""Dense NCHW tensors with tape-based reverse-mode differentiation.

Operations only record themselves while a :class:`GradTape` is active, so
inference code pays nothing for autograd bookkeeping::

    with GradTape() as tape:
        loss = ops.sum(ops.mul(x, w))
    grads = tape.backward(loss)
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InternalError, InvalidArgument, NumericError

_local = threading.local()


def _default_dtype():
    return getattr(_local, "dtype", np.float32)


@contextlib.contextmanager
def float64_mode():
    """Create new tensors as float64 inside the block (gradient checking only)."""
    prev = _default_dtype()
    _local.dtype = np.float64
    try:
        yield
    finally:
        _local.dtype = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) and not isinstance(
                data, (list, tuple, float, int)) else _default_dtype()
        self.data = np.asarray(arr, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, dtype=dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the implementations live in pranet.ops
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

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)


def _not_scalar(t: Tensor):
    raise InvalidArgument(f"item() needs a single-element tensor, got shape {t.shape}")


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward_fn: BackwardFn
    index: int
    name: str


@dataclass
class GradTape:
    """Ordered record of differentiable operations.

    Gradients are written to ``leaf.grad`` (overwriting any previous value)
    and also returned from :meth:`backward`.
    """

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "GradTape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.tapes.pop()
        return False

    def record(self, out: Tensor, inputs, backward_fn: BackwardFn, name: str) -> None:
        self.nodes.append(_Node(out, tuple(inputs), backward_fn, len(self.nodes), name))

    def backward(self, loss: Tensor) -> dict:
        return backward(loss, self)


def active_tape() -> Optional[GradTape]:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording to any enclosing tape."""
    prev = getattr(_local, "tapes", None)
    _local.tapes = []
    try:
        yield
    finally:
        _local.tapes = prev


def make_result(data: np.ndarray, inputs, backward_fn: BackwardFn, name: str) -> Tensor:
    """Wrap an op's output, validate it, and record it on the active tape."""
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{name} produced non-finite values")
    out = Tensor(data, dtype=data.dtype)
    tape = active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward_fn, name)
    return out


def backward(loss: Tensor, tape: GradTape) -> dict:
    """Accumulate d(loss)/d(leaf) for every leaf that requires grad.

    Returns a mapping from leaf tensor to its gradient array.
    """
    if loss.data.size != 1:
        raise InvalidArgument(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(n.out): n.index for n in tape.nodes}
    grads = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in tape.nodes:
        for inp in node.inputs:
            if isinstance(inp, Tensor) and inp.requires_grad and id(inp) not in produced:
                leaves[id(inp)] = inp
    if id(loss) not in produced and loss.requires_grad:
        leaves[id(loss)] = loss

    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        if len(in_grads) != len(node.inputs):
            raise InternalError(f"{node.name}: backward returned {len(in_grads)} grads "
                                f"for {len(node.inputs)} inputs")
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                continue
            src = produced.get(id(inp))
            if src is not None and src >= node.index:
                raise InternalError(f"cycle: {node.name} consumes a later result")
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig

    result = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
        result[leaf] = leaf.grad
    return result
