"""Dense float32 tensors with a recording tape for reverse-mode differentiation.

Operations only record onto a tape while one is active::

    with Tape() as tape:
        loss = ops.sum(ops.mul(x, x))
    backward(loss)

Outside a tape every op is a plain numpy computation, which is how evaluation
code runs.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DTYPE = np.float32
_dtype = [DTYPE]


def current_dtype():
    return _dtype[-1]


class precision:
    """Temporarily compute in another float type (gradient checks use float64)."""

    def __init__(self, dtype):
        self.dtype = np.dtype(dtype).type

    def __enter__(self):
        _dtype.append(self.dtype)
        return self

    def __exit__(self, *exc):
        _dtype.pop()


class NumericError(ValueError):
    """Raised for shape, index or numeric-state violations."""


class DegenerateMaskError(NumericError):
    pass


class GradStateError(RuntimeError):
    """Raised when backward runs against gradients that were never reset."""


_ACTIVE: list["Tape"] = []
_CHECK_FINITE = True


def set_check_finite(flag: bool) -> bool:
    """Toggle the post-op NaN/Inf guard; returns the previous setting."""
    global _CHECK_FINITE
    prev, _CHECK_FINITE = _CHECK_FINITE, bool(flag)
    return prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "_gbuf", "_dirty", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=_dtype[-1])
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._tape: Tape | None = None  # set on tensors produced while recording
        self._gbuf: np.ndarray | None = None
        self._dirty = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise NumericError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)
            self._dirty = False

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; the real definitions live in ops
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

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    A tape can be replayed backward once. Nested tapes are allowed; ops
    record onto the innermost one.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self.visit_order: list[int] = []  # node indices in the order backward ran them

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(loss, tape=self)


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result, recording it when a tape is active and an input needs grad.

    ``backward_fn(grad_out)`` returns one gradient (or None) per input.
    """
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced by forward op")
    out = Tensor.__new__(Tensor)
    dt = _dtype[-1]
    out.data = data if data.dtype == dt else data.astype(dt)
    out.grad = None
    out._gbuf = None
    out._dirty = False
    out.name = None
    out._tape = None
    out.requires_grad = False
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(_Node(out, tuple(inputs), backward_fn))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.data.shape:
        g = unbroadcast(g, t.data.shape)
    if t._tape is None:
        if t._dirty:
            t.grad += g
        else:
            t.grad = np.array(g, dtype=t.data.dtype, copy=True)
            t._dirty = True
    elif t._gbuf is None:
        # may alias another node's gradient, so never update it in place
        t._gbuf = g
    else:
        t._gbuf = t._gbuf + g


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` following numpy broadcasting rules."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _reachable_leaves(tape: Tape) -> list[Tensor]:
    leaves = {}
    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and t._tape is None:
                leaves[id(t)] = t
    return list(leaves.values())


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate ``.grad`` on every leaf that ``loss`` depends on.

    Leaves must have been reset (``zero_grad``) since the last backward; a
    stale gradient raises :class:`GradStateError` rather than accumulating.
    """
    if loss.data.size != 1:
        raise NumericError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise NumericError("loss is not attached to a tape (detached or computed without recording)")
    tape = tape or loss._tape
    if loss._tape is not tape:
        raise NumericError("loss was recorded on a different tape")
    if tape.consumed:
        raise GradStateError("tape already replayed; record a new one")
    leaves = _reachable_leaves(tape)
    stale = [t.name or repr(t) for t in leaves if t._dirty]
    if stale:
        raise GradStateError(f"gradients not reset before backward: {stale[:3]}")
    tape.consumed = True

    loss._gbuf = np.ones_like(loss.data)
    for i in range(len(tape.nodes) - 1, -1, -1):
        node = tape.nodes[i]
        out = node.out
        g = out._gbuf
        if g is None:
            continue
        tape.visit_order.append(i)
        out._gbuf = None
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            _accumulate(t, gi)
    # nodes and outputs reference each other; dropping the list frees the
    # activations now instead of at the next cyclic collection
    tape.nodes = []
    if _CHECK_FINITE:
        for t in leaves:
            if not np.all(np.isfinite(t.grad)):
                raise NumericError(f"non-finite gradient in {t.name or repr(t)}")


def zero_grad(params) -> None:
    for p in params:
        p.zero_grad()
