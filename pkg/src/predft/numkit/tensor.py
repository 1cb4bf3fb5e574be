"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable op builds a node holding its parents and a closure that
maps the output adjoint to per-parent adjoints. ``Tape.from_root`` linearises
the graph into topological order and ``Tape.backward`` replays the closures in
reverse, visiting each node exactly once.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

_ids = itertools.count()
_state = threading.local()


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "id", "op", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.id = next(_ids)
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, op, backward):
        if not np.isfinite(data).all():
            raise NonFiniteError(f"{op} produced NaN or Inf")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.id = next(_ids)
        out.op = op
        needs = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = tuple(parents) if needs else ()
        out._backward = backward if needs else None
        return out

    # -- introspection -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor._from_op(self.data, (), "detach", None)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    # -- operators -----------------------------------------------------------
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
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def relu(self):
        from . import ops
        return ops.relu(self)

    def backward(self):
        return backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class TapeEntry:
    op: str
    inputs: tuple
    output: int
    node: Tensor = field(repr=False)


@dataclass
class Tape:
    """Recorded primitive applications in topological order."""

    entries: list

    @classmethod
    def from_root(cls, root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.id in seen:
                continue
            seen.add(node.id)
            stack.append((node, True))
            for p in node._parents:
                if p.id not in seen:
                    stack.append((p, False))
        entries = [TapeEntry(n.op, tuple(p.id for p in n._parents), n.id, n) for n in order]
        return cls(entries)

    def backward(self, seed=None):
        root = self.entries[-1].node
        grads = {root.id: np.ones_like(root.data) if seed is None else np.asarray(seed, dtype=np.float64)}
        for entry in reversed(self.entries):
            node = entry.node
            g = grads.get(node.id)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent.id)
                grads[parent.id] = pg if prev is None else prev + pg
        return grads


def backward(root):
    """Back-propagate from a scalar ``root``; returns ``{node id: gradient}``.

    Leaves with ``requires_grad`` additionally accumulate into ``.grad``.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    return Tape.from_root(root).backward()
