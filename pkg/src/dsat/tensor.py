"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array together with an optional gradient tape
entry.  Every differentiable operation (see :mod:`dsat.functional`)
records its parent tensors and a backward closure on the output; calling
:meth:`Tensor.backward` on a scalar walks the recorded graph once in
reverse topological order and accumulates gradients into every tensor
that requires them.

Parameters are stored in float32.  Gradient checking builds the same
graph in float64, so ops must not hard-code a dtype: outputs follow
their inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "ComputeGraph", "no_grad", "is_grad_enabled"]

_GRAD_ENABLED = True


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class no_grad:
    """Context manager that suspends graph recording.

    Inside the block newly created op outputs are plain values; existing
    tensors are untouched.  Used for evaluation and for the momentum
    update of the key encoder, which must stay off the tape.
    """

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation.

    Parameters
    ----------
    data : array_like
        Initial value.  Integer and float inputs are accepted; anything
        that is not float32/float64 already is cast to float32.
    requires_grad : bool
        If True, ``backward`` accumulates a gradient into ``self.grad``.

    Attributes
    ----------
    data : np.ndarray
        The value.  May be read and (for leaves) written in place.
    grad : np.ndarray or None
        Accumulated gradient of the last ``backward`` call, same shape
        as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        elif arr.dtype == np.float64 and not isinstance(data, (np.ndarray, np.generic)):
            # Python scalars and nested lists default to float32; only an
            # explicit float64 array keeps double precision (gradient checks).
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None  # callable grad_out -> tuple of parent grads

    # -- basic introspection -------------------------------------------------

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """The underlying array (not a copy)."""
        return self.data

    def detach(self) -> "Tensor":
        """A new tensor sharing this value but cut off from the graph."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- graph walk ----------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Gradients accumulate: callers that reuse leaves across steps
        must clear ``grad`` (see ``Module.zero_grad``) beforehand.
        """
        if self.data.ndim != 0:
            raise ValueError(
                f"backward() requires a scalar, got shape {self.data.shape}"
            )
        graph = ComputeGraph(self)
        self.grad = np.ones((), dtype=self.data.dtype)
        for node in graph.reverse_order():
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g.astype(parent.data.dtype, copy=False)
                else:
                    parent.grad = parent.grad + g
            # inner nodes keep no state between backward calls
            if node is not self:
                node.grad = None

    # -- operator sugar (thin wrappers over dsat.functional) ------------------

    def __add__(self, other):
        from . import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import functional as F

        return F.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import functional as F

        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F

        return F.sub(other, self)

    def __truediv__(self, other):
        from . import functional as F

        return F.div(self, other)

    def __rtruediv__(self, other):
        from . import functional as F

        return F.div(other, self)

    def __neg__(self):
        from . import functional as F

        return F.neg(self)

    def __matmul__(self, other):
        from . import functional as F

        return F.matmul(self, other)

    def reshape(self, *shape):
        from . import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from . import functional as F

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F

        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F

        return F.mean(self, axis=axis, keepdims=keepdims)


class ComputeGraph:
    """Topological ordering of the subgraph that feeds one output tensor.

    The order is computed once at construction with an iterative
    depth-first walk (recursion would overflow on deep training graphs).
    """

    def __init__(self, root: Tensor):
        self.root = root
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._order = order  # parents before children

    def __len__(self) -> int:
        return len(self._order)

    def forward_order(self):
        return iter(self._order)

    def reverse_order(self):
        return reversed(self._order)
