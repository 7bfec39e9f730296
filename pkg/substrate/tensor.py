"""
Minimal reverse-mode differentiation over numpy arrays.

A Tensor records the operation that produced it and a closure that pushes the
output gradient into its parents. `Tensor.backward()` walks the recorded graph
in reverse topological order. Only the operations the episodic memory network
needs are provided; each one states its own local gradient.
"""

from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from shared.exceptions import ContractViolation

ArrayLike = Union[np.ndarray, float, int, Sequence]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """
    An array node in the differentiation graph.

    Attributes:
        data: The forward value
        grad: Accumulated gradient of the final scalar w.r.t. `data` (None until reached)
        requires_grad: Whether gradients flow into this node
        name: Optional label (parameter name) used in diagnostics
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype=None
    ):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = 'leaf'
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Iterable[Optional['Tensor']],
        op: str,
        backward: Callable[[np.ndarray], None]
    ) -> 'Tensor':
        parents = tuple(p for p in parents if p is not None)
        out = cls(data)
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        return out

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}, op={self.op!r}{label})"

    # ------------------------------------------------------------------
    # Gradient plumbing
    # ------------------------------------------------------------------

    def accumulate(self, grad: np.ndarray) -> None:
        """Add `grad` into this node's gradient buffer."""
        if not self.requires_grad:
            return
        grad = _unbroadcast(np.asarray(grad), self.data.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Propagate gradients from this node to every reachable leaf.

        Args:
            grad: Seed gradient; defaults to 1 for a scalar node

        Raises:
            ContractViolation: If no seed is given for a non-scalar node
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractViolation(f"backward() on non-scalar tensor of shape {self.shape} needs a seed gradient")
            grad = np.ones_like(self.data)

        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
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
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        # interior gradients are rebuilt on every pass; leaves accumulate
        for node in order:
            if node._backward is not None:
                node.grad = None
        self.accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------------
    # Elementwise arithmetic
    # ------------------------------------------------------------------

    def __add__(self, other: ArrayLike) -> 'Tensor':
        other = as_tensor(other)

        def _backward(g):
            self.accumulate(g)
            other.accumulate(g)
        return Tensor.from_op(self.data + other.data, (self, other), 'add', _backward)

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> 'Tensor':
        other = as_tensor(other)

        def _backward(g):
            self.accumulate(g)
            other.accumulate(-g)
        return Tensor.from_op(self.data - other.data, (self, other), 'sub', _backward)

    def __rsub__(self, other: ArrayLike) -> 'Tensor':
        return as_tensor(other) - self

    def __mul__(self, other: ArrayLike) -> 'Tensor':
        other = as_tensor(other)

        def _backward(g):
            self.accumulate(g * other.data)
            other.accumulate(g * self.data)
        return Tensor.from_op(self.data * other.data, (self, other), 'mul', _backward)

    __rmul__ = __mul__

    def __neg__(self) -> 'Tensor':
        return Tensor.from_op(-self.data, (self,), 'neg', lambda g: self.accumulate(-g))

    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ContractViolation(f"matmul: incompatible shapes {self.shape} and {other.shape}")

        def _backward(g):
            self.accumulate(g @ other.data.T)
            other.accumulate(self.data.T @ g)
        return Tensor.from_op(self.data @ other.data, (self, other), 'matmul', _backward)

    def square(self) -> 'Tensor':
        return Tensor.from_op(self.data * self.data, (self,), 'square',
                              lambda g: self.accumulate(2.0 * self.data * g))

    def abs(self) -> 'Tensor':
        return Tensor.from_op(np.abs(self.data), (self,), 'abs',
                              lambda g: self.accumulate(np.sign(self.data) * g))

    def sigmoid(self) -> 'Tensor':
        # tanh form is exact and overflow-free; sigmoid(0) is exactly 0.5
        out = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return Tensor.from_op(out, (self,), 'sigmoid',
                              lambda g: self.accumulate(g * out * (1.0 - out)))

    def tanh(self) -> 'Tensor':
        out = np.tanh(self.data)
        return Tensor.from_op(out, (self,), 'tanh',
                              lambda g: self.accumulate(g * (1.0 - out * out)))

    # ------------------------------------------------------------------
    # Reductions and reshaping
    # ------------------------------------------------------------------

    def sum(self, axis=None) -> 'Tensor':
        shape = self.shape

        def _backward(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            self.accumulate(np.broadcast_to(g, shape))
        return Tensor.from_op(np.asarray(self.data.sum(axis=axis)), (self,), 'sum', _backward)

    def mean(self, axis=None) -> 'Tensor':
        count = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis) * (1.0 / count)

    def reshape(self, shape: Sequence[int]) -> 'Tensor':
        original = self.shape
        return Tensor.from_op(self.data.reshape(shape), (self,), 'reshape',
                              lambda g: self.accumulate(g.reshape(original)))

    def __getitem__(self, index) -> 'Tensor':
        def _backward(g):
            full = np.zeros_like(self.data)
            full[index] += g
            self.accumulate(full)
        return Tensor.from_op(self.data[index], (self,), 'slice', _backward)

    def astype(self, dtype) -> 'Tensor':
        original = self.dtype
        return Tensor.from_op(self.data.astype(dtype), (self,), 'cast',
                              lambda g: self.accumulate(g.astype(original)))


def as_tensor(value: ArrayLike) -> Tensor:
    """Wrap a constant as a non-differentiable Tensor (Tensors pass through)."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along `axis`; the gradient is split back along the same axis."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _backward(g):
        for t, start, stop in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t.accumulate(np.take(g, np.arange(start, stop), axis=axis))
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor.from_op(data, tensors, 'concat', _backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack equally shaped tensors along a new axis."""
    tensors = [as_tensor(t) for t in tensors]

    def _backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulate(np.take(g, i, axis=axis))
    data = np.stack([t.data for t in tensors], axis=axis)
    return Tensor.from_op(data, tensors, 'stack', _backward)
