"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a closure that
pushes the upstream gradient back to them. Calling :func:`backward` on a scalar walks the
recorded graph once in reverse topological order.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp as _logsumexp

from boedrl.errors import ContractError, DimensionError

Array = NDArray[np.float64]
BackwardFn = Callable[[Array], None]

_EMPTY: Array = np.zeros(0)


def _as_array(value: ArrayLike) -> Array:
    return np.array(value, dtype=np.float64)


def _is_basic_index(index: Any) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(part, int | slice) or part is Ellipsis or part is None for part in parts)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("_backward", "_parents", "data", "grad", "name", "requires_grad")
    # ndarray on the left of an operator defers to the Tensor reflected method
    __array_ufunc__ = None

    def __init__(
        self,
        data: ArrayLike,
        *,
        requires_grad: bool = False,
        name: str | None = None,
        parents: Sequence[Tensor] = (),
        backward: BackwardFn | None = None,
    ) -> None:
        self.data: Array = _as_array(data)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Array = np.zeros_like(self.data) if requires_grad else _EMPTY
        self._parents = tuple(parents)
        self._backward = backward

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def _accumulate(self, grad: Array) -> None:
        if self.requires_grad:
            self.grad = self.grad + _unbroadcast(grad, self.shape)

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _result(data: Array, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
        if any(parent.requires_grad for parent in parents):
            return Tensor(data, requires_grad=True, parents=parents, backward=backward)
        return Tensor(data)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other: Tensor | ArrayLike) -> Tensor:
        other = as_tensor(other)

        def backward(grad: Array) -> None:
            self._accumulate(grad)
            other._accumulate(grad)

        return self._result(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        def backward(grad: Array) -> None:
            self._accumulate(-grad)

        return self._result(-self.data, (self,), backward)

    def __sub__(self, other: Tensor | ArrayLike) -> Tensor:
        return self + (-as_tensor(other))

    def __rsub__(self, other: Tensor | ArrayLike) -> Tensor:
        return as_tensor(other) + (-self)

    def __mul__(self, other: Tensor | ArrayLike) -> Tensor:
        other = as_tensor(other)

        def backward(grad: Array) -> None:
            self._accumulate(grad * other.data)
            other._accumulate(grad * self.data)

        return self._result(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other: Tensor | ArrayLike) -> Tensor:
        other = as_tensor(other)

        def backward(grad: Array) -> None:
            self._accumulate(grad / other.data)
            other._accumulate(-grad * self.data / (other.data * other.data))

        return self._result(self.data / other.data, (self, other), backward)

    def __rtruediv__(self, other: Tensor | ArrayLike) -> Tensor:
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> Tensor:
        def backward(grad: Array) -> None:
            self._accumulate(grad * exponent * self.data ** (exponent - 1))

        return self._result(self.data**exponent, (self,), backward)

    def __matmul__(self, other: Tensor) -> Tensor:
        if self.shape[-1] != other.shape[-2 if other.ndim > 1 else 0]:
            raise DimensionError(f"Cannot multiply shapes {self.shape} and {other.shape}")

        def backward(grad: Array) -> None:
            self._accumulate(grad @ np.swapaxes(other.data, -1, -2))
            other._accumulate(np.swapaxes(self.data, -1, -2) @ grad)

        return self._result(self.data @ other.data, (self, other), backward)

    # -- elementwise functions -----------------------------------------------

    def exp(self) -> Tensor:
        out = np.exp(self.data)

        def backward(grad: Array) -> None:
            self._accumulate(grad * out)

        return self._result(out, (self,), backward)

    def log(self) -> Tensor:
        def backward(grad: Array) -> None:
            self._accumulate(grad / self.data)

        return self._result(np.log(self.data), (self,), backward)

    def tanh(self) -> Tensor:
        out = np.tanh(self.data)

        def backward(grad: Array) -> None:
            self._accumulate(grad * (1.0 - out * out))

        return self._result(out, (self,), backward)

    def sigmoid(self) -> Tensor:
        out = 0.5 * (np.tanh(0.5 * self.data) + 1.0)

        def backward(grad: Array) -> None:
            self._accumulate(grad * out * (1.0 - out))

        return self._result(out, (self,), backward)

    def relu(self) -> Tensor:
        mask = self.data > 0.0

        def backward(grad: Array) -> None:
            self._accumulate(grad * mask)

        return self._result(self.data * mask, (self,), backward)

    # -- reductions and reshaping ---------------------------------------------

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        def backward(grad: Array) -> None:
            if axis is not None and not keepdims:
                grad = np.expand_dims(grad, axis)
            self._accumulate(np.broadcast_to(grad, self.shape))

        return self._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        total = self.sum(axis=axis, keepdims=keepdims)
        return total * (total.size / self.size)

    def logsumexp(self, axis: int, keepdims: bool = False) -> Tensor:
        out = _logsumexp(self.data, axis=axis, keepdims=True)

        def backward(grad: Array) -> None:
            if not keepdims:
                grad = np.expand_dims(grad, axis)
            self._accumulate(grad * np.exp(self.data - out))

        value = out if keepdims else np.squeeze(out, axis=axis)
        return self._result(value, (self,), backward)

    def softmax(self, axis: int) -> Tensor:
        return (self - self.logsumexp(axis=axis, keepdims=True)).exp()

    def reshape(self, *shape: int) -> Tensor:
        def backward(grad: Array) -> None:
            self._accumulate(grad.reshape(self.shape))

        return self._result(self.data.reshape(shape), (self,), backward)

    def __getitem__(self, index: Any) -> Tensor:
        basic = _is_basic_index(index)

        def backward(grad: Array) -> None:
            full = np.zeros_like(self.data)
            if basic:
                full[index] = grad
            else:
                np.add.at(full, index, grad)
            self._accumulate(full)

        return self._result(self.data[index], (self,), backward)


def as_tensor(value: Tensor | ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(data: ArrayLike, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    data = np.concatenate([tensor.data for tensor in tensors], axis=axis)
    bounds = np.cumsum([tensor.shape[axis] for tensor in tensors])[:-1]

    def backward(grad: Array) -> None:
        for tensor, piece in zip(tensors, np.split(grad, bounds, axis=axis), strict=True):
            tensor._accumulate(piece)

    return Tensor._result(data, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("stack needs at least one tensor")
    shapes = {tensor.shape for tensor in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"Cannot stack tensors with shapes {sorted(shapes)}")
    data = np.stack([tensor.data for tensor in tensors], axis=axis)

    def backward(grad: Array) -> None:
        for i, tensor in enumerate(tensors):
            tensor._accumulate(np.take(grad, i, axis=axis))

    return Tensor._result(data, tensors, backward)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in visited:
                stack_.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``grad`` of every reachable leaf that requires grad."""
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topological_order(root)
    for node in order:
        if node._backward is not None:
            node.grad = np.zeros_like(node.data)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for tensor in tensors:
        tensor.zero_grad()
