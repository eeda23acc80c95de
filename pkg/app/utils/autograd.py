"""
Minimal reverse-mode differentiation over numpy arrays.

Each Tensor records the tensors it was computed from and a closure that pushes
its gradient back to them. backward() walks the graph in reverse topological
order. Broadcasting is supported for elementwise ops; gradients are summed
back to the operand's shape.
"""

from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[np.ndarray, float, int]


class NumericError(ArithmeticError):
    """Raised when a non-finite value shows up in a named layer."""

    def __init__(self, layer: str, message: Optional[str] = None):
        self.layer = layer
        super().__init__(message or f"non-finite values in layer '{layer}'")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An array node in the computation graph."""

    __slots__ = ('data', 'grad', 'requires_grad', 'name', '_prev', '_backward', '_op')

    def __init__(
        self,
        data: ArrayLike,
        children: Tuple['Tensor', ...] = (),
        op: str = '',
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(c.requires_grad for c in children)
        self.name = name
        self._prev = children
        self._backward: Callable[[], None] = lambda: None
        self._op = op

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, op={self._op!r})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    # elementwise arithmetic

    def __add__(self, other: Union['Tensor', ArrayLike]) -> 'Tensor':
        other = as_tensor(other)
        out = Tensor(self.data + other.data, (self, other), '+')

        def _backward():
            self._accumulate(_unbroadcast(out.grad, self.shape))
            other._accumulate(_unbroadcast(out.grad, other.shape))
        out._backward = _backward
        return out

    def __mul__(self, other: Union['Tensor', ArrayLike]) -> 'Tensor':
        other = as_tensor(other)
        out = Tensor(self.data * other.data, (self, other), '*')

        def _backward():
            self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            other._accumulate(_unbroadcast(out.grad * self.data, other.shape))
        out._backward = _backward
        return out

    def __pow__(self, exponent: float) -> 'Tensor':
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = Tensor(self.data ** exponent, (self,), f'**{exponent}')

        def _backward():
            self._accumulate(out.grad * exponent * self.data ** (exponent - 1))
        out._backward = _backward
        return out

    def __neg__(self) -> 'Tensor':
        return self * -1.0

    def __radd__(self, other: ArrayLike) -> 'Tensor':
        return self + other

    def __sub__(self, other: Union['Tensor', ArrayLike]) -> 'Tensor':
        return self + (-as_tensor(other))

    def __rsub__(self, other: ArrayLike) -> 'Tensor':
        return as_tensor(other) + (-self)

    def __rmul__(self, other: ArrayLike) -> 'Tensor':
        return self * other

    def __truediv__(self, other: Union['Tensor', ArrayLike]) -> 'Tensor':
        if isinstance(other, Tensor):
            return self * other ** -1.0
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        other = as_tensor(other)
        out = Tensor(np.matmul(self.data, other.data), (self, other), '@')

        def _backward():
            g = out.grad
            a, b = self.data, other.data
            if self.requires_grad:
                ga = np.matmul(g, np.swapaxes(b, -1, -2)) if b.ndim > 1 else np.multiply.outer(g, b)
                self._accumulate(_unbroadcast(ga, self.shape))
            if other.requires_grad:
                gb = np.matmul(np.swapaxes(a, -1, -2), g) if a.ndim > 1 else np.multiply.outer(a, g)
                other._accumulate(_unbroadcast(gb, other.shape))
        out._backward = _backward
        return out

    # shape ops

    def reshape(self, *shape: int) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), (self,), 'reshape')

        def _backward():
            self._accumulate(out.grad.reshape(self.shape))
        out._backward = _backward
        return out

    def transpose(self, *axes: int) -> 'Tensor':
        axes = axes if axes else tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        out = Tensor(np.transpose(self.data, axes), (self,), 'transpose')

        def _backward():
            self._accumulate(np.transpose(out.grad, inverse))
        out._backward = _backward
        return out

    def swapaxes(self, a: int, b: int) -> 'Tensor':
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(*axes)

    # reductions

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> 'Tensor':
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), 'sum')

        def _backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))
        out._backward = _backward
        return out

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> 'Tensor':
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # nonlinearities

    def exp(self) -> 'Tensor':
        value = np.exp(self.data)
        out = Tensor(value, (self,), 'exp')

        def _backward():
            self._accumulate(out.grad * value)
        out._backward = _backward
        return out

    def tanh(self) -> 'Tensor':
        value = np.tanh(self.data)
        out = Tensor(value, (self,), 'tanh')

        def _backward():
            self._accumulate(out.grad * (1.0 - value * value))
        out._backward = _backward
        return out

    def sigmoid(self) -> 'Tensor':
        value = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        out = Tensor(value, (self,), 'sigmoid')

        def _backward():
            self._accumulate(out.grad * value * (1.0 - value))
        out._backward = _backward
        return out

    def relu(self) -> 'Tensor':
        out = Tensor(np.maximum(self.data, 0.0), (self,), 'relu')

        def _backward():
            self._accumulate(out.grad * (self.data > 0))
        out._backward = _backward
        return out

    def gelu(self) -> 'Tensor':
        """tanh approximation of GELU, built from primitive ops."""
        inner = (self + self ** 3 * 0.044715) * np.sqrt(2.0 / np.pi)
        return self * (inner.tanh() + 1.0) * 0.5

    def softmax(self, axis: int = -1) -> 'Tensor':
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        value = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(value, (self,), 'softmax')

        def _backward():
            g = out.grad
            self._accumulate(value * (g - (g * value).sum(axis=axis, keepdims=True)))
        out._backward = _backward
        return out

    def norm(self, axis: int = -1) -> 'Tensor':
        """Euclidean norm along an axis; the gradient at zero is taken as zero."""
        value = np.sqrt((self.data * self.data).sum(axis=axis))
        out = Tensor(value, (self,), 'norm')

        def _backward():
            safe = np.where(value > 0, value, 1.0)
            scale = np.where(value > 0, out.grad / safe, 0.0)
            self._accumulate(self.data * np.expand_dims(scale, axis))
        out._backward = _backward
        return out

    # graph traversal

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate gradients of this tensor into every tensor it depends on."""
        topo: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited and child.requires_grad:
                    stack.append((child, False))

        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(topo):
            if node.grad is not None:
                node._backward()


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(value: np.ndarray, name: Optional[str] = None) -> Tensor:
    """A leaf tensor that collects gradients."""
    return Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate tensors along an existing axis."""
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), 'concat')
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _backward():
        for t, g in zip(tensors, np.split(out.grad, splits, axis=axis)):
            t._accumulate(g)
    out._backward = _backward
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    centered = x - x.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (variance + eps) ** -0.5 * gain + bias


def check_finite(t: Tensor, layer: str) -> Tensor:
    """Raise NumericError naming the layer when t holds NaN or inf."""
    if not np.all(np.isfinite(t.data)):
        raise NumericError(layer)
    return t


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
