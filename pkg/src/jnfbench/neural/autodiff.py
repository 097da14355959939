"""A small reverse-mode automatic differentiation engine on numpy arrays.

Each :class:`Tensor` stores its value, an optional gradient and a closure
that maps the output gradient to gradients of its parents. ``backward``
walks the graph in reverse topological order and accumulates gradients.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, parents: Sequence["Tensor"] = (),
                 backward: Callable | None = None, name: str | None = None):
        self.value = np.asarray(value)
        if self.value.dtype.kind != "f":
            self.value = self.value.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without a gradient requires a scalar output")
            grad = np.ones_like(self.value)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise RuntimeError(f"gradient shape {pg.shape} != value shape {parent.shape}")
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order[::-1]


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(np.array(value, copy=True), requires_grad=True, name=name)


def make(value, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Create an op output; records the graph only when needed."""
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(value)
    return Tensor(value, requires_grad=True, parents=parents, backward=backward)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return make(a.value + b.value, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return make(a.value - b.value, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return make(a.value * b.value, (a, b),
                lambda g: (_unbroadcast(g * b.value, a.shape) if a.requires_grad else None,
                           _unbroadcast(g * a.value, b.shape) if b.requires_grad else None))


def matmul(a, b) -> Tensor:
    """``a @ b`` with ``b`` a 2-D matrix and ``a`` of any leading shape."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return make(a.value @ b.value, (a, b), backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.value)
    return make(y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.value)
    return make(y, (x,), lambda g: (g * y * (1 - y),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * v) + 1.0)


def atanh_clipped(x, eps: float = 1e-7) -> Tensor:
    """``atanh(clip(x, -(1-eps), 1-eps))``; zero gradient where clipped."""
    x = as_tensor(x)
    lim = 1.0 - eps
    inside = np.abs(x.value) <= lim
    xc = np.clip(x.value, -lim, lim)
    return make(np.arctanh(xc), (x,), lambda g: (np.where(inside, g / (1 - xc * xc), 0.0),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    value = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make(value, tensors, backward)


def slice_(x, index) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        out = np.zeros_like(x.value)
        np.add.at(out, index, g) if _has_fancy(index) else out.__setitem__(index, g)
        return (out,)

    return make(x.value[index], (x,), backward)


def _has_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return make(np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inverse),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return make(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def sum_(x, axis=None) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return make(np.asarray(x.value.sum(axis=axis)), (x,), backward)


def abs1_loss(x) -> Tensor:
    """l1 norm ``sum |x|``; the subgradient at 0 is 0."""
    x = as_tensor(x)
    return make(np.asarray(np.abs(x.value).sum()), (x,), lambda g: (g * np.sign(x.value),))


def complex_magnitude(re, im, delta: float = 1e-12) -> Tensor:
    re, im = as_tensor(re), as_tensor(im)
    if re.shape != im.shape:
        raise ValueError(f"complex_magnitude: shape mismatch {re.shape} vs {im.shape}")
    mag = np.sqrt(re.value**2 + im.value**2 + delta)
    return make(mag, (re, im), lambda g: (g * re.value / mag, g * im.value / mag))


def take_along_axis(x, indices: np.ndarray, axis: int) -> Tensor:
    """Gather with an index array; ``indices`` must be a permutation along ``axis``."""
    x = as_tensor(x)
    inverse = np.argsort(indices, axis=axis)

    def backward(g):
        return (np.take_along_axis(g, inverse, axis=axis),)

    return make(np.take_along_axis(x.value, indices, axis=axis), (x,), backward)


def linear_map(inputs: Sequence, forward: Callable, adjoint: Callable) -> Tensor:
    """Wrap a linear numpy map ``y = A(x1, x2, ...)`` with its adjoint.

    ``adjoint(g)`` must return one gradient per input.
    """
    inputs = [as_tensor(t) for t in inputs]
    value = forward(*[t.value for t in inputs])
    return make(value, inputs, lambda g: tuple(adjoint(g)))
