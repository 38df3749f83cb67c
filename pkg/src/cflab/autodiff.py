"""Array-valued reverse-mode differentiation on numpy, just enough to train
the clustering/beamforming pipeline.

A Tensor wraps a float64 ndarray; ops record a closure that scatters the
upstream adjoint to the parents. backward() topologically sorts the graph
from a scalar root and runs the closures in reverse. Broadcasting follows
numpy rules, with gradients summed back to the parent shapes.
"""

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, value, requires_grad=False, parents=(), backprop=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backprop = backprop

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar root")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._backprop is not None:
                node._backprop()

    # operator sugar; scalars and ndarrays are lifted to constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(x, requires_grad=False):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


def parameter(x):
    return Tensor(x, requires_grad=True)


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum an upstream gradient back down to a broadcast parent's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(ax for ax, n in enumerate(shape) if n == 1 and g.shape[ax] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value + b.value, parents=(a, b))

    def backprop():
        _accum(a, _unbroadcast(out.grad, a.value.shape))
        _accum(b, _unbroadcast(out.grad, b.value.shape))

    out._backprop = backprop
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value - b.value, parents=(a, b))

    def backprop():
        _accum(a, _unbroadcast(out.grad, a.value.shape))
        _accum(b, _unbroadcast(-out.grad, b.value.shape))

    out._backprop = backprop
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value * b.value, parents=(a, b))

    def backprop():
        _accum(a, _unbroadcast(out.grad * b.value, a.value.shape))
        _accum(b, _unbroadcast(out.grad * a.value, b.value.shape))

    out._backprop = backprop
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value / b.value, parents=(a, b))

    def backprop():
        _accum(a, _unbroadcast(out.grad / b.value, a.value.shape))
        _accum(b, _unbroadcast(-out.grad * a.value / b.value**2, b.value.shape))

    out._backprop = backprop
    return out


def square(a):
    a = as_tensor(a)
    out = Tensor(a.value**2, parents=(a,))

    def backprop():
        _accum(a, 2.0 * a.value * out.grad)

    out._backprop = backprop
    return out


def sqrt(a):
    """Square root with a zero subgradient at 0 (guards exact-zero norms)."""
    a = as_tensor(a)
    root = np.sqrt(a.value)
    out = Tensor(root, parents=(a,))

    def backprop():
        g = np.zeros_like(root)
        nz = root > 0
        g[nz] = 0.5 / root[nz]
        _accum(a, g * out.grad)

    out._backprop = backprop
    return out


def absolute(a):
    a = as_tensor(a)
    out = Tensor(np.abs(a.value), parents=(a,))

    def backprop():
        _accum(a, np.sign(a.value) * out.grad)

    out._backprop = backprop
    return out


def relu(a):
    a = as_tensor(a)
    out = Tensor(np.maximum(a.value, 0.0), parents=(a,))

    def backprop():
        _accum(a, (a.value > 0) * out.grad)

    out._backprop = backprop
    return out


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.value)
    out = Tensor(y, parents=(a,))

    def backprop():
        _accum(a, (1.0 - y**2) * out.grad)

    out._backprop = backprop
    return out


def sigmoid(a):
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.value))
    out = Tensor(y, parents=(a,))

    def backprop():
        _accum(a, y * (1.0 - y) * out.grad)

    out._backprop = backprop
    return out


def log(a):
    a = as_tensor(a)
    out = Tensor(np.log(a.value), parents=(a,))

    def backprop():
        _accum(a, out.grad / a.value)

    out._backprop = backprop
    return out


def log2(a):
    return mul(log(a), 1.0 / np.log(2.0))


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.value.sum(axis=axis, keepdims=keepdims), parents=(a,))

    def backprop():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.value.shape).copy())

    out._backprop = backprop
    return out


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.value.size if axis is None else np.prod(
        [a.value.shape[ax] for ax in np.atleast_1d(axis)]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def minimum(a, b):
    """Elementwise min; ties route the gradient to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.value <= b.value
    out = Tensor(np.where(pick_a, a.value, b.value), parents=(a, b))

    def backprop():
        _accum(a, _unbroadcast(np.where(pick_a, out.grad, 0.0), a.value.shape))
        _accum(b, _unbroadcast(np.where(pick_a, 0.0, out.grad), b.value.shape))

    out._backprop = backprop
    return out


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.value.reshape(shape), parents=(a,))

    def backprop():
        _accum(a, out.grad.reshape(a.value.shape))

    out._backprop = backprop
    return out


def take(a, key):
    a = as_tensor(a)
    out = Tensor(a.value[key], parents=(a,))

    def backprop():
        g = np.zeros_like(a.value)
        g[key] = out.grad
        _accum(a, g)

    out._backprop = backprop
    return out


def einsum(pattern, a, b):
    """Two-operand einsum; indices must not repeat within one operand."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out_idx = pattern.replace(" ", "").split("->")
    in_a, in_b = ins.split(",")
    if len(set(in_a)) != len(in_a) or len(set(in_b)) != len(in_b):
        raise ValueError("diagonal einsum operands are not supported")
    out = Tensor(np.einsum(pattern, a.value, b.value), parents=(a, b))

    def backprop():
        if a.requires_grad:
            _accum(a, np.einsum(f"{out_idx},{in_b}->{in_a}", out.grad, b.value))
        if b.requires_grad:
            _accum(b, np.einsum(f"{in_a},{out_idx}->{in_b}", a.value, out.grad))

    out._backprop = backprop
    return out


def conv2d(x, w, b, stride=(1, 1), padding=(0, 0)):
    """Strided cross-correlation, NHWC layout, kernels (k_w, k_h, c_in, c_out)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    y = kernels.conv2d_forward(x.value, w.value, b.value, stride, padding)
    out = Tensor(y, parents=(x, w, b))
    k_w, k_h = w.value.shape[0], w.value.shape[1]
    in_w, in_h = x.value.shape[1], x.value.shape[2]

    def backprop():
        gy = out.grad
        if x.requires_grad:
            _accum(
                x, kernels.conv2d_backward_input(gy, w.value, stride, padding, in_w, in_h)
            )
        if w.requires_grad:
            _accum(
                w, kernels.conv2d_backward_weights(x.value, gy, k_w, k_h, stride, padding)
            )
        if b.requires_grad:
            _accum(b, gy.sum(axis=(0, 1, 2)))

    out._backprop = backprop
    return out
