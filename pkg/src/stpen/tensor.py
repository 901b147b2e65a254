"""Dense float64 tensors with reverse-mode automatic differentiation.

Each Tensor wraps an ndarray, remembers the tensors it was computed from
and a closure that routes the output gradient back to them.  backward()
replays the closures in reverse topological order.  Everything runs at
float64 so the oracle tests can compare against loop references at 1e-12,
and all operations are deterministic: identical inputs give bit-identical
outputs and gradients.
"""

import numpy as np

from .errors import ShapeError


def _unbroadcast(grad, shape):
    # Sum a gradient down to `shape` after numpy broadcasting widened it.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    # Keep numpy from consuming `ndarray <op> Tensor` elementwise; the
    # reflected Tensor operator must run instead.
    __array_ufunc__ = None

    def __init__(self, data, parents=(), name=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.name = name
        self._parents = tuple(parents)
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @staticmethod
    def zeros(shape, name=""):
        return Tensor(np.zeros(shape), name=name)

    def item(self):
        return float(self.data)

    def accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable tensor's .grad."""
        if grad is None:
            grad = np.ones_like(self.data)
        self.accumulate(np.asarray(grad, dtype=np.float64))

        # Iterative post-order walk; graphs include LSTM unrolls deep
        # enough to make recursion risky.
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, (self, other), "+")

        def backward():
            self.accumulate(_unbroadcast(out.grad, self.data.shape))
            other.accumulate(_unbroadcast(out.grad, other.data.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,), "neg")
        out._backward = lambda: self.accumulate(-out.grad)
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, (self, other), "*")

        def backward():
            self.accumulate(_unbroadcast(out.grad * other.data, self.data.shape))
            other.accumulate(_unbroadcast(out.grad * self.data, other.data.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = as_tensor(other)
        if self.ndim != 2 or other.ndim not in (1, 2):
            raise ShapeError(f"matmul expects 2-d @ 1-d/2-d, got {self.shape} @ {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {self.shape} @ {other.shape}")
        out = Tensor(self.data @ other.data, (self, other), "@")

        def backward():
            if other.ndim == 1:
                self.accumulate(np.outer(out.grad, other.data))
                other.accumulate(self.data.T @ out.grad)
            else:
                self.accumulate(out.grad @ other.data.T)
                other.accumulate(self.data.T @ out.grad)

        out._backward = backward
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key], (self,), "slice")

        def backward():
            buf = np.zeros_like(self.data)
            np.add.at(buf, key, out.grad)
            self.accumulate(buf)

        out._backward = backward
        return out

    # -- reductions ---------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")

        def backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.accumulate(np.broadcast_to(g, self.data.shape).copy())

        out._backward = backward
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)])
        out = Tensor(self.data.mean(axis=axis, keepdims=keepdims), (self,), "mean")

        def backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.accumulate(np.broadcast_to(g, self.data.shape) / count)

        out._backward = backward
        return out

    # -- elementwise nonlinearities ------------------------------------

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), (self,), "relu")
        out._backward = lambda: self.accumulate((self.data > 0.0) * out.grad)
        return out

    def sigmoid(self):
        # Split by sign so exp never overflows.
        x = self.data
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        y[~pos] = e / (1.0 + e)
        out = Tensor(y, (self,), "sigmoid")
        out._backward = lambda: self.accumulate(out.data * (1.0 - out.data) * out.grad)
        return out

    def tanh(self):
        out = Tensor(np.tanh(self.data), (self,), "tanh")
        out._backward = lambda: self.accumulate((1.0 - out.data ** 2) * out.grad)
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,), "log")
        out._backward = lambda: self.accumulate(out.grad / self.data)
        return out

    def clamp(self, lo, hi):
        out = Tensor(np.clip(self.data, lo, hi), (self,), "clamp")
        inside = (self.data > lo) & (self.data < hi)
        out._backward = lambda: self.accumulate(inside * out.grad)
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,), "reshape")
        out._backward = lambda: self.accumulate(out.grad.reshape(self.data.shape))
        return out

    @staticmethod
    def concat(tensors, axis=0):
        tensors = [as_tensor(t) for t in tensors]
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                     tuple(tensors), "concat")
        sizes = [t.data.shape[axis] for t in tensors]

        def backward():
            offset = 0
            for t, n in zip(tensors, sizes):
                sl = [slice(None)] * out.data.ndim
                sl[axis] = slice(offset, offset + n)
                t.accumulate(out.grad[tuple(sl)])
                offset += n

        out._backward = backward
        return out

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


class ParamSet:
    """Named parameter tensors, iterated in lexicographic path order."""

    def __init__(self):
        self._params = {}

    def add(self, path, tensor):
        if path in self._params:
            raise ShapeError(f"duplicate parameter path {path!r}")
        self._params[path] = tensor
        return tensor

    def __getitem__(self, path):
        return self._params[path]

    def __contains__(self, path):
        return path in self._params

    def __len__(self):
        return len(self._params)

    def paths(self):
        return sorted(self._params)

    def items(self):
        for path in self.paths():
            yield path, self._params[path]

    def subset(self, prefix):
        """Mapping of parameters under `prefix.` with the prefix stripped."""
        head = prefix + "."
        return {p[len(head):]: t for p, t in self._params.items() if p.startswith(head)}

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None
