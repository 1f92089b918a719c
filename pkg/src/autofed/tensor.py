"""Minimal dense tensor library with tape-based reverse-mode differentiation.

All math is double precision. Every operation that participates in training
is defined here as a single tape node with a hand-written backward rule, so
graphs stay small and gradients stay checkable against finite differences.
"""

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (used for evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # convenience arithmetic (sufficient for tests and glue code)
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss):
    """Accumulate d(loss)/d(t) into t.grad for every tracked tensor."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node._backward is None:
            # leaf (parameter or input marked for gradients)
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is not None:
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives
# ---------------------------------------------------------------------------

def add(a, b):
    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), back)


def sub(a, b):
    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), back)


def mul(a, b):
    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), back)


def scale(a, c):
    def back(g):
        return (g * c,)

    return _node(a.data * c, (a,), back)


def div(a, b):
    def back(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data ** 2), b.shape)
        return ga, gb

    return _node(a.data / b.data, (a, b), back)


def matmul(a, b):
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} x {b.shape}")

    def back(g):
        if b.data.ndim == 1:
            ga = np.multiply.outer(g, b.data) if g.ndim else g * b.data
            gb = a.data.T @ g if a.data.ndim == 2 else g * a.data
        else:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(np.matmul(a.data, b.data), (a, b), back)


def linear(x, w, b):
    """x @ w + b over the last axis, fused into one tape node."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")

    def back(g):
        gx = np.matmul(g, w.data.T)
        gw = np.tensordot(x.data.reshape(-1, x.data.shape[-1]),
                          g.reshape(-1, g.shape[-1]), axes=(0, 0))
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return gx, gw, gb

    return _node(np.matmul(x.data, w.data) + b.data, (x, w, b), back)


def graph_mix(adj, x):
    """adj @ x with adj of shape (n, n) and x of shape (..., n, k)."""

    def back(g):
        gadj = np.tensordot(g.reshape(-1, g.shape[-2], g.shape[-1]),
                            x.data.reshape(-1, x.data.shape[-2], x.data.shape[-1]),
                            axes=([0, 2], [0, 2]))
        gx = np.matmul(adj.data.T, g)
        return gadj, gx

    return _node(np.matmul(adj.data, x.data), (adj, x), back)


def relu(a):
    mask = a.data > 0

    def back(g):
        return (g * mask,)

    return _node(np.where(mask, a.data, 0.0), (a,), back)


def sigmoid(a):
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def back(g):
        return (g * out_data * (1.0 - out_data),)

    return _node(out_data, (a,), back)


def tanh(a):
    out_data = np.tanh(a.data)

    def back(g):
        return (g * (1.0 - out_data ** 2),)

    return _node(out_data, (a,), back)


def pointwise(kind, a):
    try:
        fn = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}[kind]
    except KeyError:
        raise ContractError(f"unknown pointwise kind {kind!r}")
    return fn(a)


def softmax_rows(a):
    """Softmax along the last axis, stabilized by row-max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return (out_data * (g - dot),)

    return _node(out_data, (a,), back)


def concat_last(a, b):
    def back(g):
        k = a.data.shape[-1]
        return g[..., :k], g[..., k:]

    return _node(np.concatenate([a.data, b.data], axis=-1), (a, b), back)


def lerp_gate(u, h_prev, c):
    """u * h_prev + (1 - u) * c, fused (the GRU state update)."""

    def back(g):
        return g * (h_prev.data - c.data), g * u.data, g * (1.0 - u.data)

    return _node(u.data * h_prev.data + (1.0 - u.data) * c.data, (u, h_prev, c), back)


def take(x, index, axis=0):
    """Select one slice along `axis` (used to walk the time dimension)."""

    def back(g):
        gx = np.zeros_like(x.data)
        sl = [slice(None)] * x.data.ndim
        sl[axis] = index
        gx[tuple(sl)] = g
        return (gx,)

    return _node(np.take(x.data, index, axis=axis), (x,), back)


def stack(tensors, axis=0):
    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back)


def squeeze_last(a):
    if a.data.shape[-1] != 1:
        raise ShapeError(f"squeeze_last needs trailing dim 1, got {a.shape}")

    def back(g):
        return (g[..., None],)

    return _node(a.data[..., 0], (a,), back)


def total_sum(a):
    def back(g):
        return (np.full_like(a.data, float(g)),)

    return _node(a.data.sum(), (a,), back)


def mean_abs_error(a, b):
    """mean |a - b| as a scalar tape node."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mean_abs_error shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def back(g):
        s = float(g) * np.sign(diff) / n
        return s, -s

    return _node(np.abs(diff).mean(), (a, b), back)
