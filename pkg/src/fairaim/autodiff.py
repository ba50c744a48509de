"""A small reverse-mode differentiation engine over float64 numpy arrays.

Only the operations the relational actor/critic networks need are provided.
Each op records its parents and a closure mapping the output gradient to the
parents' gradients; ``backward`` walks the recorded graph once in reverse
topological order and accumulates into leaf tensors that require gradients.
"""
from __future__ import annotations

import numpy as np

from . import _accel


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "grad_fn")

    def __init__(self, value, requires_grad=False, parents=(), grad_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.value) if requires_grad and not parents else None
        self.parents = parents
        self.grad_fn = grad_fn

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return not self.parents

    def zero_grad(self):
        if self.requires_grad and self.is_leaf:
            self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, grad_fn):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, parents, grad_fn)
    return Tensor(value)


class ForwardTrace:
    """Output of a forward pass; may be differentiated exactly once."""

    def __init__(self, output: Tensor, cache=None):
        self.output = output
        self.cache = cache or {}
        self.consumed = False


def backward(trace: ForwardTrace | Tensor, upstream=None):
    """Accumulate d(upstream . output)/d(leaf) into every leaf's ``grad``."""
    if isinstance(trace, ForwardTrace):
        if trace.consumed:
            raise RuntimeError("forward trace already consumed by a backward pass")
        trace.consumed = True
        out = trace.output
    else:
        out = trace
    if upstream is None:
        if out.value.size != 1:
            raise ValueError("upstream gradient required for non-scalar output")
        upstream = np.ones_like(out.value)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != out.shape:
        raise ValueError(f"upstream shape {upstream.shape} != output shape {out.shape}")
    if not out.requires_grad:
        return

    order, seen, stack = [], set(), [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(out): upstream}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad += g
            continue
        for p, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    # release closures so the trace cannot be replayed
    for node in order:
        if not node.is_leaf:
            node.parents, node.grad_fn = (), None


# ------------------------------------------------------------------ ops

def linear(x, w, b=None):
    x, w = as_tensor(x), as_tensor(w)
    out = x.value @ w.value
    if b is not None:
        b = as_tensor(b)
        out = out + b.value

    def grad_fn(g):
        gx = g @ w.value.T if x.requires_grad else None
        gw = x.value.T @ g if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, grad_fn)


def relu(x):
    x = as_tensor(x)
    mask = x.value > 0.0
    return _make(x.value * mask, (x,), lambda g: (g * mask,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.value)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, c):
    """Elementwise product with a constant array (broadcast over ``a``)."""
    a = as_tensor(a)
    c = np.asarray(c, dtype=np.float64)
    return _make(a.value * c, (a,), lambda g: (g * c,))


def square(x):
    x = as_tensor(x)
    return _make(x.value**2, (x,), lambda g: (2.0 * x.value * g,))


def mean(x):
    x = as_tensor(x)
    n = x.value.size
    shape = x.shape
    return _make(np.array(x.value.mean() if n else 0.0), (x,), lambda g: (np.full(shape, g / max(n, 1)),))


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _make(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(xs):
    """Concatenate 2-D tensors along columns."""
    xs = [as_tensor(x) for x in xs]
    widths = np.cumsum([0] + [x.shape[1] for x in xs])
    out = np.concatenate([x.value for x in xs], axis=1)

    def grad_fn(g):
        return tuple(g[:, widths[k] : widths[k + 1]] for k in range(len(xs)))

    return _make(out, xs, grad_fn)


def gather(x, index):
    """Rows ``x[index]``; the gradient scatters back onto repeated rows."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    return _make(x.value[index], (x,), lambda g: (_accel.scatter_add_rows(g, index, n),))


def scatter_sum(x, index, n_rows, weight=None):
    """out[index[e]] += weight[e] * x[e]."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    w = None if weight is None else np.asarray(weight, dtype=np.float64)[:, None]
    vals = x.value if w is None else x.value * w
    out = _accel.scatter_add_rows(np.ascontiguousarray(vals), index, n_rows)

    def grad_fn(g):
        gx = g[index]
        return (gx if w is None else gx * w,)

    return _make(out, (x,), grad_fn)


def relation_linear(x, w, b, bounds):
    """Per-row affine map chosen by relation: out[e] = x[e] @ w[r(e)] + b[r(e)].

    Rows must be sorted by relation; rows ``bounds[r]:bounds[r + 1]`` carry
    relation ``r``. ``w`` is (R, in, out) and ``b`` is (R, out) or None.
    """
    x, w = as_tensor(x), as_tensor(w)
    b = None if b is None else as_tensor(b)
    spans = [(r, bounds[r], bounds[r + 1]) for r in range(len(bounds) - 1) if bounds[r + 1] > bounds[r]]
    out = np.empty((x.shape[0], w.shape[2]))
    for r, lo, hi in spans:
        np.matmul(x.value[lo:hi], w.value[r], out=out[lo:hi])
        if b is not None:
            out[lo:hi] += b.value[r]

    def grad_fn(g):
        gx = np.empty_like(x.value) if x.requires_grad else None
        gw = np.zeros_like(w.value) if w.requires_grad else None
        gb = np.zeros_like(b.value) if b is not None and b.requires_grad else None
        for r, lo, hi in spans:
            gr = g[lo:hi]
            if gx is not None:
                np.matmul(gr, w.value[r].T, out=gx[lo:hi])
            if gw is not None:
                gw[r] = x.value[lo:hi].T @ gr
            if gb is not None:
                gb[r] = gr.sum(axis=0)
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, grad_fn)
