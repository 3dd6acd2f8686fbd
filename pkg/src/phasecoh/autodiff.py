"""Reverse-mode automatic differentiation over dense float64 tensors.

A small define-by-run engine: each operation returns a new ``DiffTensor``
carrying the forward value plus a closure that routes upstream gradients
into the operation's parents. Calling :func:`backward` on a scalar walks
the recorded graph once in reverse topological order, accumulating
gradients into every reachable leaf that requires them.

Only the primitives the reconstruction network and its losses need are
provided, and shape rules are deliberately strict: the sole implicit
broadcasts are scalar multiplication (:func:`scale`) and row-vector bias
addition inside :func:`add`. Everything else must match exactly, which
keeps silent shape bugs out of the graph.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""


class AutodiffError(RuntimeError):
    """Raised on graph-level misuse (non-scalar backward, double backward)."""


class DiffTensor:
    """A dense float64 tensor participating in the computation graph.

    ``parents`` and ``op`` record how the tensor was produced; leaves have
    no parents. ``grad`` is allocated lazily during backward and holds
    dLoss/dSelf once :func:`backward` has run.
    """

    __slots__ = ("values", "grad", "requires_grad", "op", "parents",
                 "_backward", "_backward_ran")

    def __init__(self, values, requires_grad=False, op="leaf", parents=()):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.parents = tuple(parents)
        self._backward = None
        self._backward_ran = False

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"DiffTensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def leaf(values) -> DiffTensor:
    """A trainable leaf tensor (gradient will be accumulated)."""
    return DiffTensor(values, requires_grad=True)


def constant(values) -> DiffTensor:
    """A non-trainable tensor; gradients never flow into it."""
    return DiffTensor(values, requires_grad=False)


def _as_tensor(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else constant(x)


def _accum(parent: DiffTensor, g: np.ndarray) -> None:
    if not parent.requires_grad:
        return
    if parent.grad is None:
        parent.grad = np.zeros(parent.values.shape, dtype=np.float64)
    parent.grad += g


def _make(values, op, parents, backward_fn) -> DiffTensor:
    out = DiffTensor(values,
                     requires_grad=any(p.requires_grad for p in parents),
                     op=op, parents=parents)
    if out.requires_grad:
        out._backward = backward_fn
    return out


def toposort(root: DiffTensor) -> list:
    """Gradient-carrying ancestors of ``root`` in topological order.

    Iterative DFS; constant subgraphs are skipped entirely since no
    gradient can flow into them.
    """
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def backward(loss: DiffTensor) -> None:
    """Populate ``grad`` on every requires-grad ancestor of a scalar loss.

    Each graph may be differentiated once; rebuilding the graph (a fresh
    forward pass) is the reset. A second call on the same loss raises.
    """
    if loss.values.shape != ():
        raise AutodiffError(
            f"backward requires a scalar loss, got shape {loss.values.shape}")
    if loss._backward_ran:
        raise AutodiffError("backward already ran on this graph; "
                            "rebuild the graph before differentiating again")
    if not loss.requires_grad:
        raise AutodiffError("loss does not depend on any requires-grad leaf")
    order = toposort(loss)
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    loss._backward_ran = True


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives
# ---------------------------------------------------------------------------

def add(a, b) -> DiffTensor:
    """Elementwise sum; also accepts a 1-D row-vector bias for a 2-D left operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        def bw(g):
            _accum(a, g)
            _accum(b, g)
        return _make(a.values + b.values, "add", (a, b), bw)
    if a.values.ndim == 2 and b.values.ndim == 1 and a.shape[1] == b.shape[0]:
        def bw(g):
            _accum(a, g)
            _accum(b, g.sum(axis=0))
        return _make(a.values + b.values[None, :], "add_bias", (a, b), bw)
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)
    return _make(a.values - b.values, "sub", (a, b), bw)


def mul(a, b) -> DiffTensor:
    """Elementwise product of same-shape tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        _accum(a, g * b.values)
        _accum(b, g * a.values)
    return _make(a.values * b.values, "mul", (a, b), bw)


def scale(a, c: float) -> DiffTensor:
    """Multiply a tensor by a Python scalar."""
    a = _as_tensor(a)
    c = float(c)

    def bw(g):
        _accum(a, g * c)
    return _make(a.values * c, "scale", (a,), bw)


def matmul(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        _accum(a, g @ b.values.T)
        _accum(b, a.values.T @ g)
    return _make(a.values @ b.values, "matmul", (a, b), bw)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def _conv_patches(xp: np.ndarray, K: int, L: int) -> np.ndarray:
    # (B, Ci, K, L) view of all kernel-aligned slices of the padded input
    return np.stack([xp[:, :, k:k + L] for k in range(K)], axis=2)


def conv1d(x, w, b) -> DiffTensor:
    """1-D convolution, stride 1, same padding.

    x: (B, Cin, L); w: (Cout, Cin, K) with K odd; b: (Cout,).
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.values.ndim != 3 or w.values.ndim != 3:
        raise ShapeError(f"conv1d: need 3-D x and w, got {x.shape} and {w.shape}")
    B, Ci, L = x.shape
    Co, Ciw, K = w.shape
    if Ciw != Ci or K % 2 != 1 or b.shape != (Co,):
        raise ShapeError(
            f"conv1d: incompatible shapes x={x.shape} w={w.shape} b={b.shape}")
    pad = K // 2
    xp = np.pad(x.values, ((0, 0), (0, 0), (pad, pad)))
    patches = _conv_patches(xp, K, L)
    y = np.einsum("oik,bikl->bol", w.values, patches) + b.values[None, :, None]

    def bw(g):
        _accum(w, np.einsum("bol,bikl->oik", g, patches))
        _accum(b, g.sum(axis=(0, 2)))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, :, k:k + L] += np.einsum("oi,bol->bil", w.values[:, :, k], g)
            _accum(x, gxp[:, :, pad:pad + L])
    return _make(y, "conv1d", (x, w, b), bw)


def maxpool1d(x) -> DiffTensor:
    """Max pooling with kernel 2, stride 2 over the last axis; odd tails dropped.

    Ties resolve to the first element, matching argmax.
    """
    x = _as_tensor(x)
    if x.values.ndim != 3:
        raise ShapeError(f"maxpool1d: need 3-D input, got {x.shape}")
    B, C, L = x.shape
    Lp = L // 2
    pairs = x.values[:, :, :2 * Lp].reshape(B, C, Lp, 2)
    idx = pairs.argmax(axis=3)
    y = np.take_along_axis(pairs, idx[..., None], axis=3)[..., 0]

    def bw(g):
        gp = np.zeros_like(pairs)
        np.put_along_axis(gp, idx[..., None], g[..., None], axis=3)
        gx = np.zeros_like(x.values)
        gx[:, :, :2 * Lp] = gp.reshape(B, C, 2 * Lp)
        _accum(x, gx)
    return _make(y, "maxpool1d", (x,), bw)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def relu(x) -> DiffTensor:
    x = _as_tensor(x)

    def bw(g):
        _accum(x, g * (x.values > 0))
    return _make(np.maximum(x.values, 0.0), "relu", (x,), bw)


def leaky_relu(x, slope: float = 0.2) -> DiffTensor:
    x = _as_tensor(x)
    slope = float(slope)

    def bw(g):
        _accum(x, g * np.where(x.values > 0, 1.0, slope))
    return _make(np.where(x.values > 0, x.values, slope * x.values),
                 "leaky_relu", (x,), bw)


def tanh(x) -> DiffTensor:
    x = _as_tensor(x)
    y = np.tanh(x.values)

    def bw(g):
        _accum(x, g * (1.0 - y * y))
    return _make(y, "tanh", (x,), bw)


def cos(x) -> DiffTensor:
    x = _as_tensor(x)

    def bw(g):
        _accum(x, -g * np.sin(x.values))
    return _make(np.cos(x.values), "cos", (x,), bw)


def sin(x) -> DiffTensor:
    x = _as_tensor(x)

    def bw(g):
        _accum(x, g * np.cos(x.values))
    return _make(np.sin(x.values), "sin", (x,), bw)


def sqrt(x) -> DiffTensor:
    """Elementwise square root; inputs must stay strictly positive for a
    finite gradient (callers add an epsilon where zero is reachable)."""
    x = _as_tensor(x)
    y = np.sqrt(x.values)

    def bw(g):
        _accum(x, g / (2.0 * y))
    return _make(y, "sqrt", (x,), bw)


def exp(x) -> DiffTensor:
    x = _as_tensor(x)
    y = np.exp(x.values)

    def bw(g):
        _accum(x, g * y)
    return _make(y, "exp", (x,), bw)


# ---------------------------------------------------------------------------
# reductions, normalizations, shape ops
# ---------------------------------------------------------------------------

def _check_axis(x: DiffTensor, axis: int) -> int:
    if not -x.values.ndim <= axis < x.values.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.values.ndim


def reduce_sum(x, axis=None) -> DiffTensor:
    x = _as_tensor(x)
    if axis is None:
        def bw(g):
            _accum(x, np.broadcast_to(g, x.values.shape).copy())
        return _make(x.values.sum(), "sum", (x,), bw)
    axis = _check_axis(x, axis)

    def bw(g):
        _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.values.shape).copy())
    return _make(x.values.sum(axis=axis), "sum", (x,), bw)


def reduce_mean(x, axis=None) -> DiffTensor:
    x = _as_tensor(x)
    if axis is None:
        n = x.values.size

        def bw(g):
            _accum(x, np.broadcast_to(g / n, x.values.shape).copy())
        return _make(x.values.mean(), "mean", (x,), bw)
    axis = _check_axis(x, axis)
    n = x.values.shape[axis]

    def bw(g):
        _accum(x, np.broadcast_to(np.expand_dims(g / n, axis), x.values.shape).copy())
    return _make(x.values.mean(axis=axis), "mean", (x,), bw)


def softmax(x, axis: int = -1) -> DiffTensor:
    """Numerically stable softmax along one axis (max-subtraction)."""
    x = _as_tensor(x)
    axis = _check_axis(x, axis)
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))
    return _make(y, "softmax", (x,), bw)


def layer_norm(x, gain, bias, axis: int = -1, eps: float = 1e-5) -> DiffTensor:
    """Normalize along ``axis`` (population variance), then apply a learned
    per-feature affine. ``gain`` and ``bias`` are 1-D of length x.shape[axis]."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    axis = _check_axis(x, axis)
    nf = x.values.shape[axis]
    if gain.shape != (nf,) or bias.shape != (nf,):
        raise ShapeError(
            f"layer_norm: gain/bias must be ({nf},), got {gain.shape}/{bias.shape}")
    rs = [1] * x.values.ndim
    rs[axis] = nf
    mu = x.values.mean(axis=axis, keepdims=True)
    var = ((x.values - mu) ** 2).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mu) * inv
    y = xhat * gain.values.reshape(rs) + bias.values.reshape(rs)
    reduce_axes = tuple(i for i in range(x.values.ndim) if i != axis)

    def bw(g):
        _accum(gain, (g * xhat).sum(axis=reduce_axes))
        _accum(bias, g.sum(axis=reduce_axes))
        if x.requires_grad:
            dxhat = g * gain.values.reshape(rs)
            term = (dxhat - dxhat.mean(axis=axis, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True))
            _accum(x, term * inv)
    return _make(y, "layer_norm", (x, gain, bias), bw)


def reshape(x, shape) -> DiffTensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.values.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")

    def bw(g):
        _accum(x, g.reshape(x.values.shape))
    return _make(x.values.reshape(shape), "reshape", (x,), bw)


def transpose(x, axes=None) -> DiffTensor:
    x = _as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.values.ndim)))
    axes = tuple(axes)
    inv = np.argsort(axes)

    def bw(g):
        _accum(x, g.transpose(inv))
    return _make(x.values.transpose(axes), "transpose", (x,), bw)


def concat(tensors, axis: int = 0) -> DiffTensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    axis = _check_axis(tensors[0], axis)
    sizes = [t.values.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])
    return _make(np.concatenate([t.values for t in tensors], axis=axis),
                 "concat", tuple(tensors), bw)


def slice_axis(x, axis: int, start: int, stop: int) -> DiffTensor:
    x = _as_tensor(x)
    axis = _check_axis(x, axis)
    n = x.values.shape[axis]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice_axis: [{start}:{stop}] invalid for axis of size {n}")
    idx = [slice(None)] * x.values.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        gx = np.zeros_like(x.values)
        gx[idx] = g
        _accum(x, gx)
    return _make(x.values[idx].copy(), "slice", (x,), bw)
