"""Tape-based reverse-mode differentiation over numpy arrays.

Every operation on a :class:`Var` that needs a gradient records a node with a
monotonically increasing id, so creation order is a valid topological order
of the graph.  :func:`backward` replays the recorded nodes from the loss in
reverse id order, looking up each node's rule in :data:`VJPS` by its op tag.
Keeping the rules in a registry lets tests swap one out to make sure
:func:`gradcheck` catches it.
"""

import itertools
from contextlib import contextmanager

import numpy as np

from . import tensor as T

_ids = itertools.count()
_grad_enabled = True

VJPS = {}


def vjp(op):
    def register(fn):
        VJPS[op] = fn
        return fn
    return register


@contextmanager
def no_grad():
    """Evaluate without recording nodes (inference and finite-difference probes)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Var:
    """A value in the graph: the array, the op that produced it, and its parents."""

    __slots__ = ("value", "parents", "op", "ctx", "grad", "requires_grad", "id")

    def __init__(self, value, requires_grad=False, op="leaf", parents=(), ctx=None):
        self.value = value
        self.requires_grad = requires_grad
        self.op = op
        self.parents = parents
        self.ctx = ctx
        self.grad = None
        self.id = next(_ids)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


def as_var(x):
    return x if isinstance(x, Var) else Var(np.asarray(x))


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


def _make(value, op, parents, ctx=None):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Var(value, requires_grad=True, op=op, parents=parents, ctx=ctx)
    return Var(value)


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf that requires grad."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    reachable = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node.id in reachable:
            continue
        reachable[node.id] = node
        stack.extend(p for p in node.parents if p.requires_grad)

    grads = {loss.id: np.ones_like(loss.value)}
    for node_id in sorted(reachable, reverse=True):
        node = reachable[node_id]
        g = grads.pop(node_id, None)
        if g is None:
            continue
        if not node.parents:
            if node.grad is None:
                node.grad = np.zeros_like(node.value)
            node.grad += g
            continue
        parent_grads = VJPS[node.op](node, g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise FloatingPointError(f"non-finite gradient in backward of op {node.op!r}")
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg


class ParameterStore:
    """Ordered, uniquely named collection of trainable arrays."""

    def __init__(self, items=()):
        self._tensors = {}
        for name, value in items:
            self.add(name, value)

    def add(self, name, value):
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._tensors[name] = value
        return value

    def __getitem__(self, name):
        return self._tensors[name]

    def __setitem__(self, name, value):
        if name not in self._tensors:
            raise KeyError(f"unknown parameter {name!r}")
        if value.shape != self._tensors[name].shape:
            raise T.ShapeError(f"{name}: shape {value.shape} != {self._tensors[name].shape}")
        self._tensors[name] = value

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def count(self):
        return sum(v.size for v in self._tensors.values())

    def copy(self):
        return ParameterStore((k, v.copy()) for k, v in self._tensors.items())

    def astype(self, dtype):
        return ParameterStore((k, v.astype(dtype)) for k, v in self._tensors.items())

    def as_vars(self):
        return {k: Var(v, requires_grad=True) for k, v in self._tensors.items()}


# -- elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = as_var(a), as_var(b)
    return _make(T.elementwise("add", a.value, b.value), "add", (a, b))


@vjp("add")
def _add_vjp(node, g):
    return g, g


def sub(a, b):
    a, b = as_var(a), as_var(b)
    return _make(T.elementwise("sub", a.value, b.value), "sub", (a, b))


@vjp("sub")
def _sub_vjp(node, g):
    return g, -g


def mul(a, b):
    a, b = as_var(a), as_var(b)
    return _make(T.elementwise("mul", a.value, b.value), "mul", (a, b))


@vjp("mul")
def _mul_vjp(node, g):
    a, b = node.parents
    return g * b.value, g * a.value


def neg(a):
    a = as_var(a)
    return _make(-a.value, "neg", (a,))


@vjp("neg")
def _neg_vjp(node, g):
    return (-g,)


def one_minus(a):
    a = as_var(a)
    return _make(1.0 - a.value, "one_minus", (a,))


@vjp("one_minus")
def _one_minus_vjp(node, g):
    return (-g,)


def scale(a, c):
    a = as_var(a)
    return _make(a.value * c, "scale", (a,), ctx=c)


@vjp("scale")
def _scale_vjp(node, g):
    return (g * node.ctx,)


def mul_const(a, c):
    """Multiply by a constant array of the same shape (masks, dropout)."""
    a = as_var(a)
    c = np.asarray(c, dtype=a.value.dtype)
    if c.shape != a.value.shape:
        raise T.ShapeError(f"mul_const: shapes {a.value.shape} and {c.shape} differ")
    return _make(a.value * c, "mul_const", (a,), ctx=c)


@vjp("mul_const")
def _mul_const_vjp(node, g):
    return (g * node.ctx,)


def sigmoid(a):
    a = as_var(a)
    return _make(T.sigmoid(a.value), "sigmoid", (a,))


@vjp("sigmoid")
def _sigmoid_vjp(node, g):
    y = node.value
    return (g * y * (1.0 - y),)


def tanh(a):
    a = as_var(a)
    return _make(np.tanh(a.value), "tanh", (a,))


@vjp("tanh")
def _tanh_vjp(node, g):
    y = node.value
    return (g * (1.0 - y * y),)


def square(a):
    a = as_var(a)
    return _make(a.value * a.value, "square", (a,))


@vjp("square")
def _square_vjp(node, g):
    return (2.0 * g * node.parents[0].value,)


def add_bias(x, bias):
    x, bias = as_var(x), as_var(bias)
    return _make(T.add_bias(x.value, bias.value), "add_bias", (x, bias))


@vjp("add_bias")
def _add_bias_vjp(node, g):
    return g, g.reshape(-1, g.shape[-1]).sum(axis=0)


# -- linear algebra ------------------------------------------------------------

def conv(kernel, s):
    kernel, s = as_var(kernel), as_var(s)
    return _make(T.conv_same(kernel.value, s.value), "conv", (kernel, s))


@vjp("conv")
def _conv_vjp(node, g):
    kernel, s = node.parents
    gk = T.conv_same_grad_kernel(s.value, g, kernel.value.shape) if kernel.requires_grad else None
    gs = T.conv_same_grad_input(kernel.value, g) if s.requires_grad else None
    return gk, gs


def matmul(x, w):
    """``x[..., q] @ w[q, r]``; leading dimensions of ``x`` are batch dimensions."""
    x, w = as_var(x), as_var(w)
    if w.value.ndim != 2 or x.value.shape[-1] != w.value.shape[0]:
        raise T.ShapeError(f"matmul: cannot multiply {x.value.shape} by {w.value.shape}")
    return _make(x.value @ w.value, "matmul", (x, w))


@vjp("matmul")
def _matmul_vjp(node, g):
    x, w = node.parents
    gx = g @ w.value.T if x.requires_grad else None
    gw = None
    if w.requires_grad:
        gw = x.value.reshape(-1, x.value.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    return gx, gw


def transpose(w):
    w = as_var(w)
    if w.value.ndim != 2:
        raise T.ShapeError(f"transpose takes a 2-D tensor, got {w.value.shape}")
    return _make(w.value.T, "transpose", (w,))


@vjp("transpose")
def _transpose_vjp(node, g):
    return (g.T,)


# -- shape manipulation --------------------------------------------------------

def concat(xs, axis=-1):
    xs = tuple(as_var(x) for x in xs)
    value = np.concatenate([x.value for x in xs], axis=axis)
    sizes = [x.value.shape[axis] for x in xs]
    return _make(value, "concat", xs, ctx=(axis, sizes))


@vjp("concat")
def _concat_vjp(node, g):
    axis, sizes = node.ctx
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def slice_last(x, start, stop):
    x = as_var(x)
    return _make(x.value[..., start:stop], "slice_last", (x,), ctx=(start, stop))


@vjp("slice_last")
def _slice_last_vjp(node, g):
    start, stop = node.ctx
    out = np.zeros_like(node.parents[0].value)
    out[..., start:stop] = g
    return (out,)


def reshape(x, shape):
    x = as_var(x)
    return _make(x.value.reshape(shape), "reshape", (x,))


@vjp("reshape")
def _reshape_vjp(node, g):
    return (g.reshape(node.parents[0].value.shape),)


def gather(table, ids):
    """Rows of ``table[V, m]`` selected by integer ``ids`` of any shape."""
    table = as_var(table)
    ids = np.asarray(ids)
    vocab = table.value.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range for vocabulary of size {vocab}")
    return _make(table.value[ids], "gather", (table,), ctx=ids)


@vjp("gather")
def _gather_vjp(node, g):
    out = np.zeros_like(node.parents[0].value)
    np.add.at(out, node.ctx.reshape(-1), g.reshape(-1, g.shape[-1]))
    return (out,)


def place_first_row(x, width):
    """Embed ``x[..., n, m]`` as row 0 of a zero state ``[..., width, n, m]``."""
    x = as_var(x)
    shape = x.value.shape[:-2] + (width,) + x.value.shape[-2:]
    out = np.zeros(shape, dtype=x.value.dtype)
    out[..., 0, :, :] = x.value
    return _make(out, "place_first_row", (x,))


@vjp("place_first_row")
def _place_first_row_vjp(node, g):
    return (g[..., 0, :, :],)


def first_row(s):
    """``s[..., 0, :, :]``: the first column of the state, one vector per position."""
    s = as_var(s)
    return _make(s.value[..., 0, :, :], "first_row", (s,))


@vjp("first_row")
def _first_row_vjp(node, g):
    out = np.zeros_like(node.parents[0].value)
    out[..., 0, :, :] = g
    return (out,)


def column(s, k):
    """``s[..., 0, k, :]``."""
    s = as_var(s)
    T._check_column(s.value, k)
    return _make(s.value[..., 0, k, :], "column", (s,), ctx=k)


@vjp("column")
def _column_vjp(node, g):
    out = np.zeros_like(node.parents[0].value)
    out[..., 0, node.ctx, :] = g
    return (out,)


def write_column(s, k, vec):
    """Copy of ``s`` with ``s[..., 0, k, :]`` replaced by ``vec``."""
    s, vec = as_var(s), as_var(vec)
    T._check_column(s.value, k)
    out = s.value.copy()
    out[..., 0, k, :] = vec.value
    return _make(out, "write_column", (s, vec), ctx=k)


@vjp("write_column")
def _write_column_vjp(node, g):
    k = node.ctx
    gs = g.copy()
    gs[..., 0, k, :] = 0.0
    return gs, g[..., 0, k, :]


def add_rows(x, y):
    """``x[..., n, a] + y[..., None, a]``: explicit broadcast of ``y`` over rows."""
    x, y = as_var(x), as_var(y)
    if x.value.shape[:-2] + x.value.shape[-1:] != y.value.shape:
        raise T.ShapeError(f"add_rows: {y.value.shape} does not match rows of {x.value.shape}")
    return _make(x.value + y.value[..., None, :], "add_rows", (x, y))


@vjp("add_rows")
def _add_rows_vjp(node, g):
    return g, g.sum(axis=-2)


def stack(xs, axis=0):
    xs = tuple(as_var(x) for x in xs)
    return _make(np.stack([x.value for x in xs], axis=axis), "stack", xs, ctx=axis)


@vjp("stack")
def _stack_vjp(node, g):
    axis = node.ctx
    return tuple(np.moveaxis(g, axis, 0))


def select(x, index, axis):
    """``x`` indexed at ``index`` along ``axis`` (that axis is dropped)."""
    x = as_var(x)
    size = x.value.shape[axis]
    if not 0 <= index < size:
        raise IndexError(f"index {index} out of range for axis of size {size}")
    return _make(np.take(x.value, index, axis=axis), "select", (x,), ctx=(index, axis))


@vjp("select")
def _select_vjp(node, g):
    index, axis = node.ctx
    out = np.zeros_like(node.parents[0].value)
    view = np.moveaxis(out, axis, 0)
    view[index] = g
    return (out,)


# -- reductions and losses -------------------------------------------------------

def reduce_sum(x):
    x = as_var(x)
    return _make(np.asarray(x.value.sum()), "sum", (x,))


@vjp("sum")
def _sum_vjp(node, g):
    return (np.full_like(node.parents[0].value, g),)


def softmax(x, mask=None):
    """Softmax over the last axis; entries where ``mask`` is 0 get probability 0."""
    x = as_var(x)
    v = x.value
    if mask is not None:
        v = np.where(mask > 0, v, -np.inf)
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    return _make(p, "softmax", (x,))


@vjp("softmax")
def _softmax_vjp(node, g):
    p = node.value
    return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)


def weighted_sum(weights, rows):
    """``sum_j weights[..., j] * rows[..., j, :]``."""
    weights, rows = as_var(weights), as_var(rows)
    value = np.einsum("...j,...jh->...h", weights.value, rows.value)
    return _make(value, "weighted_sum", (weights, rows))


@vjp("weighted_sum")
def _weighted_sum_vjp(node, g):
    weights, rows = node.parents
    gw = np.einsum("...h,...jh->...j", g, rows.value)
    gr = weights.value[..., :, None] * g[..., None, :]
    return gw, gr


def cross_entropy(logits, targets, weights):
    """Weighted mean of ``-log softmax(logits)[target]``.

    ``weights`` is 1 at scored positions and 0 at masked ones; the mean is over
    the total weight.
    """
    logits = as_var(logits)
    targets = np.asarray(targets)
    weights = np.asarray(weights, dtype=logits.value.dtype)
    vocab = logits.value.shape[-1]
    scored = targets[weights > 0]
    if scored.size and (scored.min() < 0 or scored.max() >= vocab):
        raise IndexError(f"target id out of range for output vocabulary of size {vocab}")
    total = weights.sum()
    if total <= 0:
        raise ValueError("cross_entropy needs at least one scored position")
    logp = T.log_softmax(logits.value)
    safe = np.where(weights > 0, targets, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * weights).sum() / total
    return _make(np.asarray(loss), "cross_entropy", (logits,), ctx=(logp, safe, weights, total))


@vjp("cross_entropy")
def _cross_entropy_vjp(node, g):
    logp, safe, weights, total = node.ctx
    grad = np.exp(logp)
    np.put_along_axis(grad, safe[..., None], np.take_along_axis(grad, safe[..., None], -1) - 1.0, -1)
    return (grad * (weights / total * g)[..., None],)


# -- gradient checking ---------------------------------------------------------

def numeric_gradient(f, point, name, eps=1e-5, coords=None):
    """Central differences of ``f`` w.r.t. ``point[name]`` at the given flat coordinates."""
    base = point[name]
    coords = range(base.size) if coords is None else coords
    out = {}
    for idx in coords:
        probes = []
        for sign in (1.0, -1.0):
            shifted = base.copy()
            shifted.flat[idx] += sign * eps
            args = dict(point)
            args[name] = shifted
            with no_grad():
                val = float(f({k: Var(v) for k, v in args.items()}).value)
            if not np.isfinite(val):
                raise FloatingPointError(f"f is not finite when probing {name}[{idx}]")
            probes.append(val)
        out[idx] = (probes[0] - probes[1]) / (2 * eps)
    return out


def gradcheck_report(f, point, eps=1e-5, max_coords=None, seed=0):
    """Per-tensor max relative error between backward and central differences.

    The error at a coordinate is ``|a - n| / max(1, |a|, |n|)``.  With
    ``max_coords`` only a random subset of each tensor's coordinates is probed.
    """
    if T.get_precision() != "float64":
        raise RuntimeError("gradcheck requires float64 precision")
    point = {k: np.asarray(v, dtype=np.float64) for k, v in point.items()}
    variables = {k: Var(v.copy(), requires_grad=True) for k, v in point.items()}
    loss = f(variables)
    if not np.isfinite(loss.value).all():
        raise FloatingPointError("f is not finite at the check point")
    backward(loss)
    rng = np.random.default_rng(seed)
    report = {}
    for name, var in variables.items():
        analytic = var.grad if var.grad is not None else np.zeros_like(var.value)
        size = var.value.size
        coords = None
        if max_coords is not None and size > max_coords:
            coords = sorted(rng.choice(size, size=max_coords, replace=False).tolist())
        numeric = numeric_gradient(f, point, name, eps, coords)
        worst = 0.0
        for idx, num in numeric.items():
            a = analytic.flat[idx]
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
        report[name] = worst
    return report


def gradcheck(f, point, eps=1e-5, max_coords=None, seed=0):
    """Max relative error over all probed coordinates of all tensors in ``point``."""
    report = gradcheck_report(f, point, eps, max_coords, seed)
    return max(report.values(), default=0.0)
