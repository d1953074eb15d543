"""Dense tensor operations.

Tensors are plain numpy arrays (row-major, explicit shape).  Precision is a
run-wide switch: float64 for correctness and gradient checks, float32 allowed
for training speed.  Binary operations never broadcast implicitly; the only
broadcast is a per-channel bias added along the last axis.

Convolution states are channels-last, ``[..., w, n, m]``, and kernel banks
are ``[k_w, k_h, m_in, m_out]``.
"""

from contextlib import contextmanager

import numpy as np

from ._backend import kernels

_DTYPES = {"float64": np.float64, "float32": np.float32}
_precision = "float64"


class NonFiniteError(ValueError, FloatingPointError):
    """A NaN reached an operation that cannot give a meaningful result for it."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def set_precision(name):
    global _precision
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _precision = name


def get_precision():
    return _precision


def get_dtype():
    return _DTYPES[_precision]


@contextmanager
def precision(name):
    previous = _precision
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


def tensor(data, shape=None):
    """Build a tensor in the current precision, optionally reshaping flat data."""
    arr = np.array(data, dtype=get_dtype())
    if shape is not None:
        shape = tuple(int(d) for d in shape)
        if any(d <= 0 for d in shape):
            raise ShapeError(f"dimensions must be positive, got {shape}")
        if int(np.prod(shape)) != arr.size:
            raise ShapeError(f"{arr.size} values cannot fill shape {shape}")
        arr = arr.reshape(shape)
    return arr


def zeros(shape):
    return np.zeros(shape, dtype=get_dtype())


def check_kernel_bank(kernel, channels=None):
    """Validate a ``[k_w, k_h, m_in, m_out]`` kernel bank with odd spatial size."""
    if kernel.ndim != 4:
        raise ShapeError(f"kernel bank must be 4-D, got shape {kernel.shape}")
    kw, kh, cin, _ = kernel.shape
    if kw % 2 == 0 or kh % 2 == 0:
        raise ShapeError(f"kernel width and height must be odd, got {kw}x{kh}")
    if channels is not None and cin != channels:
        raise ShapeError(f"kernel expects {cin} input channels, state has {channels}")


def _as_batch(s):
    if s.ndim < 3:
        raise ShapeError(f"state must be at least [w, n, m], got shape {s.shape}")
    lead = s.shape[:-3]
    return s.reshape((-1,) + s.shape[-3:]), lead


def conv_same(kernel, s):
    """Stride-1 convolution with zero padding on both sides; output shape equals input shape.

    ``out[x, y, i] = sum_{u, v, c} s[x + u, y + v, c] * kernel[u, v, c, i]`` with taps
    centred on the kernel and out-of-range reads taken as 0.  Leading batch
    dimensions of ``s`` are carried through.
    """
    check_kernel_bank(kernel, s.shape[-1])
    batch, lead = _as_batch(np.ascontiguousarray(s))
    out = kernels.conv_forward(batch, np.ascontiguousarray(kernel, dtype=s.dtype))
    return out.reshape(lead + out.shape[1:])


def conv_same_grad_input(kernel, grad_out):
    batch, lead = _as_batch(np.ascontiguousarray(grad_out))
    out = kernels.conv_grad_input(batch, np.asarray(kernel, dtype=grad_out.dtype))
    return out.reshape(lead + out.shape[1:])


def conv_same_grad_kernel(s, grad_out, kernel_shape):
    s_batch, _ = _as_batch(np.ascontiguousarray(s))
    g_batch, _ = _as_batch(np.ascontiguousarray(grad_out))
    return kernels.conv_grad_kernel(s_batch, g_batch, kernel_shape)


def conv_same_reference(kernel, s):
    """Loop-nest convolution; the summation order the fast kernels reproduce exactly."""
    check_kernel_bank(kernel, s.shape[-1])
    kw, kh, cin, cout = kernel.shape
    hw, hh = kw // 2, kh // 2
    batch, lead = _as_batch(s)
    nb, nw, nn, _ = batch.shape
    out = np.zeros((nb, nw, nn, cout), dtype=s.dtype)
    for b in range(nb):
        for x in range(nw):
            for y in range(nn):
                for i in range(cout):
                    acc = s.dtype.type(0)
                    for u in range(kw):
                        xs = x + u - hw
                        if not 0 <= xs < nw:
                            continue
                        for v in range(kh):
                            ys = y + v - hh
                            if not 0 <= ys < nn:
                                continue
                            for c in range(cin):
                                acc += batch[b, xs, ys, c] * kernel[u, v, c, i]
                    out[b, x, y, i] = acc
    return out.reshape(lead + out.shape[1:])


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul takes 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x):
    # the tanh form never overflows and avoids masked indexing
    half = x.dtype.type(0.5) if isinstance(x, np.ndarray) else 0.5
    return half + half * np.tanh(half * x)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no implicit broadcasting)")


_UNARY = {"sigmoid": sigmoid, "tanh": np.tanh}
_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(op, *args):
    """Apply ``add``, ``sub``, ``mul``, ``sigmoid`` or ``tanh`` pointwise."""
    if op in _UNARY:
        (x,) = args
        return _UNARY[op](x)
    if op in _BINARY:
        a, b = args
        _same_shape(op, a, b)
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def add_bias(x, bias):
    """Add a per-channel bias along the last dimension."""
    if bias.ndim != 1 or bias.shape[0] != x.shape[-1]:
        raise ShapeError(f"bias of shape {bias.shape} does not match last dim of {x.shape}")
    return x + bias


def softmax(logits):
    if np.isnan(logits).any():
        raise NonFiniteError("softmax received NaN logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    if np.isnan(logits).any():
        raise NonFiniteError("log_softmax received NaN logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_column(s, k):
    if s.ndim < 3:
        raise ShapeError(f"state must be at least [w, n, m], got shape {s.shape}")
    n = s.shape[-2]
    if not 0 <= k < n:
        raise IndexError(f"column {k} out of range for memory length {n}")


def slice_column(s, k):
    """Return a copy of ``s[..., 0, k, :]``."""
    _check_column(s, k)
    return s[..., 0, k, :].copy()


def write_column(s, k, vec):
    """Overwrite ``s[..., 0, k, :]`` in place with ``vec``."""
    _check_column(s, k)
    vec = np.asarray(vec)
    if vec.shape != s[..., 0, k, :].shape:
        raise ShapeError(f"cannot write {vec.shape} into column of shape {s[..., 0, k, :].shape}")
    s[..., 0, k, :] = vec
    return s
