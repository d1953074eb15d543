"""Convolutional gated recurrent cells, embeddings and dropout.

A CGRU updates a whole ``[w, n, m]`` state at once::

    u = sigmoid(U' * s + B')          update gate
    r = sigmoid(U'' * s + B'')        reset gate
    CGRU(s) = u . s + (1 - u) . tanh(U * (r . s) + B)

where ``*`` is :func:`neuralgpu.tensor.conv_same`.  The DCGRU adds convolutions
of an output tape ``p`` inside all three pre-activations.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ad
from . import tensor as T

CGRU_PARTS = ("candidate_kernel", "update_kernel", "reset_kernel",
              "candidate_bias", "update_bias", "reset_bias")
TAPE_PARTS = ("tape_candidate_kernel", "tape_update_kernel", "tape_reset_kernel")


@dataclass
class Dropout:
    rate: float = 0.0
    rng: np.random.Generator = None
    training: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")


def dropout(x, rate, rng=None, training=True):
    """Zero each element with probability ``rate`` and rescale survivors by ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    value = ad.value_of(x)
    keep = rng.random(value.shape) >= rate
    mask = keep.astype(value.dtype) / (1.0 - rate)
    if isinstance(x, ad.Var):
        return ad.mul_const(x, mask)
    return value * mask


@dataclass
class CgruCell:
    """Kernel banks and biases of one CGRU layer (arrays or graph variables)."""

    candidate_kernel: object
    update_kernel: object
    reset_kernel: object
    candidate_bias: object
    update_bias: object
    reset_bias: object
    dropout: Dropout = field(default_factory=Dropout)

    def __post_init__(self):
        shapes = {ad.value_of(k).shape for k in
                  (self.candidate_kernel, self.update_kernel, self.reset_kernel)}
        if len(shapes) != 1:
            raise T.ShapeError(f"CGRU kernel banks disagree in shape: {sorted(shapes)}")
        (shape,) = shapes
        T.check_kernel_bank(ad.value_of(self.candidate_kernel))
        if shape[2] != shape[3]:
            raise T.ShapeError(f"CGRU kernels must be [kw, kh, m, m], got {shape}")
        # both gates read the same state, so they share one convolution
        self._gate_kernel = ad.concat([self.update_kernel, self.reset_kernel], axis=-1)

    @property
    def channels(self):
        return ad.value_of(self.candidate_kernel).shape[-1]

    @classmethod
    def from_params(cls, params, prefix, dropout=None):
        parts = {name: params[f"{prefix}.{name}"] for name in CGRU_PARTS}
        return cls(**parts, dropout=dropout or Dropout())


@dataclass
class DcgruCell(CgruCell):
    """A CGRU layer plus the kernel banks that read the output tape."""

    tape_candidate_kernel: object = None
    tape_update_kernel: object = None
    tape_reset_kernel: object = None

    def __post_init__(self):
        super().__post_init__()
        shape = ad.value_of(self.candidate_kernel).shape
        for name in TAPE_PARTS:
            if ad.value_of(getattr(self, name)).shape != shape:
                raise T.ShapeError(f"{name} must match the U-bank shape {shape}")
        self._tape_kernel = ad.concat(
            [self.tape_candidate_kernel, self.tape_update_kernel, self.tape_reset_kernel], axis=-1)

    @classmethod
    def from_params(cls, params, prefix, dropout=None):
        parts = {name: params[f"{prefix}.{name}"] for name in CGRU_PARTS + TAPE_PARTS}
        return cls(**parts, dropout=dropout or Dropout())


def _gated_update(cell, s, gates, tape_candidate=None):
    m = cell.channels
    u = ad.sigmoid(ad.add_bias(ad.slice_last(gates, 0, m), cell.update_bias))
    r = ad.sigmoid(ad.add_bias(ad.slice_last(gates, m, 2 * m), cell.reset_bias))
    pre = ad.conv(cell.candidate_kernel, ad.mul(r, s))
    if tape_candidate is not None:
        pre = ad.add(pre, tape_candidate)
    candidate = ad.tanh(ad.add_bias(pre, cell.candidate_bias))
    d = cell.dropout
    candidate = dropout(candidate, d.rate, d.rng, d.training)
    return ad.add(ad.mul(u, s), ad.mul(ad.one_minus(u), candidate))


def cgru_step(cell, s):
    """One CGRU update of a ``[..., w, n, m]`` state."""
    s = ad.as_var(s)
    T.check_kernel_bank(ad.value_of(cell.candidate_kernel), s.value.shape[-1])
    gates = ad.conv(cell._gate_kernel, s)
    return _gated_update(cell, s, gates)


def dcgru_step(cell, s, p):
    """One DCGRU update of state ``s`` reading the output tape ``p`` (same shape)."""
    s, p = ad.as_var(s), ad.as_var(p)
    if s.value.shape != p.value.shape:
        raise T.ShapeError(f"state {s.value.shape} and tape {p.value.shape} differ")
    T.check_kernel_bank(ad.value_of(cell.candidate_kernel), s.value.shape[-1])
    m = cell.channels
    gates = ad.conv(cell._gate_kernel, s)
    tape = ad.conv(cell._tape_kernel, p)
    gates = ad.add(gates, ad.slice_last(tape, m, 3 * m))
    return _gated_update(cell, s, gates, tape_candidate=ad.slice_last(tape, 0, m))


def residual_step(kernel, s):
    """``s + kernel * s``."""
    s = ad.as_var(s)
    return ad.add(s, ad.conv(kernel, s))


def embed_input(table, tokens, width, n=None, mask=None):
    """Initial state: ``s0[..., 0, k, :] = table[tokens[k]]``, zero everywhere else.

    ``tokens`` has shape ``[L]`` or ``[B, L]``; the memory is widened to ``n``
    positions (``n >= L``).  ``mask`` marks real tokens in padded batches.
    """
    tokens = np.asarray(tokens)
    length = tokens.shape[-1]
    n = length if n is None else n
    if n < length:
        raise T.ShapeError(f"memory length {n} is shorter than the input ({length})")
    if mask is None:
        mask = np.ones(tokens.shape)
    pad = [(0, 0)] * (tokens.ndim - 1) + [(0, n - length)]
    tokens = np.pad(tokens, pad)
    mask = np.pad(np.asarray(mask, dtype=float), pad)
    rows = ad.gather(table, tokens)
    rows = ad.mul_const(rows, np.broadcast_to(mask[..., None], rows.value.shape))
    return ad.place_first_row(rows, width)


def kernel_bound(kw, kh, m):
    return 1.0 / np.sqrt(kw * kh * m)


def init_cgru(params, prefix, kw, kh, m, rng, dtype, tape=False):
    """Add one (D)CGRU layer's parameters: uniform kernels, zero biases except update bias +1."""
    bound = kernel_bound(kw, kh, m)
    names = ("candidate_kernel", "update_kernel", "reset_kernel")
    if tape:
        names += TAPE_PARTS
    for name in names:
        params.add(f"{prefix}.{name}", rng.uniform(-bound, bound, (kw, kh, m, m)).astype(dtype))
    params.add(f"{prefix}.candidate_bias", np.zeros(m, dtype))
    params.add(f"{prefix}.update_bias", np.ones(m, dtype))
    params.add(f"{prefix}.reset_bias", np.zeros(m, dtype))
