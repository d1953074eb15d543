"""Neural GPU, Markovian Neural GPU, Extended Neural GPU and an attention baseline.

All four variants share one interface: :func:`start` encodes a batch of
inputs into a decoder state and :func:`step` produces the logits for output
position ``j`` given the previous output symbol.  The teacher-forced
:func:`forward` is that same loop with ground-truth previous symbols, so the
decoders in :mod:`neuralgpu.decode` see exactly the logits training saw.

Indexing is 0-based throughout: output ``j`` is read from column ``j`` of the
state after decoder step ``j + 1``, and the output tape holds the embedding of
output ``j`` in column ``j``.
"""

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ad
from . import nn
from . import tensor as T

VARIANTS = ("baseline", "markovian", "extended", "attention")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "extended"
    layers: int = 2
    width: int = 4
    channels: int = 32
    kernel_w: int = 3
    kernel_h: int = 3
    vocab_in: int = 2
    vocab_out: int = 2
    precision: str = "float64"
    dropout: float = 0.0
    output_init: str = "uniform"
    embed_scale: float = 4.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("layers", "width", "channels", "vocab_in", "vocab_out"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.kernel_w % 2 == 0 or self.kernel_h % 2 == 0:
            raise ValueError("kernel width and height must be odd")
        if self.output_init not in ("zero", "uniform"):
            raise ValueError(f"output_init must be 'zero' or 'uniform', got {self.output_init!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def go(self):
        """Row of the output embedding used as the previous symbol at position 0."""
        return self.vocab_out

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def to_dict(self):
        return asdict(self)

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Batch:
    """Padded batch: ``inputs``/``input_mask`` and ``targets``/``weights`` are ``[B, n]``."""

    inputs: np.ndarray
    input_mask: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    @property
    def size(self):
        return self.inputs.shape[0]

    @property
    def memory(self):
        return self.inputs.shape[1]


def make_batch(inputs, targets=None, eos=None, memory=None):
    """Pad token sequences into a :class:`Batch`.

    ``eos`` (if given) is appended to every target and scored.  The memory
    length is the longest input or (EOS-extended) target unless ``memory`` is
    given.  Targets may be omitted for decoding.
    """
    if targets is None:
        targets = [[] for _ in inputs]
    targets = [list(t) + ([eos] if eos is not None else []) for t in targets]
    longest = max(max(len(i) for i in inputs), max(len(t) for t in targets))
    n = longest if memory is None else memory
    if n < longest:
        raise T.ShapeError(f"memory {n} cannot hold sequences of length {longest}")
    b = len(inputs)
    ins = np.zeros((b, n), dtype=np.int64)
    in_mask = np.zeros((b, n))
    tgt = np.zeros((b, n), dtype=np.int64)
    weights = np.zeros((b, n))
    for row, (i, t) in enumerate(zip(inputs, targets)):
        ins[row, :len(i)] = i
        in_mask[row, :len(i)] = 1.0
        tgt[row, :len(t)] = t
        weights[row, :len(t)] = 1.0
    return Batch(ins, in_mask, tgt, weights)


# -- parameters ----------------------------------------------------------------

def parameter_shapes(config):
    """Name -> shape for every trainable tensor, in store order."""
    c = config
    m, kw, kh = c.channels, c.kernel_w, c.kernel_h
    shapes = {}
    if c.variant == "attention":
        shapes["embed"] = (c.vocab_in, m)
        shapes["enc.input"] = (m, 3 * m)
        shapes["enc.hidden"] = (m, 3 * m)
        shapes["enc.bias"] = (3 * m,)
        shapes["out_embed"] = (c.vocab_out + 1, m)
        shapes["att.state"] = (m, m)
        shapes["att.memory"] = (m, m)
        shapes["att.score"] = (m, 1)
        shapes["dec.input"] = (2 * m, 3 * m)
        shapes["dec.hidden"] = (m, 3 * m)
        shapes["dec.bias"] = (3 * m,)
        shapes["output"] = (c.vocab_out, 2 * m)
        return shapes
    shapes["embed"] = (c.vocab_in, m)
    parts = nn.CGRU_PARTS
    for layer in range(c.layers):
        for name in parts:
            shapes[f"enc.{layer}.{name}"] = (m,) if name.endswith("bias") else (kw, kh, m, m)
    if c.variant == "markovian":
        shapes["out_embed"] = (c.vocab_out + 1, m)
        shapes["output"] = (c.vocab_out, 2 * m)
    elif c.variant == "extended":
        for layer in range(c.layers):
            for name in parts[:3] + nn.TAPE_PARTS + parts[3:]:
                shapes[f"dec.{layer}.{name}"] = (m,) if name.endswith("bias") else (kw, kh, m, m)
        shapes["out_embed"] = (c.vocab_out, m)
        shapes["output"] = (c.vocab_out, m)
    else:
        shapes["output"] = (c.vocab_out, m)
    return shapes


def parameter_count(config):
    """Closed-form count of trainable scalars."""
    c = config
    m, k = c.channels, c.kernel_w * c.kernel_h
    v_in, v_out = c.vocab_in, c.vocab_out
    if c.variant == "attention":
        return (v_in * m + 2 * 3 * m * m + 3 * m + (v_out + 1) * m + 2 * m * m + m
                + 6 * m * m + 3 * m * m + 3 * m + 2 * m * v_out)
    cgru = 3 * k * m * m + 3 * m
    total = v_in * m + c.layers * cgru
    if c.variant == "baseline":
        return total + v_out * m
    if c.variant == "markovian":
        return total + (v_out + 1) * m + 2 * m * v_out
    return total + c.layers * (cgru + 3 * k * m * m) + v_out * m + v_out * m


def init_params(config, seed=0):
    """Fresh :class:`~neuralgpu.autograd.ParameterStore` for ``config``.

    Kernel banks are uniform in +-1/sqrt(k_w k_h m), biases zero except the
    update-gate bias (+1).  Embedding entries are normal with standard
    deviation ``embed_scale``: large inputs push the gates out of their
    near-linear range, without which parity-like targets never leave the
    ln 2 plateau.  The output matrix is uniform in +-1/sqrt(fan-in), or zero
    (exactly uniform logits) with ``output_init="zero"``.
    """
    rng = np.random.default_rng(seed)
    dtype = config.dtype
    c = config
    m = c.channels
    params = ad.ParameterStore()
    if c.variant == "attention":
        bound = 1.0 / np.sqrt(m)
        for name, shape in parameter_shapes(c).items():
            if name in ("embed", "out_embed"):
                params.add(name, (rng.standard_normal(shape) * bound).astype(dtype))
            elif name.endswith("bias"):
                params.add(name, np.zeros(shape, dtype))
            elif name == "output" and c.output_init == "zero":
                params.add(name, np.zeros(shape, dtype))
            else:
                fan_in = shape[0]
                b = 1.0 / np.sqrt(fan_in)
                params.add(name, rng.uniform(-b, b, shape).astype(dtype))
        return params

    params.add("embed", (c.embed_scale * rng.standard_normal((c.vocab_in, m))).astype(dtype))
    for layer in range(c.layers):
        nn.init_cgru(params, f"enc.{layer}", c.kernel_w, c.kernel_h, m, rng, dtype)
    if c.variant == "extended":
        for layer in range(c.layers):
            nn.init_cgru(params, f"dec.{layer}", c.kernel_w, c.kernel_h, m, rng, dtype, tape=True)
    if c.variant in ("markovian", "extended"):
        rows = c.vocab_out + 1 if c.variant == "markovian" else c.vocab_out
        params.add("out_embed", (c.embed_scale * rng.standard_normal((rows, m))).astype(dtype))
    out_shape = parameter_shapes(c)["output"]
    if c.output_init == "zero":
        params.add("output", np.zeros(out_shape, dtype))
    else:
        b = 1.0 / np.sqrt(out_shape[1])
        params.add("output", rng.uniform(-b, b, out_shape).astype(dtype))
    assert tuple(params.names()) == tuple(parameter_shapes(c))
    return params


def _as_vars(params):
    if isinstance(params, ad.ParameterStore):
        return {k: ad.Var(v) for k, v in params.items()}
    return {k: ad.as_var(v) for k, v in params.items()}


# -- encoders ------------------------------------------------------------------

def _cells(config, P, prefix, cell_type, drop):
    return [cell_type.from_params(P, f"{prefix}.{layer}", drop) for layer in range(config.layers)]


def encode(config, params, tokens, n=None, mask=None, drop=None):
    """Run ``n`` steps of the stacked CGRUs from the embedded input; returns ``s_n``."""
    P = params if _is_var_dict(params) else _as_vars(params)
    tokens = np.asarray(tokens)
    n = tokens.shape[-1] if n is None else n
    s = nn.embed_input(P["embed"], tokens, config.width, n, mask)
    cells = _cells(config, P, "enc", nn.CgruCell, drop)
    for _ in range(n):
        for cell in cells:
            s = nn.cgru_step(cell, s)
    return s


def _gru(x, h, w_in, w_hidden, bias, m):
    gx = ad.add_bias(ad.matmul(x, w_in), bias)
    gh = ad.matmul(h, w_hidden)
    z = ad.sigmoid(ad.add(ad.slice_last(gx, 0, m), ad.slice_last(gh, 0, m)))
    r = ad.sigmoid(ad.add(ad.slice_last(gx, m, 2 * m), ad.slice_last(gh, m, 2 * m)))
    c = ad.tanh(ad.add(ad.slice_last(gx, 2 * m, 3 * m), ad.mul(r, ad.slice_last(gh, 2 * m, 3 * m))))
    return ad.add(ad.mul(z, h), ad.mul(ad.one_minus(z), c))


# -- step interface --------------------------------------------------------------

def start(config, params, inputs, input_mask=None, n=None, drop=None):
    """Encode a ``[B, L]`` batch of inputs into a decoder state over ``n`` output positions."""
    P = params if _is_var_dict(params) else _as_vars(params)
    inputs = np.atleast_2d(np.asarray(inputs))
    n = inputs.shape[-1] if n is None else n
    if input_mask is None:
        input_mask = np.ones(inputs.shape)
    input_mask = np.atleast_2d(input_mask)
    if n < inputs.shape[-1]:
        raise T.ShapeError(f"memory length {n} is shorter than the input ({inputs.shape[-1]})")
    drop = drop or nn.Dropout()
    state = {"P": P, "n": n}
    if config.variant == "attention":
        return _attention_start(config, P, inputs, input_mask, n, state)
    s = encode(config, P, inputs, n, input_mask, drop)
    if config.variant == "extended":
        state["d"] = s
        state["p"] = ad.Var(np.zeros(s.value.shape, dtype=s.value.dtype))
        state["cells"] = _cells(config, P, "dec", nn.DcgruCell, drop)
    else:
        state["rows"] = ad.first_row(s)
    state["output_t"] = ad.transpose(P["output"])
    return state


def _is_var_dict(params):
    return isinstance(params, dict) and all(isinstance(v, ad.Var) for v in params.values())


def step(config, state, j, prev):
    """Logits ``[B, V_out]`` for output position ``j`` and the updated state.

    ``prev`` holds the previous output symbols (``config.go`` at ``j == 0``).
    """
    if not 0 <= j < state["n"]:
        raise IndexError(f"output position {j} outside memory of length {state['n']}")
    prev = np.atleast_1d(np.asarray(prev))
    P = state["P"]
    if config.variant == "baseline":
        return ad.matmul(ad.select(state["rows"], j, axis=-2), state["output_t"]), state
    if config.variant == "markovian":
        h = ad.select(state["rows"], j, axis=-2)
        e = ad.gather(P["out_embed"], prev)
        return ad.matmul(ad.concat([h, e]), state["output_t"]), state
    if config.variant == "extended":
        state = dict(state)
        p = state["p"]
        if j > 0:
            p = ad.write_column(p, j - 1, ad.gather(P["out_embed"], prev))
        d = state["d"]
        for cell in state["cells"]:
            d = nn.dcgru_step(cell, d, p)
        state["d"], state["p"] = d, p
        return ad.matmul(ad.column(d, j), state["output_t"]), state
    return _attention_step(config, state, prev)


def _attention_start(config, P, inputs, input_mask, n, state):
    m = config.channels
    x = ad.gather(P["embed"], inputs)
    b, length = inputs.shape
    h = ad.Var(np.zeros((b, m), dtype=x.value.dtype))
    memory = []
    for t in range(length):
        xt = ad.select(x, t, axis=1)
        h_new = _gru(xt, h, P["enc.input"], P["enc.hidden"], P["enc.bias"], m)
        keep = np.repeat(input_mask[:, t:t + 1], m, axis=1)
        h = ad.add(ad.mul_const(h_new, keep), ad.mul_const(h, 1.0 - keep))
        memory.append(h)
    state["memory"] = ad.stack(memory, axis=1)
    state["memory_keys"] = ad.matmul(state["memory"], P["att.memory"])
    state["mask"] = input_mask
    state["h"] = h
    state["output_t"] = ad.transpose(P["output"])
    return state


def attention_weights(config, state):
    """Attention distribution ``[B, L]`` of the current decoder state over the memory."""
    P = state["P"]
    b, length = state["mask"].shape
    query = ad.matmul(state["h"], P["att.state"])
    hidden = ad.tanh(ad.add_rows(state["memory_keys"], query))
    scores = ad.reshape(ad.matmul(hidden, P["att.score"]), (b, length))
    return ad.softmax(scores, mask=state["mask"])


def _attention_step(config, state, prev):
    P = state["P"]
    m = config.channels
    weights = attention_weights(config, state)
    context = ad.weighted_sum(weights, state["memory"])
    e = ad.gather(P["out_embed"], prev)
    h = _gru(ad.concat([e, context]), state["h"], P["dec.input"], P["dec.hidden"], P["dec.bias"], m)
    state = dict(state, h=h, last_weights=weights.value)
    return ad.matmul(ad.concat([h, context]), state["output_t"]), state


# -- teacher-forced forward ------------------------------------------------------------

def forward(config, params, batch, drop=None):
    """Teacher-forced logits ``[B, n, V_out]`` and the mean target negative log-likelihood."""
    if batch.targets.size and batch.weights.sum() and \
            batch.targets[batch.weights > 0].max() >= config.vocab_out:
        raise IndexError(f"target id out of range for output vocabulary of size {config.vocab_out}")
    state = start(config, params, batch.inputs, batch.input_mask, batch.memory, drop)
    prev = np.full(batch.size, config.go, dtype=np.int64)
    logits = []
    for j in range(batch.memory):
        lj, state = step(config, state, j, prev)
        logits.append(lj)
        prev = batch.targets[:, j]
    logits = ad.stack(logits, axis=1)
    loss = ad.cross_entropy(logits, batch.targets, batch.weights)
    return logits, loss


def _single(tokens, targets, n):
    return make_batch([list(tokens)], [list(targets)], memory=n)


def forward_baseline(config, params, tokens, targets, n=None):
    return forward(_checked(config, "baseline"), params, _single(tokens, targets, n))


def forward_markovian(config, params, tokens, targets, n=None):
    return forward(_checked(config, "markovian"), params, _single(tokens, targets, n))


def forward_extended(config, params, tokens, targets, n=None):
    return forward(_checked(config, "extended"), params, _single(tokens, targets, n))


def forward_attention(config, params, tokens, targets, n=None):
    return forward(_checked(config, "attention"), params, _single(tokens, targets, n))


def _checked(config, variant):
    if config.variant != variant:
        raise ValueError(f"config is for {config.variant!r}, not {variant!r}")
    return config
