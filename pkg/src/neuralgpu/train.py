"""Teacher-forced training with Adam, global-norm clipping and a length curriculum.

Randomness is never carried as generator state: the batch for step ``t`` is
drawn from sample indices ``t * batch .. t * batch + batch - 1`` of the task
at one length chosen by a generator seeded with ``(seed, t, 1)``, and dropout
masks come from a generator seeded with ``(seed, t, 7)``.  A
checkpoint therefore only needs the step counter and curriculum state to
resume bit-identically.
"""

import csv
import io
import json
import os
import struct
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ad
from . import models
from . import nn
from . import tasks

METRIC_FIELDS = ("step", "wall_ms", "loss", "per_symbol_acc", "seq_acc", "curriculum_len")


class DivergenceError(FloatingPointError):
    """The loss or an update became non-finite."""


# -- gradient clipping and Adam ------------------------------------------------------

def global_norm(grads):
    values = grads.values() if isinstance(grads, dict) else grads
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in values)))


def clip_global_norm(grads, max_norm=1.0):
    """Scale every gradient by ``max_norm / norm`` when the joint L2 norm exceeds ``max_norm``.

    Accepts a dict or a list and returns the same kind, plus the pre-clip norm.
    """
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise DivergenceError("gradient contains NaN or inf")
    if norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    if isinstance(grads, dict):
        return {k: g * g.dtype.type(factor) for k, g in grads.items()}, norm
    return [g * g.dtype.type(factor) for g in grads], norm


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-4
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        for name, value in params.items():
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        return state

    def hyper(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(state, params, grads):
    """One bias-corrected Adam update of ``params`` (a ParameterStore or dict), in place.

    Returns ``(params, state)`` for convenience.
    """
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    updates = {}
    for name, g in grads.items():
        value = params[name]
        if g.shape != value.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {value.shape}")
        dt = value.dtype.type
        m = state.m[name] = dt(state.beta1) * state.m[name] + dt(1.0 - state.beta1) * g
        v = state.v[name] = dt(state.beta2) * state.v[name] + dt(1.0 - state.beta2) * (g * g)
        m_hat = m / dt(c1)
        v_hat = v / dt(c2)
        with np.errstate(invalid="ignore", over="ignore"):
            step = dt(state.lr) * m_hat / (np.sqrt(v_hat) + dt(state.eps))
        if not np.all(np.isfinite(step)):
            raise DivergenceError(f"non-finite Adam update for parameter {name!r} at step {t}")
        updates[name] = value - step
    for name, value in updates.items():
        params[name] = value
    return params, state


# -- checkpoints ------------------------------------------------------------------------

MAGIC = b"NGPUCKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class FingerprintError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: models.ModelConfig
    params: ad.ParameterStore
    optimizer: AdamState
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def fingerprint(self):
        return self.config.fingerprint()


def _tensor_fields(ckpt):
    yield from ((f"param/{k}", v) for k, v in ckpt.params.items())
    yield from ((f"adam_m/{k}", v) for k, v in ckpt.optimizer.m.items())
    yield from ((f"adam_v/{k}", v) for k, v in ckpt.optimizer.v.items())


def checkpoint_bytes(ckpt):
    table = []
    data = io.BytesIO()
    for name, value in _tensor_fields(ckpt):
        arr = np.ascontiguousarray(value, dtype=value.dtype.newbyteorder("<"))
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": data.tell(), "nbytes": arr.nbytes})
        data.write(arr.tobytes())
    header = {
        "config": ckpt.config.to_dict(),
        "fingerprint": ckpt.fingerprint,
        "step": ckpt.step,
        "optimizer": dict(ckpt.optimizer.hyper(), t=ckpt.optimizer.t),
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
        "fields": table,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + struct.pack("<II", VERSION, len(blob)) + blob + data.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, ckpt):
    """Write atomically (temp file then rename) plus a ``.txt`` sidecar with config and fingerprint."""
    payload = checkpoint_bytes(ckpt)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)
    lines = [f"fingerprint={ckpt.fingerprint}", f"step={ckpt.step}", f"format_version={VERSION}"]
    lines += [f"{k}={v}" for k, v in ckpt.config.to_dict().items()]
    with open(f"{path}.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path, expected_fingerprint=None):
    with open(path, "rb") as fh:
        payload = fh.read()
    return parse_checkpoint(payload, expected_fingerprint)


def parse_checkpoint(payload, expected_fingerprint=None):
    if len(payload) < len(MAGIC) + 12 or payload[:len(MAGIC)] != MAGIC:
        raise ChecksumError("not a checkpoint file (bad magic or truncated)")
    body, (crc,) = payload[:-4], struct.unpack("<I", payload[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checkpoint checksum mismatch (file corrupt or truncated)")
    version, header_len = struct.unpack("<II", body[len(MAGIC):len(MAGIC) + 8])
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads {VERSION}")
    start = len(MAGIC) + 8
    header = json.loads(body[start:start + header_len])
    data = body[start + header_len:]
    config = models.ModelConfig(**header["config"])
    if header["fingerprint"] != config.fingerprint():
        raise FingerprintError("stored fingerprint does not match the stored config")
    if expected_fingerprint is not None and header["fingerprint"] != expected_fingerprint:
        raise FingerprintError(
            f"checkpoint fingerprint {header['fingerprint']} != expected {expected_fingerprint}")
    params = ad.ParameterStore()
    opt_hyper = dict(header["optimizer"])
    t = opt_hyper.pop("t")
    optimizer = AdamState(**opt_hyper, t=t)
    for entry in header["fields"]:
        raw = data[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arr = arr.astype(arr.dtype.newbyteorder("="))
        kind, name = entry["name"].split("/", 1)
        if kind == "param":
            params.add(name, arr)
        elif kind == "adam_m":
            optimizer.m[name] = arr
        else:
            optimizer.v[name] = arr
    return Checkpoint(config, params, optimizer, header["step"], header["rng_state"], header["extra"])


# -- training loop ------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch: int = 16
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-4
    clip: float = 1.0
    curriculum_start: int = 4
    curriculum_threshold: float = 0.95
    curriculum_window: int = 20
    checkpoint_every: int = 0
    record_time: bool = False

    def to_dict(self):
        return asdict(self)


def batch_for_step(task, seed, step, size, max_length=None):
    """The training batch of ``step``: every sample shares one size drawn in ``[1, max_length]``."""
    top = task.length if max_length is None else min(max_length, task.length)
    length = int(np.random.default_rng([seed, step, 1]).integers(1, top + 1))
    samples = [tasks.sample(task, seed, step * size + i, size=length) for i in range(size)]
    return models.make_batch([s.input for s in samples], [s.target for s in samples], eos=task.eos)


def batch_metrics(logits, batch):
    """Teacher-forced per-symbol and whole-sequence accuracy of argmax predictions."""
    pred = np.argmax(logits, axis=-1)
    scored = batch.weights > 0
    hits = (pred == batch.targets) & scored
    per_symbol = hits.sum() / scored.sum()
    seq = np.mean([(hits[i] == scored[i]).all() for i in range(batch.size)])
    return float(per_symbol), float(seq)


@dataclass
class TrainResult:
    params: ad.ParameterStore
    optimizer: AdamState
    metrics: list
    step: int
    curriculum_len: int
    window: list


def _format_row(row):
    return [str(row["step"]), str(row["wall_ms"])] + [repr(float(row[k])) for k in
                                                      ("loss", "per_symbol_acc", "seq_acc")] \
        + [str(row["curriculum_len"])]


def open_metrics(path, append):
    exists = append and os.path.exists(path)
    fh = open(path, "a" if exists else "w", encoding="utf-8", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    if not exists:
        writer.writerow(METRIC_FIELDS)
    return fh, writer


def train_loop(config, task, train_config=None, params=None, resume=None, metrics_path=None,
               checkpoint_path=None, extra=None, log=None):
    """Run ``train_config.steps`` optimisation steps (counted from the resume point).

    Returns a :class:`TrainResult`.  With ``checkpoint_path`` a checkpoint is
    written every ``checkpoint_every`` steps and at the end; on divergence the
    last good checkpoint is left untouched and :class:`DivergenceError` is
    raised.
    """
    tc = train_config or TrainConfig()
    if resume is not None:
        if resume.config != config:
            raise FingerprintError("resume checkpoint was written for a different model config")
        params, optimizer = resume.params.copy(), resume.optimizer
        step = resume.step
        curriculum = resume.rng_state.get("curriculum_len", task.length)
        window = list(resume.rng_state.get("window", []))
    else:
        params = params if params is not None else models.init_params(config, tc.seed)
        optimizer = AdamState.for_params(params, lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps)
        step = 0
        curriculum = min(tc.curriculum_start, task.length) if task.has_curriculum else task.length
        window = []

    def snapshot():
        return Checkpoint(config, params.copy(), _copy_adam(optimizer), step,
                          {"seed": tc.seed, "curriculum_len": curriculum, "window": list(window)},
                          dict(extra or {}, task=task.to_dict(), train=tc.to_dict()))

    fh = writer = None
    if metrics_path:
        fh, writer = open_metrics(metrics_path, append=resume is not None)
    metrics = []
    try:
        if checkpoint_path and resume is None:
            save_checkpoint(checkpoint_path, snapshot())
        end = step + tc.steps
        while step < end:
            began = time.perf_counter()
            batch = batch_for_step(task, tc.seed, step, tc.batch, curriculum)
            drop = nn.Dropout(config.dropout, np.random.default_rng([tc.seed, step, 7]), training=True)
            variables = params.as_vars()
            try:
                logits, loss = models.forward(config, variables, batch, drop)
                loss_value = float(loss.value)
                if not np.isfinite(loss_value):
                    raise DivergenceError(f"loss became {loss_value} at step {step}")
                ad.backward(loss)
            except DivergenceError:
                raise
            except FloatingPointError as exc:
                raise DivergenceError(f"step {step}: {exc}") from exc
            grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value))
                     for k, v in variables.items()}
            grads, _ = clip_global_norm(grads, tc.clip)
            adam_step(optimizer, params, grads)
            per_symbol, seq = batch_metrics(logits.value, batch)
            row = {"step": step, "loss": loss_value, "per_symbol_acc": per_symbol, "seq_acc": seq,
                   "curriculum_len": curriculum,
                   "wall_ms": round((time.perf_counter() - began) * 1000, 3) if tc.record_time else 0}
            metrics.append(row)
            if writer:
                writer.writerow(_format_row(row))
            if log and step % 100 == 0:
                log(row)
            step += 1
            if task.has_curriculum and curriculum < task.length:
                window.append(per_symbol)
                window = window[-tc.curriculum_window:]
                if len(window) == tc.curriculum_window and np.mean(window) > tc.curriculum_threshold:
                    curriculum += 1
                    window = []
            if checkpoint_path and tc.checkpoint_every and step % tc.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, snapshot())
        if checkpoint_path:
            save_checkpoint(checkpoint_path, snapshot())
    finally:
        if fh:
            fh.close()
    return TrainResult(params, optimizer, metrics, step, curriculum, window)


def _copy_adam(state):
    return AdamState(state.lr, state.beta1, state.beta2, state.eps, state.t,
                     {k: v.copy() for k, v in state.m.items()},
                     {k: v.copy() for k, v in state.v.items()})
