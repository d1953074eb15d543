"""Greedy, length-search and beam decoding, plus evaluation metrics.

Decoders feed the model's own emitted symbols back in (as the Markovian
previous symbol or onto the Extended model's output tape).  Ties in argmax go
to the lowest symbol id.
"""

import csv
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ad
from . import models
from . import tensor as T


@dataclass
class Model:
    """A config and its parameters, the unit every decoder takes."""

    config: models.ModelConfig
    params: object
    eos: int = None


@dataclass
class DecodeResult:
    """``length`` is the memory size decoded with; ``output_length`` counts symbols before EOS."""

    tokens: list
    log_prob: float
    length: int
    position_log_probs: list = field(default_factory=list)
    output_length: int = None

    def __post_init__(self):
        if self.output_length is None:
            self.output_length = len(self.tokens)

    @property
    def log_perplexity(self):
        """Mean negative log-likelihood per emitted symbol."""
        return -self.log_prob / max(1, len(self.tokens))


def _inputs(inputs):
    inputs = np.asarray(inputs, dtype=np.int64)
    return inputs[None] if inputs.ndim == 1 else inputs


def greedy_batch(model, inputs, out_len):
    """Greedy decode of equal-length inputs ``[B, L]``; returns one result per row."""
    cfg = model.config
    inputs = _inputs(inputs)
    if out_len < 1:
        raise ValueError("out_len must be >= 1")
    b = inputs.shape[0]
    with ad.no_grad():
        state = models.start(cfg, model.params, inputs, n=out_len)
        prev = np.full(b, cfg.go, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        tokens = [[] for _ in range(b)]
        logps = [[] for _ in range(b)]
        for j in range(out_len):
            logits, state = models.step(cfg, state, j, prev)
            lp = T.log_softmax(logits.value.astype(np.float64))
            choice = np.argmax(lp, axis=-1)
            for row in np.flatnonzero(~done):
                tokens[row].append(int(choice[row]))
                logps[row].append(float(lp[row, choice[row]]))
                if model.eos is not None and choice[row] == model.eos:
                    done[row] = True
            if done.all():
                break
            prev = choice
    results = []
    for row in range(b):
        total = 0.0
        for v in logps[row]:
            total += v
        results.append(DecodeResult(tokens[row], total, out_len, logps[row],
                                    _output_length(tokens[row], model.eos)))
    return results


def greedy_decode(model, input, out_len):
    """Emit the argmax symbol at each of ``out_len`` positions, stopping early at EOS."""
    return greedy_batch(model, [list(input)], out_len)[0]


def length_search(model, input, lengths=None):
    """Greedy decode at every length in ``[|input|, 2|input|]`` and keep the best.

    "Best" is the lowest per-symbol log-perplexity; ties go to the shorter
    length.  ``lengths`` overrides the candidate range.  The returned result
    carries every candidate in ``candidates``.
    """
    if len(input) < 1:
        raise ValueError("length search needs a non-empty input")
    lengths = range(len(input), 2 * len(input) + 1) if lengths is None else lengths
    best = None
    candidates = []
    for n in lengths:
        result = greedy_decode(model, input, n)
        candidates.append(result)
        if best is None or result.log_perplexity < best.log_perplexity:
            best = result
    best.candidates = candidates
    return best


def beam_decode(model, input, out_len, beam=2):
    """Beam search scored by total log-probability (no length normalisation).

    Hypotheses that emitted EOS are kept as finished and compete on score.
    With ``beam=1`` this is exactly :func:`greedy_decode`.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    cfg = model.config
    with ad.no_grad():
        start = models.start(cfg, model.params, _inputs([list(input)]), n=out_len)
        # (score, tokens, logps, state, finished)
        hyps = [(0.0, [], [], start, False)]
        for j in range(out_len):
            expanded = []
            for score, toks, lps, state, finished in hyps:
                if finished:
                    expanded.append((score, toks, lps, state, True))
                    continue
                prev = toks[-1] if toks else cfg.go
                logits, nxt = models.step(cfg, state, j, [prev])
                lp = T.log_softmax(logits.value.astype(np.float64))[0]
                for sym in range(lp.shape[0]):
                    fin = model.eos is not None and sym == model.eos
                    expanded.append((score + float(lp[sym]), toks + [sym], lps + [float(lp[sym])],
                                     nxt, fin))
            # equal totals fall back to the step's own log-prob, then the lowest ids
            expanded.sort(key=lambda h: (-h[0], -(h[2][-1] if h[2] else 0.0), h[1]))
            hyps = expanded[:beam]
            if all(h[4] for h in hyps):
                break
    score, toks, lps, _, _ = hyps[0]
    return DecodeResult(toks, score, out_len, lps, _output_length(toks, model.eos))


def _output_length(tokens, eos):
    if eos is not None and eos in tokens:
        return tokens.index(eos)
    return len(tokens)


# -- teacher-forced metrics -------------------------------------------------------

def _batches(samples, size):
    for i in range(0, len(samples), size):
        yield samples[i:i + size]


def target_log_probs(model, samples, batch_size=64):
    """Per-sample lists of teacher-forced ``log p(target_k)`` (EOS excluded)."""
    out = []
    with ad.no_grad():
        for group in _batches(list(samples), batch_size):
            batch = models.make_batch([s.input for s in group], [s.target for s in group],
                                      eos=model.eos)
            logits, _ = models.forward(model.config, model.params, batch)
            lp = T.log_softmax(logits.value.astype(np.float64))
            picked = np.take_along_axis(lp, batch.targets[..., None], axis=-1)[..., 0]
            for row, s in enumerate(group):
                out.append(picked[row, :len(s.target)].tolist())
    return out


def per_word_perplexity(model, samples):
    """``(exp(L), L)`` with ``L`` the mean over all target symbols of ``-log p(target)``."""
    samples = list(samples)
    if not samples:
        raise ValueError("per_word_perplexity needs at least one sample")
    total, count = 0.0, 0
    for row in target_log_probs(model, samples):
        for v in row:
            total -= v
            count += 1
    if count == 0:
        raise ValueError("samples have no target symbols")
    log_ppl = total / count
    return math.exp(log_ppl), log_ppl


def decode_accuracy(model, samples, batch_size=64):
    """Greedy decode with memory equal to the input length.

    Returns ``(per_symbol, sequence, predictions)``; a prediction counts as a
    correct sequence only if it matches the target exactly (EOS stripped).
    """
    samples = list(samples)
    predictions = [None] * len(samples)
    by_length = {}
    for i, s in enumerate(samples):
        by_length.setdefault(len(s.input), []).append(i)
    for length, idx in sorted(by_length.items()):
        n = max(length, max(len(samples[i].target) + (model.eos is not None) for i in idx))
        for group in _batches(idx, batch_size):
            results = greedy_batch(model, [samples[i].input for i in group], n)
            for i, r in zip(group, results):
                toks = r.tokens
                if model.eos is not None and model.eos in toks:
                    toks = toks[:toks.index(model.eos)]
                predictions[i] = toks
    hits = symbols = seqs = 0
    for s, p in zip(samples, predictions):
        symbols += len(s.target)
        hits += sum(1 for k, t in enumerate(s.target) if k < len(p) and p[k] == t)
        seqs += p == list(s.target)
    return hits / max(1, symbols), seqs / max(1, len(samples)), predictions


# -- BLEU ------------------------------------------------------------------------------

def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(candidates, references, max_n=4):
    """Clipped n-gram matches and totals per order, candidate and reference lengths."""
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand, ref = _tokens(cand), _tokens(ref)
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            c, r = _ngrams(cand, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(k, r[g]) for g, k in c.items())
            totals[n - 1] += max(0, len(cand) - n + 1)
    return matches, totals, cand_len, ref_len


def _tokens(x):
    return x.split() if isinstance(x, str) else list(x)


def bleu(candidates, references, max_n=4):
    """Corpus BLEU in [0, 100]: geometric mean of clipped 1..4-gram precisions times brevity penalty."""
    candidates, references = list(candidates), list(references)
    if not candidates:
        raise ValueError("bleu needs at least one candidate")
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in count")
    matches, totals, c, r = bleu_stats(candidates, references, max_n)
    if c == 0:
        raise ValueError("candidate corpus is empty")
    if min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p)


# -- length buckets -------------------------------------------------------------------

@dataclass
class LengthBucketReport:
    bounds: list  # (low, high] pairs
    values: list
    counts: list
    metric: str = "metric"

    def rows(self):
        for (lo, hi), v, c in zip(self.bounds, self.values, self.counts):
            yield lo, hi, v, c

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bucket_low", "bucket_high", self.metric, "count"])
            for lo, hi, v, c in self.rows():
                w.writerow([lo, hi, "" if v is None else repr(float(v)), c])

    def plot_points(self):
        """``(length, value)`` pairs at each non-empty bucket's upper edge."""
        return [(hi, v) for lo, hi, v, c in self.rows() if c]

    def write_plot_data(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["source_length", self.metric])
            for x, y in self.plot_points():
                w.writerow([x, repr(float(y))])


def bucket_of(length, width=10):
    """Index of the half-open bucket ``(width*i, width*(i+1)]`` holding ``length`` (>= 1)."""
    if length < 1:
        raise ValueError("lengths must be >= 1")
    return (length - 1) // width


def length_bucket_report(metric, samples, lengths=None, width=10, name="metric"):
    """Apply ``metric`` (a callable over a list of samples) to each length bucket.

    Source lengths default to ``len(sample.input)``.  Buckets cover
    ``(0, width], (width, 2 width], ...`` up to the longest sample; empty
    buckets report ``None`` with count 0.
    """
    samples = list(samples)
    lengths = [len(s.input) for s in samples] if lengths is None else list(lengths)
    if not samples:
        return LengthBucketReport([], [], [], name)
    groups = {}
    for s, n in zip(samples, lengths):
        groups.setdefault(bucket_of(n, width), []).append(s)
    top = max(groups)
    bounds, values, counts = [], [], []
    for i in range(top + 1):
        group = groups.get(i, [])
        bounds.append((width * i, width * (i + 1)))
        values.append(metric(group) if group else None)
        counts.append(len(group))
    return LengthBucketReport(bounds, values, counts, name)
