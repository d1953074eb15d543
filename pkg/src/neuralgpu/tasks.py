"""Synthetic tasks with known optima, and a word/character vocabulary for text.

Every generator is a pure function of ``(spec, seed, index)``: the random
stream for sample ``index`` is seeded from both numbers, so samples can be
regenerated in any order.
"""

import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

TASKS = ("copy", "reverse", "addition", "masked_copy")


@dataclass
class TaskSample:
    input: list
    target: list
    latent: object = None


def _rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def gen_copy(length, alphabet, seed, index=0):
    if length < 1:
        raise ValueError("length must be >= 1")
    tokens = _rng(seed, index).integers(0, alphabet, length).tolist()
    return TaskSample(tokens, list(tokens))


def gen_reverse(length, alphabet, seed, index=0):
    if length < 1:
        raise ValueError("length must be >= 1")
    tokens = _rng(seed, index).integers(0, alphabet, length).tolist()
    return TaskSample(tokens, tokens[::-1])


def to_digits(value, base, width=None):
    """Digits of a non-negative integer, most significant first."""
    digits = []
    while True:
        value, d = divmod(value, base)
        digits.append(d)
        if value == 0:
            break
    if width is not None:
        if len(digits) > width:
            raise ValueError(f"value needs more than {width} digits")
        digits += [0] * (width - len(digits))
    return digits[::-1]


def from_digits(digits, base):
    value = 0
    for d in digits:
        value = value * base + d
    return value


def addition_sample(a, b, digits, base):
    """``a`` and ``b`` zero-padded to ``digits``, joined by '+' (id ``base``); target is a+b."""
    plus = base
    tokens = to_digits(a, base, digits) + [plus] + to_digits(b, base, digits)
    return TaskSample(tokens, to_digits(a + b, base), latent=(a, b))


def gen_addition(digits, base, seed, index=0):
    if base not in (2, 10):
        raise ValueError("base must be 2 or 10")
    if digits < 1:
        raise ValueError("digits must be >= 1")
    rng = _rng(seed, index)
    a, b = (int(x) for x in rng.integers(0, base ** digits, 2, dtype=np.uint64))
    return addition_sample(a, b, digits, base)


@dataclass(frozen=True)
class MaskedCopySpec:
    """Copy a bit string XOR-ed with a hidden mask that repeats with the given period."""

    period: int = 1
    length: int = 8

    def __post_init__(self):
        if self.period not in (1, 2):
            raise ValueError("period must be 1 or 2")
        if self.length < 1:
            raise ValueError("length must be >= 1")


def gen_masked_copy(spec, seed, index=0):
    rng = _rng(seed, index)
    bits = rng.integers(0, 2, spec.length)
    mask = rng.integers(0, 2, spec.period)
    target = bits ^ mask[np.arange(spec.length) % spec.period]
    return TaskSample(bits.tolist(), target.tolist(), latent=mask.tolist())


def optimal_log_perplexity(spec, model_class, n=None):
    """Best achievable per-symbol log-perplexity on masked copy for each output-dependence class.

    ``independent`` outputs see only the input, ``markov1`` also sees the
    previous output, ``full`` sees every previous output.
    """
    if not isinstance(spec, MaskedCopySpec):
        raise ValueError(f"no analytic optimum for task {spec!r}")
    n = spec.length if n is None else n
    ln2 = math.log(2.0)
    # each hidden mask bit costs ln 2 nats once it can no longer be inferred
    table = {
        (1, "independent"): ln2,
        (1, "markov1"): ln2 / n,
        (1, "full"): ln2 / n,
        (2, "independent"): ln2,
        (2, "markov1"): ln2,
        (2, "full"): min(2, n) * ln2 / n,
    }
    try:
        return table[(spec.period, model_class)]
    except KeyError:
        raise ValueError(f"unknown model class {model_class!r}") from None


# -- task specs used by training --------------------------------------------------

@dataclass(frozen=True)
class TaskSpec:
    """A task family plus its size knob.

    ``length`` is the maximum sequence length (operand digits for addition);
    ``alphabet`` is the symbol count (the base for addition); ``period`` only
    applies to masked copy, whose length is fixed.
    """

    name: str = "copy"
    length: int = 8
    alphabet: int = 16
    period: int = 1

    def __post_init__(self):
        if self.name not in TASKS:
            raise ValueError(f"unknown task {self.name!r}; expected one of {TASKS}")
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.name == "addition" and self.alphabet not in (2, 10):
            raise ValueError("addition needs alphabet (base) 2 or 10")
        if self.name == "masked_copy":
            MaskedCopySpec(self.period, self.length)

    @property
    def vocab_in(self):
        if self.name == "addition":
            return self.alphabet + 1
        return 2 if self.name == "masked_copy" else self.alphabet

    @property
    def vocab_out(self):
        """Output symbols plus EOS, which is always the last id."""
        return (2 if self.name == "masked_copy" else self.alphabet) + 1

    @property
    def eos(self):
        """Id appended to every target so decoders learn where the output stops."""
        return self.vocab_out - 1

    @property
    def has_curriculum(self):
        return self.name != "masked_copy"

    def to_dict(self):
        return asdict(self)

    def header(self, seed):
        fields = " ".join(f"{k}={v}" for k, v in self.to_dict().items())
        return f"# task {fields} seed={seed}"


def sample(spec, seed, index, max_length=None, size=None):
    """Sample ``index`` of the task.

    The size is ``size`` if given, else drawn uniformly in ``[1, max_length]``
    (``max_length`` defaults to the spec's length).  Masked copy always has the
    spec's length.
    """
    if spec.name == "masked_copy":
        return gen_masked_copy(MaskedCopySpec(spec.period, spec.length), seed, index)
    rng = _rng(seed, index)
    if size is None:
        top = spec.length if max_length is None else min(max_length, spec.length)
        size = int(rng.integers(1, top + 1))
    if spec.name == "addition":
        a, b = (int(x) for x in rng.integers(0, spec.alphabet ** size, 2, dtype=np.uint64))
        return addition_sample(a, b, size, spec.alphabet)
    tokens = rng.integers(0, spec.alphabet, size).tolist()
    return TaskSample(tokens, tokens[::-1] if spec.name == "reverse" else list(tokens))


def sample_fixed(spec, seed, index, length):
    """Sample with the size set exactly (used for length-generalisation tests)."""
    if spec.name == "masked_copy":
        return gen_masked_copy(MaskedCopySpec(spec.period, length), seed, index)
    if spec.name == "copy":
        return gen_copy(length, spec.alphabet, seed, index)
    if spec.name == "reverse":
        return gen_reverse(length, spec.alphabet, seed, index)
    return gen_addition(length, spec.alphabet, seed, index)


# -- dataset files -----------------------------------------------------------------

def write_dataset(path, spec, seed, count, samples=None):
    """One ``input<TAB>target`` line per sample after a ``#`` header line."""
    if samples is None:
        samples = (sample(spec, seed, i) for i in range(count))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(spec.header(seed) + "\n")
        for s in samples:
            fh.write(" ".join(map(str, s.input)) + "\t" + " ".join(map(str, s.target)) + "\n")


def parse_header(line):
    if not line.startswith("# task"):
        raise ValueError("dataset file is missing its '# task' header")
    values = dict(item.split("=", 1) for item in line[len("# task"):].split())
    seed = int(values.pop("seed"))
    for key in ("length", "alphabet", "period"):
        values[key] = int(values[key])
    return TaskSpec(**values), seed


def read_dataset(path):
    """Returns ``(spec, seed, samples)``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path} is empty")
    spec, seed = parse_header(lines[0])
    samples = []
    for line in lines[1:]:
        if not line.strip():
            continue
        left, _, right = line.partition("\t")
        samples.append(TaskSample([int(t) for t in left.split()], [int(t) for t in right.split()]))
    return spec, seed, samples


# -- text vocabulary -----------------------------------------------------------------

PAD, GO, EOS, SPACE = 0, 1, 2, 3
RESERVED = ("<pad>", "<go>", "<eos>", "<space>")


@dataclass
class Vocabulary:
    """Reserved symbols, then one id per character, then one id per frequent word.

    Characters and words live in separate tables, so a one-letter word and the
    letter itself get different ids.
    """

    chars: list
    words: list
    _char_ids: dict = field(init=False, repr=False)
    _word_ids: dict = field(init=False, repr=False)

    def __post_init__(self):
        base = len(RESERVED)
        self._char_ids = {c: base + i for i, c in enumerate(self.chars)}
        self._word_ids = {w: base + len(self.chars) + i for i, w in enumerate(self.words)}
        if len(self._char_ids) != len(self.chars) or len(self._word_ids) != len(self.words):
            raise ValueError("vocabulary entries must be unique")

    def __len__(self):
        return len(RESERVED) + len(self.chars) + len(self.words)

    def token(self, idx):
        """``(kind, string)`` for an id, kind in {reserved, char, word}."""
        base = len(RESERVED)
        if 0 <= idx < base:
            return "reserved", RESERVED[idx]
        if idx < base + len(self.chars):
            return "char", self.chars[idx - base]
        if idx < len(self):
            return "word", self.words[idx - base - len(self.chars)]
        raise IndexError(f"id {idx} outside vocabulary of size {len(self)}")

    def lookup(self, kind, string):
        table = {"char": self._char_ids, "word": self._word_ids}[kind]
        return table[string]


def build_vocab(corpus, size_cap):
    """All characters of the corpus plus its most frequent words, up to ``size_cap`` ids in total.

    Ties in word frequency are broken alphabetically so the result does not
    depend on corpus order.
    """
    if isinstance(corpus, str):
        corpus = [corpus]
    counts = Counter(w for line in corpus for w in line.split())
    chars = sorted({c for w in counts for c in w})
    room = max(0, size_cap - len(RESERVED) - len(chars))
    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    return Vocabulary(chars, ranked[:room])


def encode_text(vocab, sentence):
    """Word ids for in-vocabulary words; OOV words spelled as character ids.

    SPACE is emitted at every word boundary that touches a spelled-out word,
    and nowhere else.
    """
    ids = []
    previous_spelled = None
    for word in sentence.split():
        spelled = word not in vocab._word_ids
        if previous_spelled is not None and (spelled or previous_spelled):
            ids.append(SPACE)
        if spelled:
            for c in word:
                if c not in vocab._char_ids:
                    raise KeyError(f"character {c!r} is not in the vocabulary")
                ids.append(vocab._char_ids[c])
        else:
            ids.append(vocab._word_ids[word])
        previous_spelled = spelled
    return ids


def decode_text(vocab, ids):
    """Inverse of :func:`encode_text`; reserved ids other than SPACE are dropped."""
    words = []
    pending = []
    for idx in ids:
        kind, string = vocab.token(idx)
        if kind == "char":
            pending.append(string)
            continue
        if pending:
            words.append("".join(pending))
            pending = []
        if kind == "word":
            words.append(string)
    if pending:
        words.append("".join(pending))
    return " ".join(words)
