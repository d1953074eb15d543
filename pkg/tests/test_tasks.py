import math

import pytest
from hypothesis import given, settings, strategies as st

from neuralgpu import tasks


def test_copy_and_reverse_examples():
    s = tasks.gen_copy(3, 5, seed=0)
    assert s.target == s.input
    r = tasks.gen_reverse(3, 5, seed=0)
    assert r.input == s.input and r.target == s.input[::-1]
    assert tasks.TaskSample([3, 1, 2], [3, 1, 2][::-1]).target == [2, 1, 3]


def test_reverse_is_an_involution():
    for i in range(1000):
        s = tasks.gen_reverse(1 + i % 9, 16, seed=7, index=i)
        assert s.target[::-1] == s.input


def test_generators_are_pure_functions_of_seed_and_index():
    spec = tasks.TaskSpec("addition", 6, 10)
    first = [tasks.sample(spec, 3, i) for i in range(50)]
    again = [tasks.sample(spec, 3, i) for i in reversed(range(50))][::-1]
    assert first == again
    assert tasks.sample(spec, 4, 0) != first[0] or tasks.sample(spec, 4, 1) != first[1]


def test_addition_example_from_the_table():
    s = tasks.addition_sample(1250, 2315, 4, 10)
    assert s.input == [1, 2, 5, 0, 10, 2, 3, 1, 5]
    assert s.target == [3, 5, 6, 5]
    assert tasks.addition_sample(0, 0, 1, 10).target == [0]


@pytest.mark.parametrize("base", [2, 10])
def test_addition_against_integer_arithmetic(base):
    for i in range(10_000 if base == 10 else 5_000):
        digits = 1 + i % 8
        s = tasks.gen_addition(digits, base, seed=11, index=i)
        plus = s.input.index(base)
        a, b = s.input[:plus], s.input[plus + 1:]
        assert len(a) == len(b) == digits
        assert tasks.from_digits(s.target, base) == tasks.from_digits(a, base) + tasks.from_digits(b, base)
        assert s.target[0] != 0 or s.target == [0]
        assert (tasks.from_digits(a, base), tasks.from_digits(b, base)) == s.latent


def test_addition_argument_validation():
    with pytest.raises(ValueError):
        tasks.gen_addition(3, 3, 0)
    with pytest.raises(ValueError):
        tasks.gen_addition(0, 2, 0)
    with pytest.raises(ValueError):
        tasks.to_digits(100, 10, width=2)


def test_masked_copy_examples():
    spec = tasks.MaskedCopySpec(period=1, length=3)
    found = {}
    for i in range(200):
        s = tasks.gen_masked_copy(spec, 0, i)
        found[tuple(s.latent)] = s
        expected = [b ^ s.latent[0] for b in s.input]
        assert s.target == expected
    assert set(found) == {(0,), (1,)}
    zero = found[(0,)]
    assert zero.target == zero.input


@pytest.mark.parametrize("period", [1, 2])
def test_masked_copy_xor_recovers_a_periodic_mask(period):
    spec = tasks.MaskedCopySpec(period, 8)
    for i in range(500):
        s = tasks.gen_masked_copy(spec, 5, i)
        mask = [a ^ b for a, b in zip(s.input, s.target)]
        assert all(mask[k] == mask[k % period] for k in range(8))
        assert mask[:period] == s.latent


def test_masked_copy_marginal_is_uniform():
    spec = tasks.MaskedCopySpec(1, 8)
    n = 100_000
    same = sum(s.input[0] == s.target[0] for s in (tasks.gen_masked_copy(spec, 9, i) for i in range(n)))
    sigma = math.sqrt(n * 0.25)
    assert abs(same - n / 2) < 3 * sigma


def test_masked_copy_spec_validation():
    with pytest.raises(ValueError):
        tasks.MaskedCopySpec(period=3)
    with pytest.raises(ValueError):
        tasks.MaskedCopySpec(length=0)


def test_optimal_log_perplexity_table():
    ln2 = math.log(2)
    p1, p2 = tasks.MaskedCopySpec(1, 8), tasks.MaskedCopySpec(2, 8)
    assert tasks.optimal_log_perplexity(p1, "independent") == pytest.approx(0.6931, abs=1e-4)
    assert tasks.optimal_log_perplexity(p1, "markov1", 8) == pytest.approx(0.0866, abs=1e-4)
    assert tasks.optimal_log_perplexity(p1, "full") == pytest.approx(ln2 / 8)
    assert tasks.optimal_log_perplexity(p2, "markov1") == pytest.approx(ln2)
    assert tasks.optimal_log_perplexity(p2, "full") == pytest.approx(0.1733, abs=1e-4)
    assert tasks.optimal_log_perplexity(p2, "independent") == pytest.approx(ln2)
    with pytest.raises(ValueError):
        tasks.optimal_log_perplexity(tasks.TaskSpec("copy"), "full")
    with pytest.raises(ValueError):
        tasks.optimal_log_perplexity(p1, "oracle")


def _best_full_model_log_ppl(period, n):
    """Exact entropy of the target given input and all previous targets, by enumeration."""
    total = 0.0
    for k in range(n):
        # the mask bit for position k is known iff some earlier position shares its parity class
        known = any(j % period == k % period for j in range(k))
        total += 0.0 if known else math.log(2)
    return total / n


@pytest.mark.parametrize("period", [1, 2])
def test_full_dependence_optimum_matches_enumeration(period):
    for n in range(2, 10):
        spec = tasks.MaskedCopySpec(period, n)
        assert tasks.optimal_log_perplexity(spec, "full") == pytest.approx(_best_full_model_log_ppl(period, n))


def test_task_spec_vocabularies():
    assert tasks.TaskSpec("copy", 8, 16).vocab_out == 17
    assert tasks.TaskSpec("addition", 8, 2).vocab_in == 3
    spec = tasks.TaskSpec("masked_copy", 8, 2, 2)
    assert (spec.vocab_in, spec.vocab_out, spec.eos) == (2, 3, 2)
    assert not spec.has_curriculum
    with pytest.raises(ValueError):
        tasks.TaskSpec("sort")
    with pytest.raises(ValueError):
        tasks.TaskSpec("addition", 4, 16)


def test_sample_respects_length_bounds():
    spec = tasks.TaskSpec("copy", 8, 16)
    sizes = {len(tasks.sample(spec, 0, i, max_length=3).input) for i in range(200)}
    assert sizes == {1, 2, 3}
    assert len(tasks.sample(spec, 0, 0, size=6).input) == 6
    assert len(tasks.sample_fixed(spec, 0, 0, 16).input) == 16


def test_dataset_round_trip(tmp_path):
    spec = tasks.TaskSpec("reverse", 5, 7)
    path = tmp_path / "data.tsv"
    tasks.write_dataset(path, spec, 4, 25)
    spec2, seed, samples = tasks.read_dataset(path)
    assert (spec2, seed) == (spec, 4)
    assert [(s.input, s.target) for s in samples] == \
        [(s.input, s.target) for s in (tasks.sample(spec, 4, i) for i in range(25))]
    first = path.read_text().splitlines()[1]
    assert "\t" in first and all(tok.isdigit() for tok in first.replace("\t", " ").split())


def test_dataset_header_required(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("1 2\t2 1\n")
    with pytest.raises(ValueError):
        tasks.read_dataset(path)


# -- vocabulary ---------------------------------------------------------------------

def test_reserved_ids_are_distinct():
    assert len({tasks.PAD, tasks.GO, tasks.EOS, tasks.SPACE}) == 4


def test_in_vocabulary_words_get_one_id_each():
    corpus = ["the cat sat on the mat"]
    vocab = tasks.build_vocab(corpus, 100)
    ids = tasks.encode_text(vocab, "the cat sat")
    assert len(ids) == 3
    assert tasks.decode_text(vocab, ids) == "the cat sat"


def test_oov_word_is_spelled_out():
    vocab = tasks.build_vocab(["xyz"], size_cap=0)
    assert vocab.words == []
    ids = tasks.encode_text(vocab, "xyz")
    assert [vocab.token(i) for i in ids] == [("char", "x"), ("char", "y"), ("char", "z")]
    assert tasks.decode_text(vocab, ids) == "xyz"


def test_space_marks_boundaries_next_to_spelled_words():
    vocab = tasks.build_vocab(["a a a b b cd ef"], size_cap=len(tasks.RESERVED) + 6 + 2)
    assert vocab.words == ["a", "b"]
    ids = tasks.encode_text(vocab, "a b cd a ef")
    kinds = [vocab.token(i)[0] if i != tasks.SPACE else "SPACE" for i in ids]
    assert kinds == ["word", "word", "SPACE", "char", "char", "SPACE", "word", "SPACE", "char", "char"]


def test_unknown_character_is_an_error():
    vocab = tasks.build_vocab(["abc"], 10)
    with pytest.raises(KeyError):
        tasks.encode_text(vocab, "abd")


def test_vocab_lookup_is_a_bijection():
    vocab = tasks.build_vocab(["to be or not to be a b"], 20)
    seen = set()
    for idx in range(len(vocab)):
        entry = vocab.token(idx)
        assert entry not in seen
        seen.add(entry)
        if entry[0] != "reserved":
            assert vocab.lookup(*entry) == idx
    with pytest.raises(IndexError):
        vocab.token(len(vocab))


LETTERS = "abcdefghij"
words = st.text(alphabet=LETTERS, min_size=1, max_size=6)


@settings(max_examples=60, deadline=None)
@given(corpus=st.lists(st.lists(words, min_size=1, max_size=8), min_size=1, max_size=10),
       cap=st.integers(0, 30))
def test_round_trip_property(corpus, cap):
    lines = [" ".join(ws) for ws in corpus]
    vocab = tasks.build_vocab(lines, len(tasks.RESERVED) + len(LETTERS) + cap)
    for line in lines:
        assert tasks.decode_text(vocab, tasks.encode_text(vocab, line)) == line
