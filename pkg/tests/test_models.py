import math

import numpy as np
import pytest

from neuralgpu import autograd as ad
from neuralgpu import gradchecks, models, nn

SMALL = dict(layers=2, width=3, channels=4, vocab_in=3, vocab_out=3)


def config(variant, **kw):
    return models.ModelConfig(variant=variant, **dict(SMALL, **kw))


def zeroed(params):
    out = params.copy()
    for name, value in out.items():
        out[name] = np.zeros_like(value)
    return out


@pytest.mark.parametrize("variant", models.VARIANTS)
def test_zero_output_matrix_gives_uniform_loss(variant):
    cfg = config(variant, output_init="zero")
    batch = models.make_batch([[0, 1, 2], [2]], [[1, 1], [0, 2, 2]], memory=4)
    logits, loss = models.forward(cfg, models.init_params(cfg, 0), batch)
    assert float(loss.value) == pytest.approx(math.log(3), abs=1e-15)
    assert not logits.value.any()


@pytest.mark.parametrize("variant", models.VARIANTS)
def test_parameter_count_matches_closed_form(variant):
    for kw in ({}, {"layers": 1, "channels": 6, "kernel_w": 5, "vocab_out": 7}):
        cfg = config(variant, **kw)
        params = models.init_params(cfg)
        assert params.count() == models.parameter_count(cfg)
        assert params.count() == sum(int(np.prod(s)) for s in models.parameter_shapes(cfg).values())


@pytest.mark.parametrize("variant", models.VARIANTS)
def test_loss_is_finite_on_random_data_at_desk_scale(variant):
    cfg = models.ModelConfig(variant=variant, vocab_in=16, vocab_out=17)
    rng = np.random.default_rng(0)
    batch = models.make_batch(rng.integers(0, 16, (4, 8)).tolist(), rng.integers(0, 16, (4, 8)).tolist(),
                              eos=16)
    _, loss = models.forward(cfg, models.init_params(cfg, 1), batch)
    assert np.isfinite(loss.value)


def test_model_gradchecks_pass():
    for result in gradchecks.run_checks(["models"]):
        assert result.passed and result.error < 1e-4, result.line()


def test_config_validation():
    with pytest.raises(ValueError):
        models.ModelConfig(variant="transformer")
    with pytest.raises(ValueError):
        models.ModelConfig(kernel_w=2)
    with pytest.raises(ValueError):
        models.ModelConfig(layers=0)
    assert models.ModelConfig().fingerprint() == models.ModelConfig().fingerprint()
    assert models.ModelConfig().fingerprint() != models.ModelConfig(channels=8).fingerprint()


def test_target_out_of_range():
    cfg = config("baseline")
    with pytest.raises(IndexError):
        models.forward(cfg, models.init_params(cfg), models.make_batch([[0]], [[3]]))


def test_memory_shorter_than_input():
    with pytest.raises(ValueError):
        models.make_batch([[0, 1, 2]], [[0]], memory=2)


# -- encoder -------------------------------------------------------------------

def test_zero_encoder_decays_the_embedding():
    cfg = config("baseline", layers=1)
    params = zeroed(models.init_params(cfg))
    params["embed"] = np.arange(12, dtype=float).reshape(3, 4)
    s0 = nn.embed_input(params["embed"], [2, 0, 1], cfg.width, 5).value
    sn = models.encode(cfg, params, [2, 0, 1], 5).value
    np.testing.assert_allclose(sn, 0.5 ** 5 * s0, rtol=0, atol=1e-12)


def test_single_step_encoder_is_one_cgru_step():
    cfg = config("baseline", layers=1)
    params = models.init_params(cfg, 3)
    s0 = nn.embed_input(params["embed"], [1], cfg.width, 1)
    cell = nn.CgruCell.from_params(params, "enc.0")
    assert np.array_equal(models.encode(cfg, params, [1], 1).value, nn.cgru_step(cell, s0).value)


def test_encoder_matches_step_replay():
    cfg = config("baseline")
    params = models.init_params(cfg, 4)
    tokens, n = [2, 1, 0], 4
    s = nn.embed_input(params["embed"], tokens, cfg.width, n)
    cells = [nn.CgruCell.from_params(params, f"enc.{i}") for i in range(cfg.layers)]
    for _ in range(n):
        for cell in cells:
            s = nn.cgru_step(cell, s)
    assert np.array_equal(models.encode(cfg, params, tokens, n).value, s.value)


# -- dependence structure ------------------------------------------------------------

def logits_for(cfg, params, tokens, targets, n=None):
    return models.forward(cfg, params, models.make_batch([tokens], [targets], memory=n))[0].value[0]


def test_masked_positions_do_not_affect_the_loss():
    cfg = config("extended")
    params = models.init_params(cfg, 5)
    batch = models.make_batch([[0, 1, 2, 1]], [[1, 2]])
    _, loss = models.forward(cfg, params, batch)
    batch.targets[0, 2:] = [2, 0]
    _, loss2 = models.forward(cfg, params, batch)
    assert float(loss.value) == float(loss2.value)


def test_baseline_outputs_ignore_other_targets():
    cfg = config("baseline")
    params = models.init_params(cfg, 6)
    a = logits_for(cfg, params, [0, 1, 2, 1], [0, 1, 2, 0])
    b = logits_for(cfg, params, [0, 1, 2, 1], [2, 0, 1, 1])
    assert np.array_equal(a, b)


def test_markovian_depends_only_on_previous_target():
    cfg = config("markovian")
    params = models.init_params(cfg, 7)
    a = logits_for(cfg, params, [0, 1, 2, 1], [0, 1, 2, 0])
    b = logits_for(cfg, params, [0, 1, 2, 1], [1, 1, 2, 0])  # only target_0 differs
    assert not np.array_equal(a[1], b[1])
    np.testing.assert_array_equal(a[[0, 2, 3]], b[[0, 2, 3]])


def test_markovian_previous_symbol_path_in_isolation():
    # O reads only the E' half: logits depend on the previous target alone
    cfg = config("markovian")
    params = models.init_params(cfg, 8)
    out = np.zeros_like(params["output"])
    out[:, cfg.channels:] = np.random.default_rng(0).standard_normal((3, cfg.channels))
    params["output"] = out
    a = logits_for(cfg, params, [0, 1, 2], [1, 0, 2])
    b = logits_for(cfg, params, [2, 2, 0], [1, 0, 2])
    np.testing.assert_array_equal(a, b)
    assert len({tuple(row) for row in a}) == 3


def test_extended_last_output_depends_on_early_targets():
    cfg = config("extended")
    params = models.init_params(cfg, 9)
    a = logits_for(cfg, params, [0, 1, 2, 1], [0, 1, 2, 0])
    b = logits_for(cfg, params, [0, 1, 2, 1], [0, 2, 2, 0])
    assert np.array_equal(a[:2], b[:2])
    assert not np.allclose(a[3], b[3], rtol=0, atol=1e-12)


def test_extended_without_tape_kernels_ignores_targets():
    cfg = config("extended")
    params = models.init_params(cfg, 10)
    for name in params.names():
        if ".tape_" in name:
            params[name] = np.zeros_like(params[name])
    a = logits_for(cfg, params, [0, 1, 2, 1], [0, 1, 2, 0])
    b = logits_for(cfg, params, [0, 1, 2, 1], [2, 0, 0, 1])
    assert np.array_equal(a, b)


def test_extended_zero_params_decay_from_encoder_state():
    cfg = config("extended", output_init="zero", layers=1)
    params = zeroed(models.init_params(cfg))
    params["embed"] = np.ones((3, 4))
    state = models.start(cfg, params, [[1, 2]], n=3)
    sn = state["d"].value
    for k in range(3):
        _, state = models.step(cfg, state, k, [cfg.go if k == 0 else 1])
        np.testing.assert_allclose(state["d"].value, 0.5 ** (k + 1) * sn, atol=1e-15)


def test_extended_tape_holds_emitted_symbols():
    cfg = config("extended")
    params = models.init_params(cfg, 11)
    state = models.start(cfg, params, [[1, 2, 0]], n=3)
    prev = cfg.go
    for k, sym in enumerate([2, 0, 1]):
        _, state = models.step(cfg, state, k, [prev])
        tape = state["p"].value[0]
        for j in range(k):
            np.testing.assert_array_equal(tape[0, j], params["out_embed"][[2, 0, 1][j]])
        assert not tape[0, k:].any() and not tape[1:].any()
        prev = sym


def test_step_rejects_positions_outside_memory():
    cfg = config("baseline")
    state = models.start(cfg, models.init_params(cfg), [[0, 1]], n=2)
    with pytest.raises(IndexError):
        models.step(cfg, state, 2, [0])


# -- attention ------------------------------------------------------------------

def test_attention_over_single_memory_row_is_one():
    cfg = config("attention")
    state = models.start(cfg, models.init_params(cfg, 12), [[2]], n=1)
    np.testing.assert_array_equal(models.attention_weights(cfg, state).value, [[1.0]])


def test_attention_weights_sum_to_one_and_skip_padding():
    cfg = config("attention")
    params = models.init_params(cfg, 13)
    batch = models.make_batch([[0, 1, 2, 1], [2, 1]], [[1, 1, 1], [0]])
    state = models.start(cfg, params, batch.inputs, batch.input_mask, batch.memory)
    prev = np.full(2, cfg.go)
    for j in range(batch.memory):
        _, state = models.step(cfg, state, j, prev)
        w = state["last_weights"]
        np.testing.assert_allclose(w.sum(axis=-1), 1.0)
        assert np.all(w[1, 2:] == 0.0)
        prev = batch.targets[:, j]


def test_single_sample_wrappers_match_forward():
    for variant in models.VARIANTS:
        cfg = config(variant)
        params = models.init_params(cfg, 14)
        fn = getattr(models, f"forward_{variant}")
        logits, loss = fn(cfg, params, [0, 2, 1], [1, 1])
        ref_logits, ref_loss = models.forward(cfg, params, models.make_batch([[0, 2, 1]], [[1, 1]]))
        assert np.array_equal(logits.value, ref_logits.value)
        with pytest.raises(ValueError):
            fn(config("baseline" if variant != "baseline" else "extended"), params, [0], [0])
