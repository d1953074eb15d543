import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neuralgpu import autograd as ad
from neuralgpu import gradchecks, nn
from neuralgpu import tensor as T

from oracles import naive_cgru


def zero_cell(m, tape=False, k=3):
    parts = nn.CGRU_PARTS + (nn.TAPE_PARTS if tape else ())
    values = {p: np.zeros(m) if p.endswith("bias") else np.zeros((k, k, m, m)) for p in parts}
    return (nn.DcgruCell if tape else nn.CgruCell)(**values)


def random_params(rng, m, tape=False):
    store = ad.ParameterStore()
    nn.init_cgru(store, "x", 3, 3, m, rng, np.float64, tape=tape)
    return {k.split(".", 1)[1]: v for k, v in store.items()}


def test_zero_parameter_cgru_halves_the_state():
    rng = np.random.default_rng(0)
    s = rng.standard_normal((4, 5, 3))
    out = nn.cgru_step(zero_cell(3), s).value
    assert np.max(np.abs(out - 0.5 * s)) <= 1e-12


def test_dcgru_with_empty_tape_is_bitwise_cgru():
    rng = np.random.default_rng(1)
    params = random_params(rng, 4, tape=True)
    for name in ("candidate_bias", "reset_bias"):
        params[name] = rng.standard_normal(4)
    s = rng.standard_normal((3, 5, 4))
    d = nn.dcgru_step(nn.DcgruCell(**params), s, np.zeros_like(s)).value
    plain = {k: v for k, v in params.items() if k in nn.CGRU_PARTS}
    c = nn.cgru_step(nn.CgruCell(**plain), s).value
    assert np.array_equal(d, c)


@pytest.mark.parametrize("t", [1, 2, 5, 10])
def test_iterated_zero_cell_decays_geometrically(t):
    rng = np.random.default_rng(t)
    s = rng.standard_normal((2, 3, 2))
    cell = zero_cell(2)
    out = ad.as_var(s)
    for _ in range(t):
        out = nn.cgru_step(cell, out)
    assert np.max(np.abs(out.value - 0.5 ** t * s)) <= 1e-12


def test_cgru_matches_elementwise_oracle():
    rng = np.random.default_rng(2)
    params = random_params(rng, 3)
    params["reset_bias"] = rng.standard_normal(3)
    s = rng.standard_normal((2, 4, 3))
    cell = nn.CgruCell(**{k: params[k] for k in nn.CGRU_PARTS})
    np.testing.assert_allclose(nn.cgru_step(cell, s).value, naive_cgru(params, s), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 20.0))
def test_cgru_output_is_a_convex_mix_of_state_and_candidate(seed, scale):
    # |CGRU(s)| <= max(|s|, 1) elementwise since u in (0,1) and |tanh| <= 1
    rng = np.random.default_rng(seed)
    params = random_params(rng, 2)
    s = scale * rng.standard_normal((2, 3, 2))
    out = nn.cgru_step(nn.CgruCell(**params), s).value
    assert np.all(np.abs(out) <= np.maximum(np.abs(s), 1.0) + 1e-12)


def test_cell_gradchecks_pass():
    for result in gradchecks.run_checks(["cells"]):
        assert result.passed and result.error < 1e-5, result.line()


def test_cell_shape_validation():
    cell = zero_cell(3)
    with pytest.raises(T.ShapeError):
        nn.cgru_step(cell, np.zeros((2, 2, 4)))
    with pytest.raises(T.ShapeError):
        nn.dcgru_step(zero_cell(3, tape=True), np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))
    bad = {p: np.zeros(3) if p.endswith("bias") else np.zeros((3, 3, 3, 3)) for p in nn.CGRU_PARTS}
    bad["reset_kernel"] = np.zeros((3, 3, 3, 2))
    with pytest.raises(T.ShapeError):
        nn.CgruCell(**bad)
    bad["reset_kernel"] = np.zeros((2, 2, 3, 3))
    with pytest.raises(T.ShapeError):
        nn.CgruCell(**bad)


def test_init_bounds_and_update_bias():
    rng = np.random.default_rng(3)
    params = random_params(rng, 8, tape=True)
    bound = nn.kernel_bound(3, 3, 8)
    for name in nn.CGRU_PARTS[:3] + nn.TAPE_PARTS:
        assert np.max(np.abs(params[name])) <= bound
    np.testing.assert_array_equal(params["update_bias"], 1.0)
    np.testing.assert_array_equal(params["candidate_bias"], 0.0)


def test_embed_input_places_tokens_in_row_zero():
    table = np.arange(6, dtype=float).reshape(3, 2)
    s0 = nn.embed_input(table, [2, 0], width=3, n=4).value
    assert s0.shape == (3, 4, 2)
    np.testing.assert_array_equal(s0[0, :2], table[[2, 0]])
    assert not s0[1:].any() and not s0[0, 2:].any()
    with pytest.raises(T.ShapeError):
        nn.embed_input(table, [0, 1, 2], width=2, n=2)


def test_embed_input_masks_padding():
    table = np.ones((2, 3))
    s0 = nn.embed_input(table, [[1, 0]], width=2, mask=[[1.0, 0.0]]).value
    np.testing.assert_array_equal(s0[0, 0, :, 0], [1.0, 0.0])


def test_dropout_scales_survivors_and_is_off_at_eval():
    rng = np.random.default_rng(4)
    x = np.ones((200, 50))
    y = nn.dropout(x, 0.3, rng, training=True)
    kept = y[y != 0]
    np.testing.assert_allclose(kept, 1 / 0.7)
    assert abs((y == 0).mean() - 0.3) < 0.02
    assert nn.dropout(x, 0.3, rng, training=False) is x
    with pytest.raises(ValueError):
        nn.dropout(x, 1.0, rng)


def test_residual_step():
    rng = np.random.default_rng(5)
    s = rng.standard_normal((2, 3, 2))
    k = rng.standard_normal((3, 3, 2, 2))
    np.testing.assert_allclose(nn.residual_step(k, s).value, s + T.conv_same(k, s))
