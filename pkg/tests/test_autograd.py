import numpy as np
import pytest

from neuralgpu import autograd as ad
from neuralgpu import gradchecks


def test_primitive_gradchecks_pass():
    for result in gradchecks.run_checks(["primitives"]):
        assert result.passed, result.line()
        assert result.error < 1e-6


def test_gradients_accumulate_over_shared_inputs():
    x = ad.Var(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    y = ad.reduce_sum(ad.add(ad.mul(x, x), x))
    ad.backward(y)
    np.testing.assert_array_equal(x.grad, 2 * x.value + 1)


def test_backward_twice_accumulates_into_leaves():
    x = ad.Var(np.array([2.0]), requires_grad=True)
    ad.backward(ad.reduce_sum(ad.square(x)))
    ad.backward(ad.reduce_sum(ad.square(x)))
    np.testing.assert_array_equal(x.grad, [8.0])


def test_backward_requires_scalar():
    x = ad.Var(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(ad.tanh(x))


def test_no_grad_records_nothing():
    x = ad.Var(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = ad.tanh(x)
    assert not y.requires_grad and y.parents == ()


def test_constants_get_no_gradient():
    x = ad.Var(np.ones(2), requires_grad=True)
    c = ad.Var(np.full(2, 3.0))
    ad.backward(ad.reduce_sum(ad.mul(x, c)))
    assert c.grad is None
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_operator_overloads():
    a = ad.Var(np.array([1.0, 2.0]), requires_grad=True)
    b = ad.Var(np.array([3.0, 5.0]), requires_grad=True)
    ad.backward(ad.reduce_sum((a * b) - (-a) + b))
    np.testing.assert_array_equal(a.grad, b.value + 1)
    np.testing.assert_array_equal(b.grad, a.value + 1)


def test_non_finite_gradient_names_the_op(monkeypatch):
    monkeypatch.setitem(ad.VJPS, "tanh", lambda node, g: (g * np.nan,))
    x = ad.Var(np.ones(2), requires_grad=True)
    with pytest.raises(FloatingPointError, match="tanh"):
        ad.backward(ad.reduce_sum(ad.tanh(x)))


def test_corrupted_backward_rule_is_caught(monkeypatch):
    # drop the (1 - y^2) factor: forward is unchanged, the gradient is wrong
    monkeypatch.setitem(ad.VJPS, "tanh", lambda node, g: (g,))
    failed = [r for r in gradchecks.run_checks(["primitives"]) if not r.passed]
    assert [r.name for r in failed] == ["tanh"]
    assert "tanh" in failed[0].line()


def test_gradcheck_requires_float64():
    from neuralgpu import tensor as T
    with T.precision("float32"):
        with pytest.raises(RuntimeError):
            ad.gradcheck(lambda P: ad.reduce_sum(P["x"]), {"x": np.ones(2)})


def test_gradcheck_rejects_non_finite_function():
    with pytest.raises(FloatingPointError):
        ad.gradcheck(lambda P: ad.reduce_sum(ad.mul_const(P["x"], np.array([np.inf]))),
                     {"x": np.ones(1)})


def test_gradcheck_subsampling_is_deterministic():
    f = lambda P: ad.reduce_sum(ad.square(ad.tanh(P["x"])))
    point = {"x": np.linspace(-1, 1, 50)}
    assert ad.gradcheck_report(f, point, max_coords=5, seed=3) == \
        ad.gradcheck_report(f, point, max_coords=5, seed=3)


def test_gather_rejects_bad_ids_and_accumulates_repeats():
    table = ad.Var(np.eye(3), requires_grad=True)
    with pytest.raises(IndexError):
        ad.gather(table, [3])
    ad.backward(ad.reduce_sum(ad.gather(table, [1, 1, 2])))
    np.testing.assert_array_equal(table.grad.sum(axis=1), [0.0, 6.0, 3.0])


def test_cross_entropy_masks_and_rejects_bad_targets():
    logits = ad.Var(np.zeros((2, 3)), requires_grad=True)
    loss = ad.cross_entropy(logits, np.array([0, 99]), np.array([1.0, 0.0]))
    assert float(loss.value) == pytest.approx(np.log(3))
    with pytest.raises(IndexError):
        ad.cross_entropy(logits, np.array([0, 3]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        ad.cross_entropy(logits, np.array([0, 0]), np.array([0.0, 0.0]))


def test_masked_softmax_gives_zero_weight():
    p = ad.softmax(np.array([[5.0, 1.0, 2.0]]), mask=np.array([[0.0, 1.0, 1.0]]))
    assert p.value[0, 0] == 0.0
    assert p.value.sum() == pytest.approx(1.0)


class TestParameterStore:
    def test_order_and_uniqueness(self):
        store = ad.ParameterStore()
        store.add("b", np.zeros(2))
        store.add("a", np.zeros((2, 3)))
        assert store.names() == ["b", "a"]
        assert store.count() == 8
        with pytest.raises(KeyError):
            store.add("a", np.zeros(1))

    def test_set_checks_shape(self):
        store = ad.ParameterStore([("w", np.zeros(3))])
        store["w"] = np.ones(3)
        with pytest.raises(ValueError):
            store["w"] = np.ones(4)
        with pytest.raises(KeyError):
            store["nope"] = np.ones(3)

    def test_copy_is_deep(self):
        store = ad.ParameterStore([("w", np.zeros(3))])
        clone = store.copy()
        clone["w"][0] = 1.0
        assert store["w"][0] == 0.0
        assert store.astype(np.float32)["w"].dtype == np.float32
