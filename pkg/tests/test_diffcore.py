from __future__ import annotations

import numpy as np
import pytest

from tsae_tool.config import OptimizerConfig
from tsae_tool.core import diffcore as dc
from tsae_tool.core.params import ParameterStore, clip_weights, init_normal, init_xavier, optimizer_step
from tsae_tool.errors import ContractError, DegenerateRowError

TOL = 1e-4


def _store(rng, **shapes) -> ParameterStore:
    store = ParameterStore()
    for name, shape in shapes.items():
        store.add(name, shape).values[...] = rng.normal(size=shape)
    return store


def _sq(t):
    return dc.reduce_sum(dc.square(t))


@pytest.mark.parametrize(
    "shapes, build",
    [
        ({"a": (3, 4), "b": (3, 4)}, lambda p: _sq(dc.add(p["a"], p["b"]) * p["b"])),
        ({"a": (3, 4), "b": (4,)}, lambda p: _sq(dc.sub(p["a"], p["b"]))),
        ({"a": (2, 3), "b": (2, 3)}, lambda p: _sq(dc.div(p["a"], dc.square(p["b"]) + 1.0))),
        ({"a": (2, 3, 4), "b": (4, 5)}, lambda p: _sq(dc.matmul(p["a"], p["b"]))),
        ({"a": (2, 3, 4), "b": (2, 4, 5)}, lambda p: _sq(dc.matmul(p["a"], p["b"]))),
        ({"a": (3, 5)}, lambda p: _sq(dc.softmax_rows(p["a"]) * np.arange(5.0))),
        ({"a": (3, 4)}, lambda p: _sq(dc.elementwise(p["a"], "tanh"))),
        ({"a": (3, 4)}, lambda p: _sq(dc.elementwise(p["a"], "sigmoid"))),
        ({"a": (3, 4)}, lambda p: dc.reduce_sum(dc.log(dc.square(p["a"]) + 0.5))),
        ({"a": (2, 6)}, lambda p: _sq(dc.reshape(p["a"], (3, 4)) * np.arange(4.0))),
        ({"a": (2, 3, 4)}, lambda p: _sq(dc.transpose(p["a"], (2, 0, 1)) * np.arange(3.0))),
        ({"a": (4, 5)}, lambda p: _sq(p["a"][1:3, ::2])),
        ({"a": (2, 3), "b": (2, 2)}, lambda p: _sq(dc.concat([p["a"], p["b"]], axis=1) * np.arange(5.0))),
        ({"a": (2, 3, 4)}, lambda p: _sq(dc.reduce_mean(p["a"], axis=1) * np.arange(4.0))),
        ({"a": (2, 3, 4)}, lambda p: dc.reduce_sum(dc.frobenius(p["a"], axes=(1, 2)))),
        (
            {"x": (2, 3, 5), "g": (5,), "b": (5,)},
            lambda p: _sq(dc.layer_norm(p["x"], p["g"], p["b"]) * np.arange(5.0)),
        ),
        (
            {"x": (2, 2, 9), "w": (3, 2, 4), "b": (3,)},
            lambda p: _sq(dc.conv1d(p["x"], p["w"], p["b"], 1, 2)),
        ),
        (
            {"x": (1, 1, 6), "w": (2, 1, 3), "b": (2,)},
            lambda p: _sq(dc.conv1d(p["x"], p["w"], p["b"], 0, 0)),
        ),
    ],
)
def test_op_gradients_match_central_differences(rng, shapes, build):
    store = _store(rng, **shapes)
    assert dc.grad_check(build, store, eps=1e-5) <= TOL


def test_relu_and_clamp_gradients_away_from_kinks(rng):
    store = ParameterStore()
    store.add("a", (4, 4)).values[...] = rng.uniform(0.1, 1.0, size=(4, 4)) * rng.choice([-1.0, 1.0], size=(4, 4))
    assert dc.grad_check(lambda p: _sq(dc.elementwise(p["a"], "relu")), store) <= TOL
    assert dc.grad_check(lambda p: _sq(dc.clamp(p["a"], -0.5, 0.5)), store) <= TOL


def test_masked_softmax_entries_are_exactly_zero():
    x = np.array([[1.0, -np.inf, 2.0], [0.5, 0.5, -np.inf]])
    y = dc.softmax_rows(x).values
    assert y[0, 1] == 0.0 and y[1, 2] == 0.0
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


def test_fully_masked_softmax_row_raises():
    with pytest.raises(DegenerateRowError):
        dc.softmax_rows(np.array([[-np.inf, -np.inf]]))


def test_gradients_accumulate_across_backward_calls(rng):
    store = _store(rng, a=(3,))
    a = store["a"]
    dc.backward(dc.reduce_sum(a * 2.0))
    dc.backward(dc.reduce_sum(a * 3.0))
    np.testing.assert_allclose(a.grad, 5.0)


def test_backward_needs_scalar(rng):
    store = _store(rng, a=(3,))
    with pytest.raises(ContractError):
        dc.backward(store["a"] * 2.0)


def test_no_grad_records_no_graph(rng):
    store = _store(rng, a=(2, 2))
    with dc.no_grad():
        y = dc.matmul(store["a"], store["a"])
    assert not y.requires_grad
    assert dc.grad_enabled()


def test_dropout_scales_kept_entries():
    x = np.ones((200, 50))
    y = dc.dropout(x, 0.25, np.random.default_rng(3)).values
    kept = y[y != 0]
    np.testing.assert_allclose(kept, 1.0 / 0.75)
    assert abs((y == 0).mean() - 0.25) < 0.02
    np.testing.assert_array_equal(dc.dropout(x, 0.0, np.random.default_rng(3)).values, x)
    np.testing.assert_array_equal(dc.dropout(x, 0.5, None).values, x)


def test_frobenius_gradient_at_zero_is_zero():
    store = ParameterStore()
    store.add("a", (2, 3))
    dc.backward(dc.reduce_sum(dc.frobenius(store["a"], axes=(1,))))
    np.testing.assert_array_equal(store["a"].grad, 0.0)


def _square_with_doubled_backward(x):
    return dc.record(x.values * x.values, (x,), lambda g: dc.accumulate(x, 4.0 * x.values * g))


def test_grad_check_flags_a_wrong_backward(rng):
    store = _store(rng, a=(3, 2))
    assert dc.grad_check(lambda p: dc.reduce_sum(_square_with_doubled_backward(p["a"])), store) > 1e-2
    assert dc.grad_check(lambda p: _sq(p["a"]), store) <= TOL


def test_grad_check_rejects_bad_eps(rng):
    store = _store(rng, a=(2,))
    with pytest.raises(ContractError):
        dc.grad_check(lambda p: _sq(p["a"]), store, eps=1e-1)


# ---------- parameters / optimizers ----------
def test_xavier_bounds_and_roles(rng):
    store = ParameterStore()
    store.add("lin.weight", (30, 20))
    store.add("lin.bias", (30,), "bias")
    store.add("norm.gain", (30,), "gain")
    init_xavier(store, rng)
    bound = np.sqrt(6.0 / 50)
    assert np.abs(store["lin.weight"].values).max() <= bound
    assert np.all(store["lin.bias"].values == 0.0)
    assert np.all(store["norm.gain"].values == 1.0)


def test_adam_first_step_moves_by_learning_rate(rng):
    store = _store(rng, a=(5,))
    before = store["a"].values.copy()
    dc.backward(_sq(store["a"]))
    optimizer_step(store, OptimizerConfig(learning_rate=1e-3))
    # bias-corrected first Adam step is lr * sign(g) up to epsilon
    np.testing.assert_allclose(before - store["a"].values, 1e-3 * np.sign(before), rtol=1e-4)
    assert store["a"].grad is None
    assert store.step_count == 1


def test_optimizer_step_without_gradients_raises(rng):
    store = _store(rng, a=(2,))
    with pytest.raises(ContractError):
        optimizer_step(store, OptimizerConfig())


def test_rmsprop_descends(rng):
    store = _store(rng, a=(4,))
    config = OptimizerConfig(kind="rmsprop", learning_rate=1e-2)
    start = float(np.sum(store["a"].values ** 2))
    for _ in range(20):
        dc.backward(_sq(store["a"]))
        optimizer_step(store, config)
    assert float(np.sum(store["a"].values ** 2)) < start
    assert set(store.state["a"]) == {"sq"}


def test_subset_shares_tensors_with_own_state(rng):
    store = _store(rng, a=(2,), b=(2,))
    sub = store.subset(["b"])
    assert sub["b"] is store["b"]
    dc.backward(_sq(sub["b"]))
    optimizer_step(sub, OptimizerConfig())
    assert sub.step_count == 1 and store.step_count == 0
    assert "b" in sub.state and "b" not in store.state


def test_rmsprop_single_step_closed_form():
    store = ParameterStore()
    store.add("a", (3,)).values[...] = [0.3, -0.2, 1.0]
    before = store["a"].values.copy()
    dc.backward(dc.reduce_sum(store["a"]))
    optimizer_step(store, OptimizerConfig(kind="rmsprop", learning_rate=5e-5, rmsprop_decay=0.99))
    # g=1: sq = 0.01, step = lr / sqrt(sq)
    np.testing.assert_allclose(store["a"].values - before, -5e-4, rtol=1e-6)


def test_adam_leaves_parameter_alone_on_zero_gradient(rng):
    store = _store(rng, a=(4,))
    before = store["a"].values.copy()
    dc.backward(dc.reduce_sum(store["a"] * 0.0))
    optimizer_step(store, OptimizerConfig(learning_rate=1e-3))
    np.testing.assert_array_equal(store["a"].values, before)


def test_normal_init_statistics():
    store = ParameterStore()
    store.add("conv.weight", (100, 100))
    store.add("conv.bias", (100,), "bias")
    init_normal(store, 0.02, np.random.default_rng(11))
    w = store["conv.weight"].values
    assert 0.019 <= w.std() <= 0.021
    assert abs(w.mean()) <= 3 * 0.02 / 100
    assert np.all(store["conv.bias"].values == 0.0)

    again = ParameterStore()
    again.add("conv.weight", (100, 100))
    again.add("conv.bias", (100,), "bias")
    init_normal(again, 0.02, np.random.default_rng(11))
    np.testing.assert_array_equal(again["conv.weight"].values, w)


def test_normal_init_needs_positive_stddev():
    store = ParameterStore()
    store.add("w", (2, 2))
    with pytest.raises(ContractError):
        init_normal(store, 0.0, np.random.default_rng(0))


def test_clip_weights_elementwise():
    store = ParameterStore()
    store.add("critic.w", (4,)).values[...] = [0.5, -0.05, -0.2, 0.1]
    clip_weights(store, 0.1)
    np.testing.assert_array_equal(store["critic.w"].values, [0.1, -0.05, -0.1, 0.1])
    clip_weights(store, 0.1)
    np.testing.assert_array_equal(store["critic.w"].values, [0.1, -0.05, -0.1, 0.1])
    with pytest.raises(ContractError):
        clip_weights(store, 0.0)
