import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dancegen.numcore import (
    AdamState,
    CheckpointError,
    NonFiniteGradientError,
    ShapeError,
    Tensor,
    adam_step,
    backward,
    clip_global_norm,
    grad_check,
    load_tensors,
    no_grad,
    ops,
    save_tensors,
)


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = ops.matmul(a, Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_hand_values():
    # 1*2 + 2*1 + 3*3 = 13 ; 4*2 + 5*1 + 6*3 = 31
    a = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = Tensor([[2.0], [1.0], [3.0]])
    np.testing.assert_array_equal(ops.matmul(a, b).data, [[13.0], [31.0]])


def test_matmul_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError) as err:
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    msg = str(err.value)
    assert "matmul" in msg and "(2, 3)" in msg


def test_add_requires_equal_shapes():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(3)))


def test_softmax_uniform():
    out = ops.softmax(Tensor([[0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], rtol=0, atol=1e-15)


def test_softmax_large_scores_stay_finite():
    out = ops.softmax(Tensor([[1000.0, 0.0, -1000.0]]))
    assert np.all(np.isfinite(out.data))
    assert out.data[0, 0] == pytest.approx(1.0)


def test_sum_grad_is_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    backward(ops.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_square_sum_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(ops.sum_all(ops.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        backward(ops.mul(x, x))


def test_shared_subexpression_accumulates():
    x = Tensor([3.0], requires_grad=True)
    y = ops.mul(x, x)
    backward(ops.sum_all(ops.add(y, y)))
    np.testing.assert_array_equal(x.grad, [12.0])


def test_no_grad_builds_no_graph():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = ops.mul(x, x)
    assert not y.requires_grad and not y._parents


def test_composite_matches_finite_differences():
    rng = np.random.default_rng(1)
    point = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2))}

    def f(p):
        return ops.sum_all(ops.tanh(ops.matmul(ops.sigmoid(p["a"]), p["b"])))

    rep = grad_check(f, point, h=1e-5, tol=1e-4)
    assert rep.passed, rep.failures
    assert rep.checked == 12 + 8


@pytest.mark.parametrize("name", ["relu", "sigmoid", "tanh", "softmax", "abs_sum", "transpose"])
def test_unary_op_gradients(name):
    rng = np.random.default_rng(2)
    # keep relu/abs away from their kinks
    x = rng.uniform(0.2, 1.5, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4))
    w = rng.normal(size=(3, 4))

    def f(p):
        fn = getattr(ops, name)
        y = fn(p["x"])
        if name == "abs_sum":
            return y
        if name == "transpose":
            return ops.sum_all(ops.mul(ops.transpose(y), Tensor(w)))
        return ops.sum_all(ops.mul(y, Tensor(w)))

    assert grad_check(f, {"x": x}).passed


def test_shape_op_gradients():
    rng = np.random.default_rng(3)
    point = {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(4, 2)), "v": rng.normal(size=3)}
    w = rng.normal(size=(5, 5))

    def f(p):
        cat = ops.concat([p["a"], p["b"]], axis=-1)  # 4x5
        rows = ops.take_rows(cat, [0, 2, 2, 3, 1])  # 5x5, repeated row
        mixed = ops.add(ops.slice_cols(rows, 0, 3), ops.tile_rows(p["v"], 5))
        flat = ops.reshape(mixed, (15,))
        return ops.add(ops.sum_all(ops.mul(rows, Tensor(w))), ops.sum_all(ops.scale(ops.mul(flat, flat), 0.5)))

    assert grad_check(f, point).passed


def test_layer_norm_and_segment_mean_and_cross_entropy_gradients():
    rng = np.random.default_rng(4)
    point = {"x": rng.normal(size=(5, 4)), "g": rng.normal(size=4), "b": rng.normal(size=4)}

    def f(p):
        y = ops.layer_norm(p["x"], p["g"], p["b"])
        pooled = ops.segment_mean(y, [2, 3])
        return ops.cross_entropy(pooled, [1, 3])

    assert grad_check(f, point).passed


def test_layer_norm_output_statistics():
    x = Tensor(np.random.default_rng(5).normal(3.0, 2.0, size=(6, 8)))
    y = ops.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
    np.testing.assert_allclose(y.data.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.data.var(axis=1), 1.0, atol=1e-4)


def test_lstm_cell_gradients():
    rng = np.random.default_rng(6)
    point = {
        "x": rng.normal(size=(2, 3)),
        "h": rng.normal(size=(2, 4)),
        "c": rng.normal(size=(2, 4)),
        "w": rng.normal(size=(7, 16)) * 0.5,
        "b": rng.normal(size=16) * 0.1,
    }
    wt = rng.normal(size=(2, 8))

    def f(p):
        hc = ops.lstm_cell(p["x"], p["h"], p["c"], p["w"], p["b"])
        return ops.sum_all(ops.mul(hc, Tensor(wt)))

    assert grad_check(f, point).passed


def test_banded_attention_gradients():
    rng = np.random.default_rng(7)
    point = {"q": rng.normal(size=(6, 3)), "k": rng.normal(size=(6, 3)), "v": rng.normal(size=(6, 2))}
    wt = rng.normal(size=(6, 2))

    def f(p):
        return ops.sum_all(ops.mul(ops.banded_attention(p["q"], p["k"], p["v"], 2), Tensor(wt)))

    assert grad_check(f, point).passed


def test_grad_check_quadratic_form():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])

    def f(p):
        x = p["x"]
        return ops.sum_all(ops.mul(x, ops.matmul(x, Tensor(a))))

    assert grad_check(f, {"x": np.array([[0.3, -0.7]])}, tol=1e-6).passed


def test_grad_check_catches_corrupted_backward():
    def bad_square(x):
        from dancegen.numcore.tensor import make

        return make(x.data * x.data, (x,), lambda g: (g * x.data,), "bad_square")  # missing factor 2

    def f(p):
        return ops.sum_all(bad_square(p["x"]))

    rep = grad_check(f, {"x": np.array([0.5, -1.5, 2.0])})
    assert not rep.passed
    assert rep.max_rel_error == pytest.approx(0.5, rel=1e-6)


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.array([1.0, -2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState(lr=0.1))
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_adam_single_step_hand_value():
    # m = 0.1*0.5 = 0.05, v = 0.001*0.25 = 0.00025
    # m_hat = 0.05/0.1 = 0.5, v_hat = 0.00025/0.001 = 0.25
    # theta = 1 - 0.1 * 0.5 / (0.5 + 1e-8)
    params = {"w": np.array([1.0])}
    state = AdamState(lr=0.1)
    adam_step(params, {"w": np.array([0.5])}, state)
    assert state.m["w"][0] == pytest.approx(0.05, abs=1e-15)
    assert state.v["w"][0] == pytest.approx(0.00025, abs=1e-15)
    assert params["w"][0] == pytest.approx(0.900000002, abs=1e-12)


def test_adam_two_steps_hand_value():
    # step 2 with g=-1: m = 0.9*0.05 - 0.1 = -0.055 ; v = 0.999*0.00025 + 0.001 = 0.00124975
    params = {"w": np.array([0.0])}
    state = AdamState(lr=0.01, eps=0.0)
    adam_step(params, {"w": np.array([0.5])}, state)
    adam_step(params, {"w": np.array([-1.0])}, state)
    m_hat = -0.055 / (1 - 0.9**2)
    v_hat = 0.00124975 / (1 - 0.999**2)
    expected = -0.01 + -0.01 * m_hat / math.sqrt(v_hat)
    assert params["w"][0] == pytest.approx(expected, abs=1e-12)


def test_adam_non_finite_names_parameter_and_changes_nothing():
    params = {"a": np.array([1.0]), "b": np.array([2.0])}
    state = AdamState()
    with pytest.raises(NonFiniteGradientError, match="'b'|b"):
        adam_step(params, {"a": np.array([1.0]), "b": np.array([np.nan])}, state)
    assert state.t == 0
    np.testing.assert_array_equal(params["a"], [1.0])


def test_clip_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    before = clip_global_norm(grads, 1.0)
    assert before == pytest.approx(5.0)
    np.testing.assert_allclose([grads["a"][0], grads["b"][0]], [0.6, 0.8])
    small = {"a": np.array([0.1])}
    clip_global_norm(small, 1.0)
    assert small["a"][0] == 0.1


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    y = ops.softmax(Tensor(x)).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 30))
def test_band_pair_count_bounds(n, half):
    count = ops.band_pair_count(n, half)
    assert count <= n * (2 * half + 1)
    assert count <= n * n
    if 2 * half >= 2 * n:
        assert count == n * n


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=4), "s": np.array(1.5)}
    save_tensors(tmp_path / "a", tensors, {"note": "x"})
    loaded, meta = load_tensors(tmp_path / "a")
    for k, v in tensors.items():
        np.testing.assert_array_equal(loaded[k], v)
        assert loaded[k].shape == np.shape(v)
    assert meta == {"note": "x"}
    save_tensors(tmp_path / "b", loaded, meta)
    for name in ("manifest.json", "tensors.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_checkpoint_truncated_blob(tmp_path):
    save_tensors(tmp_path / "c", {"w": np.ones((4, 4))})
    blob = tmp_path / "c" / "tensors.bin"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_tensors(tmp_path / "c")


def test_checkpoint_corrupt_manifest(tmp_path):
    save_tensors(tmp_path / "c", {"w": np.ones(2)})
    (tmp_path / "c" / "manifest.json").write_text("{not json")
    with pytest.raises(CheckpointError):
        load_tensors(tmp_path / "c")
    with pytest.raises(CheckpointError):
        load_tensors(tmp_path / "missing")
