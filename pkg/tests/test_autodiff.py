import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from recbench import autodiff as ad
from recbench.autodiff import checkpoint
from recbench.errors import NonFiniteError, ShapeMismatchError

RNG = np.random.default_rng(1234)


def T(x, grad=True):
    return ad.Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def away_from_zero(shape, rng=RNG):
    x = rng.uniform(0.2, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


# --------------------------------------------------------------- elementwise


def test_relu_and_sigmoid_values():
    np.testing.assert_array_equal(ad.relu(T([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert ad.sigmoid(T(0.0)).data == 0.5


@pytest.mark.parametrize("kind", ["add", "sub", "mul"])
@pytest.mark.parametrize("shapes", [((3, 4), (3, 4)), ((2, 3, 4), (4,)), ((5, 1), (1, 6))])
def test_binary_ops_gradients(kind, shapes):
    a, b = T(RNG.normal(size=shapes[0])), T(RNG.normal(size=shapes[1]))
    err = ad.grad_check(lambda xs: ad.tsum(ad.square(ad.elementwise(kind, xs[0], xs[1]))), [a, b])
    assert err < 1e-6


@pytest.mark.parametrize("kind", ["relu", "sigmoid", "tanh"])
def test_unary_ops_gradients(kind):
    x = T(away_from_zero((4, 5)))
    assert ad.grad_check(lambda t: ad.tsum(ad.square(ad.elementwise(kind, t))), x) < 1e-6


def test_other_op_gradients():
    x = T(RNG.uniform(0.5, 2.0, size=(3, 4)))
    y = T(RNG.uniform(0.5, 2.0, size=(3, 4)))
    assert ad.grad_check(lambda xs: ad.tsum(ad.div(ad.log(xs[0]), xs[1])), [x, y]) < 1e-6
    assert ad.grad_check(lambda t: ad.mean(ad.exp(t)), x) < 1e-6
    assert ad.grad_check(lambda t: ad.tsum(ad.square(ad.transpose(ad.reshape(t, (4, 3))))), x) < 1e-6
    assert ad.grad_check(lambda t: ad.tsum(ad.square(ad.concat([t, t[:, 1:3]], axis=1))), x) < 1e-6
    table = T(RNG.normal(size=(6, 3)))
    idx = np.array([[0, 2, 2], [5, 0, 1]])
    assert ad.grad_check(lambda t: ad.tsum(ad.square(ad.take(t, idx))), table) < 1e-6


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        ad.add(T(np.ones((2, 3))), T(np.ones((4,))))
    with pytest.raises(ShapeMismatchError):
        ad.matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))


def test_non_finite_rejected():
    with pytest.raises(NonFiniteError):
        T([1.0, math.nan])
    with pytest.raises(NonFiniteError):
        ad.log(T([0.0]))
    with pytest.raises(NonFiniteError):
        ad.div(T([1.0]), T([0.0]))


# ---------------------------------------------------------------- algebra


def test_matmul_examples():
    a = RNG.normal(size=(3, 3))
    np.testing.assert_allclose(ad.matmul(T(a), T(np.eye(3))).data, a)
    np.testing.assert_array_equal(ad.matmul(T(np.ones((1, 3))), T(np.ones((3, 1)))).data, [[3.0]])


def test_matmul_gradient():
    a, b = T(RNG.normal(size=(4, 5))), T(RNG.normal(size=(5, 3)))
    assert ad.grad_check(lambda xs: ad.tsum(ad.square(ad.matmul(xs[0], xs[1]))), [a, b]) < 1e-6
    a3 = T(RNG.normal(size=(2, 4, 5)))
    assert ad.grad_check(lambda xs: ad.tsum(ad.square(ad.matmul(xs[0], xs[1]))), [a3, b]) < 1e-6


def test_conv_identity():
    x = RNG.normal(size=(5, 6, 1))
    out = ad.conv2d_maxpool(T(x), T(np.ones((1, 1, 1, 1))), 1, (1, 1))
    np.testing.assert_array_equal(out.data, x)


def test_conv_output_size():
    out = ad.conv2d_maxpool(T(np.zeros((10, 16, 1))), T(np.zeros((3, 3, 1, 2))), 1, (2, 2))
    assert out.shape == (4, 7, 2)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_gradient(stride):
    x = T(RNG.normal(size=(2, 7, 6, 2)))
    k = T(RNG.normal(size=(3, 2, 2, 3)))
    assert ad.grad_check(lambda xs: ad.tsum(ad.square(ad.conv2d_maxpool(xs[0], xs[1], stride, (2, 2)))), [x, k]) < 1e-5


def test_conv_shape_errors():
    with pytest.raises(ShapeMismatchError):
        ad.conv2d_maxpool(T(np.zeros((2, 2, 1))), T(np.zeros((3, 3, 1, 1))))
    with pytest.raises(ShapeMismatchError):
        ad.conv2d_maxpool(T(np.zeros((5, 5, 2))), T(np.zeros((3, 3, 1, 1))))


# ---------------------------------------------------------- softmax & losses


def test_cross_entropy_uniform_and_saturated():
    c = 7
    y = np.eye(c)[[2, 4]]
    assert ad.softmax_cross_entropy(T(np.zeros((2, c))), y).item() == pytest.approx(math.log(c), abs=1e-12)
    assert ad.softmax_cross_entropy(T(50.0 * y), y).item() < 1e-6


def test_cross_entropy_gradient_identity():
    z = T(RNG.normal(size=(3, 7)))
    y = np.eye(7)[[0, 3, 6]]
    with ad.Tape() as tape:
        loss = ad.softmax_cross_entropy(z, y)
    tape.backward(loss)
    p = np.exp(z.data) / np.exp(z.data).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(z.grad, (p - y) / 3, atol=1e-10)
    assert ad.grad_check(lambda t: ad.softmax_cross_entropy(t, y), z) < 1e-6
    with pytest.raises(ShapeMismatchError):
        ad.softmax_cross_entropy(z, np.eye(6)[[0, 1, 2]])


def test_softmax_rows_sum_to_one():
    p = ad.softmax(T(RNG.normal(size=(5, 9)) * 20)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    x = T(RNG.normal(size=(3, 4)))
    w = RNG.normal(size=(3, 4))
    assert ad.grad_check(lambda t: ad.tsum(ad.mul(ad.softmax(t), w)), x) < 1e-6


def test_bce_layer_norm_l2_gradients():
    z = T(RNG.normal(size=(4, 3)))
    y = (RNG.random((4, 3)) > 0.5).astype(float)
    assert ad.grad_check(lambda t: ad.bce_with_logits(t, y, weight=np.array([1.0, 2.0, 0.5])), z) < 1e-6
    x, g, b = T(RNG.normal(size=(3, 5))), T(RNG.normal(size=5)), T(RNG.normal(size=5))
    w = RNG.normal(size=(3, 5))
    assert ad.grad_check(lambda xs: ad.tsum(ad.mul(ad.layer_norm(*xs), w)), [x, g, b]) < 1e-6
    assert ad.grad_check(lambda t: ad.tsum(ad.mul(ad.l2_normalize(t), w)), x) < 1e-6


def test_lstm_gradient_with_padding():
    xw, wh, b = T(RNG.normal(size=(3, 4, 8))), T(RNG.normal(size=(2, 8)) * 0.5), T(RNG.normal(size=8))
    mask = np.array([[1, 1, 0, 0], [1, 1, 1, 1], [1, 0, 0, 0]], dtype=bool)
    assert ad.grad_check(lambda xs: ad.tsum(ad.square(ad.lstm(xs[0], xs[1], xs[2], mask))), [xw, wh, b]) < 1e-6


def test_lstm_padding_leaves_state_unchanged():
    xw, wh, b = RNG.normal(size=(1, 5, 8)), RNG.normal(size=(2, 8)), RNG.normal(size=8)
    short = ad.lstm(T(xw[:, :2], False), T(wh, False), T(b, False), np.ones((1, 2), dtype=bool))
    padded = ad.lstm(T(xw, False), T(wh, False), T(b, False), np.array([[1, 1, 0, 0, 0]], dtype=bool))
    np.testing.assert_array_equal(short.data, padded.data)


# ------------------------------------------------------------------ dropout


def test_dropout_identities():
    x = T(RNG.normal(size=(4, 4)))
    assert ad.dropout(x, 0.5, training=False) is x
    assert ad.dropout(x, 0.0, training=True, seed=1) is x


def test_dropout_survivor_fraction():
    out = ad.dropout(T(np.ones(100_000)), 0.5, training=True, seed=3).data
    assert abs((out != 0).mean() - 0.5) <= 0.01
    np.testing.assert_array_equal(out[out != 0], 2.0)


# ---------------------------------------------------------------- optimizers


def test_sgd_step():
    p = np.array([1.0])
    ad.optimizer_step("sgd", [p], [np.array([2.0])], {}, 0.1)
    assert p[0] == pytest.approx(0.8)


def test_adam_first_step_magnitude():
    p = np.array([0.0, 0.0])
    ad.optimizer_step("adam", [p], [np.array([3.0, -0.01])], {}, 0.01)
    np.testing.assert_allclose(np.abs(p), 0.01, rtol=1e-5)


def test_adam_converges_on_square():
    x = ad.Tensor(np.array([5.0]), requires_grad=True)
    opt = ad.Optimizer([x], "adam", 0.1)
    for _ in range(100):
        with ad.Tape() as tape:
            loss = ad.tsum(ad.square(x))
        tape.backward(loss)
        opt.step()
        opt.zero_grad()
    assert abs(x.data[0]) < 0.5


def test_optimizer_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        ad.optimizer_step("sgd", [np.zeros(2)], [np.zeros(3)], {}, 0.1)


# ------------------------------------------------------------ tape & checks


def test_grad_check_simple_functions():
    x = T(RNG.normal(size=(4, 3)))
    assert ad.grad_check(lambda t: ad.tsum(ad.square(t)), x) < 1e-8
    y = T(away_from_zero((4, 3)))
    assert ad.grad_check(lambda t: ad.tsum(ad.mul(ad.relu(t), 3.0)), y) < 1e-6


def test_shared_input_accumulates():
    x = T([2.0])
    with ad.Tape() as tape:
        y = ad.add(ad.mul(x, x), ad.mul(x, 3.0))
    tape.backward(y)
    assert x.grad[0] == pytest.approx(7.0)


def test_backward_visits_each_op_once():
    x = T([1.0, 2.0])
    with ad.Tape() as tape:
        h = ad.mul(x, 2.0)
        loss = ad.tsum(ad.add(h, h))
    calls = []
    tape.ops = [(o, i, (lambda fn: lambda g: (calls.append(1), fn(g)))(fn)) for o, i, fn in tape.ops]
    tape.backward(loss)
    assert len(calls) == 3
    np.testing.assert_array_equal(x.grad, [4.0, 4.0])


def test_no_recording_outside_tape():
    x = T([1.0])
    y = ad.mul(x, 2.0)
    assert ad.active_tape() is None
    assert y.requires_grad


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=4),
                  elements=st.floats(-3, 3, allow_nan=False)))
def test_sum_of_squares_gradient_property(arr):
    x = T(arr.copy())
    with ad.Tape() as tape:
        loss = ad.tsum(ad.square(x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * arr)


# --------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    params = {"w": RNG.normal(size=(3, 4)), "b": np.zeros(4), "s": np.array(2.5)}
    blob = checkpoint.dumps(params)
    back = checkpoint.loads(blob)
    assert list(back) == ["w", "b", "s"]
    for k in params:
        assert back[k].tobytes() == np.asarray(params[k]).tobytes()
    assert checkpoint.dumps(back) == blob
    checkpoint.save(params, tmp_path / "p.ckpt")
    assert checkpoint.dumps(checkpoint.load(tmp_path / "p.ckpt")) == blob


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        checkpoint.loads(b"XXXX" + bytes(8))
    with pytest.raises(ValueError):
        checkpoint.loads(checkpoint.dumps({"a": np.ones(2)}) + b"\0")
