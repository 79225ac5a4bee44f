"""Gradient and forward-value checks for every differentiable primitive."""

import numpy as np
import pytest

from conftest import fd_check
from dam.diffcore import ShapeError, Tape, Tensor, ops


def t64(data, requires_grad=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


def rand64(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# --- forward values -----------------------------------------------------------


def test_conv2d_identity_kernel():
    x = t64(np.random.default_rng(0).standard_normal((6, 6, 1)))
    k = t64(np.ones((1, 1, 1, 1)))
    y = ops.conv2d(x, k)
    np.testing.assert_allclose(y.data, x.data)


def test_conv2d_all_ones_counts_overlap():
    x = t64(np.ones((5, 5, 1)))
    k = t64(np.ones((3, 3, 1, 1)))
    y = ops.conv2d(x, k).data[..., 0]
    assert y[2, 2] == 9.0  # interior: full 3x3 overlap
    for corner in ((0, 0), (0, 4), (4, 0), (4, 4)):
        assert y[corner] == 4.0  # corners: 2x2 overlap
    assert y[0, 2] == 6.0  # edges: 2x3 overlap


def test_conv2d_batched_matches_unbatched():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 5, 5, 2))
    k = rand64(rng, 3, 3, 2, 4)
    batched = ops.conv2d(t64(x), k).data
    for b in range(3):
        single = ops.conv2d(t64(x[b]), k).data
        np.testing.assert_allclose(batched[b], single, rtol=1e-12)


def test_conv2d_shape_errors():
    x = t64(np.zeros((4, 4, 2)))
    with pytest.raises(ShapeError, match="channel"):
        ops.conv2d(x, t64(np.zeros((3, 3, 3, 1))))
    with pytest.raises(ShapeError, match="odd"):
        ops.conv2d(x, t64(np.zeros((2, 2, 2, 1))))


def test_maxpool_hand_case_and_floor_shapes():
    y = ops.maxpool2x2(t64([[[1.0], [2.0]], [[3.0], [4.0]]]))
    assert y.data.ravel().tolist() == [4.0]
    y5 = ops.pool(t64(np.arange(25.0).reshape(5, 5, 1)), "max2x2")
    assert y5.shape == (2, 2, 1)
    with pytest.raises(ShapeError):
        ops.maxpool2x2(t64(np.zeros((1, 3, 1))))


def test_global_avg_pool_constant():
    x = t64(np.full((4, 3, 2), 7.5))
    np.testing.assert_allclose(ops.pool(x, "global_avg").data, [7.5, 7.5])


def test_activations_hand_values():
    assert ops.relu(t64([-3.0, 3.0])).data.tolist() == [0.0, 3.0]
    assert ops.activation(t64([0.0]), "sigmoid").data[0] == 0.5
    np.testing.assert_allclose(ops.softplus(t64([0.0])).data, np.log(2.0))
    # stability in the tails
    assert np.isfinite(ops.sigmoid(t64([-1e4, 1e4])).data).all()
    assert np.isfinite(ops.softplus(t64([-1e4, 1e4])).data).all()


def test_linear_hand_values():
    y = ops.linear(t64([2.0, 3.0]), t64([[1.0, 1.0]]), t64([0.0]))
    assert y.data.tolist() == [5.0]
    eye = ops.linear(t64([1.0, 2.0]), t64(np.eye(2)), t64([0.0, 0.0]))
    assert eye.data.tolist() == [1.0, 2.0]
    with pytest.raises(ShapeError):
        ops.linear(t64([1.0, 2.0, 3.0]), t64([[1.0, 1.0]]), t64([0.0]))


def test_batch_norm_standardizes():
    rng = np.random.default_rng(2)
    x = t64(rng.standard_normal((4, 3, 3, 2)) * 5 + 3)
    y = ops.batch_norm(x, t64(np.ones(2)), t64(np.zeros(2)))
    np.testing.assert_allclose(y.data.mean(axis=(0, 1, 2)), 0.0, atol=1e-4)
    np.testing.assert_allclose(y.data.var(axis=(0, 1, 2)), 1.0, atol=1e-4)
    # constant channel -> output equals shift
    xc = t64(np.full((3, 2, 2, 1), 4.0))
    yc = ops.batch_norm(xc, t64(np.ones(1)), t64(np.full(1, 0.25)))
    np.testing.assert_allclose(yc.data, 0.25, atol=1e-3)
    with pytest.raises(ShapeError, match="batch size"):
        ops.batch_norm(t64(np.zeros((1, 2, 2, 1))), t64(np.ones(1)), t64(np.zeros(1)))


def test_softmax_cross_entropy_values():
    uniform = ops.softmax_cross_entropy(t64(np.zeros(5)), np.eye(5)[2])
    np.testing.assert_allclose(uniform.item(), np.log(5.0), rtol=1e-12)
    big_margin = ops.softmax_cross_entropy(t64([50.0, 0.0]), np.asarray([1.0, 0.0]))
    assert big_margin.item() < 1e-9
    with pytest.raises(ValueError, match="one-hot"):
        ops.softmax_cross_entropy(t64([0.0, 0.0]), np.asarray([1.0, 1.0]))


def test_reductions_and_softmax_values():
    x = t64([[1.0, 2.0], [3.0, 4.0]])
    assert ops.sum_(x).item() == 10.0
    assert ops.mean(x, axis=0).data.tolist() == [2.0, 3.0]
    np.testing.assert_allclose(ops.logsumexp(x, axis=1).data, np.log(np.exp([[1, 2], [3, 4]]).sum(axis=1)))
    np.testing.assert_allclose(ops.softmax(x, axis=1).data.sum(axis=1), 1.0)


# --- gradient suite -----------------------------------------------------------


@pytest.mark.parametrize(
    "name,builder",
    [
        ("add", lambda a, b: ops.add(a, b)),
        ("sub", lambda a, b: ops.sub(a, b)),
        ("mul", lambda a, b: ops.mul(a, b)),
        ("div", lambda a, b: ops.div(a, b)),
    ],
)
def test_binary_op_gradients(name, builder):
    rng = np.random.default_rng(3)
    a = rand64(rng, 4, 3)
    b = Tensor(rng.standard_normal((4, 3)) + 3.0, requires_grad=True)  # away from 0 for div
    fd_check(lambda: ops.sum_(ops.mul(builder(a, b), builder(a, b))), [a, b])


def test_broadcast_gradients():
    rng = np.random.default_rng(4)
    a = rand64(rng, 4, 3)
    b = rand64(rng, 3)
    fd_check(lambda: ops.sum_(ops.square(ops.add(a, b))), [a, b])


@pytest.mark.parametrize(
    "name,fn,shift",
    [
        ("neg", ops.neg, 0.0),
        ("exp", ops.exp, 0.0),
        ("log", ops.log, 4.0),
        ("square", ops.square, 0.0),
        ("sqrt", ops.sqrt, 4.0),
        ("relu", ops.relu, 0.0),
        ("sigmoid", ops.sigmoid, 0.0),
        ("softplus", ops.softplus, 0.0),
    ],
)
def test_unary_op_gradients(name, fn, shift):
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((4, 5)) + shift, requires_grad=True)
    if name == "relu":  # keep samples away from the kink
        x.data[np.abs(x.data) < 1e-2] += 0.1
    fd_check(lambda: ops.sum_(ops.mul(fn(x), fn(x))), [x])


def test_sigmoid_gradient_absolute_tolerance():
    rng = np.random.default_rng(6)
    x = Tensor(rng.uniform(-4, 4, size=12), requires_grad=True)
    with Tape() as tape:
        tape.backward(ops.sum_(ops.sigmoid(x)))
    step = 1e-5
    for i in range(x.size):
        orig = x.data[i]
        x.data[i] = orig + step
        fp = ops.sum_(ops.sigmoid(x)).item()
        x.data[i] = orig - step
        fm = ops.sum_(ops.sigmoid(x)).item()
        x.data[i] = orig
        assert abs(x.grad[i] - (fp - fm) / (2 * step)) <= 1e-6


def test_shape_op_gradients():
    rng = np.random.default_rng(7)
    a = rand64(rng, 3, 4)
    b = rand64(rng, 2, 4)

    def loss():
        c = ops.concat([a, b], axis=0)
        n = ops.narrow(c, 0, 1, 3)
        g = ops.index_select(n, np.asarray([0, 2, 2, 1]))
        r = ops.reshape(g, (2, 8))
        return ops.sum_(ops.square(ops.transpose2d(r)))

    fd_check(loss, [a, b])


def test_reduction_gradients():
    rng = np.random.default_rng(8)
    x = rand64(rng, 3, 4)
    fd_check(lambda: ops.sum_(ops.square(ops.mean(x, axis=1))), [x])
    fd_check(lambda: ops.sum_(ops.square(ops.logsumexp(x, axis=0))), [x])
    fd_check(lambda: ops.sum_(ops.square(ops.softmax(x, axis=1))), [x])
    fd_check(lambda: ops.mean(ops.square(ops.sum_(x, axis=1, keepdims=True))), [x])


def test_matmul_linear_gradients():
    rng = np.random.default_rng(9)
    a = rand64(rng, 3, 4)
    b = rand64(rng, 4, 2)
    fd_check(lambda: ops.sum_(ops.square(ops.matmul(a, b))), [a, b])
    x1 = rand64(rng, 4)
    w = rand64(rng, 3, 4)
    bias = rand64(rng, 3)
    fd_check(lambda: ops.sum_(ops.square(ops.linear(x1, w, bias))), [x1, w, bias], rtol=1e-5)
    x2 = rand64(rng, 5, 4)
    fd_check(lambda: ops.sum_(ops.square(ops.linear(x2, w, bias))), [x2, w, bias], rtol=1e-5)


def test_conv2d_gradient_vs_finite_differences():
    rng = np.random.default_rng(10)
    x = rand64(rng, 4, 4, 2)
    k = rand64(rng, 3, 3, 2, 3)
    worst = fd_check(lambda: ops.sum_(ops.square(ops.conv2d(x, k))), [x, k])
    assert worst <= 1e-4  # tighter documented bound for this case


def test_conv2d_batched_gradients():
    rng = np.random.default_rng(11)
    x = rand64(rng, 2, 5, 5, 3)
    k = rand64(rng, 3, 3, 3, 2)
    fd_check(lambda: ops.sum_(ops.square(ops.conv2d(x, k))), [x, k])


def test_pool_gradients():
    rng = np.random.default_rng(12)
    x = rand64(rng, 2, 4, 4, 2)
    fd_check(lambda: ops.sum_(ops.square(ops.maxpool2x2(x))), [x])
    fd_check(lambda: ops.sum_(ops.square(ops.global_avg_pool(x))), [x])


def test_batch_norm_gradients():
    rng = np.random.default_rng(13)
    x = rand64(rng, 4, 3, 3, 2)
    scale = Tensor(rng.uniform(0.5, 1.5, size=2), requires_grad=True)
    shift = rand64(rng, 2)
    fd_check(lambda: ops.sum_(ops.square(ops.batch_norm(x, scale, shift))), [x, scale, shift])


def test_softmax_cross_entropy_gradient_is_softmax_minus_target():
    rng = np.random.default_rng(14)
    logits = rand64(rng, 6)
    target = np.eye(6)[3]
    with Tape() as tape:
        tape.backward(ops.softmax_cross_entropy(logits, target))
    z = logits.data - logits.data.max()
    p = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(logits.grad, p - target, rtol=1e-10)
    fd_check(lambda: ops.softmax_cross_entropy(logits, target), [logits])


# --- tape semantics -------------------------------------------------------------


def test_composite_matches_fused_form():
    # d/dx sum((x*y)^2) = 2*x*y^2 : two recorded primitives vs the hand fusion
    rng = np.random.default_rng(15)
    x = rand64(rng, 5)
    y = rand64(rng, 5)
    with Tape() as tape:
        tape.backward(ops.sum_(ops.square(ops.mul(x, y))))
    np.testing.assert_allclose(x.grad, 2 * x.data * y.data**2, rtol=1e-12)
    np.testing.assert_allclose(y.grad, 2 * y.data * x.data**2, rtol=1e-12)


def test_gradient_accumulates_over_reuse():
    x = t64([3.0])
    with Tape() as tape:
        tape.backward(ops.sum_(ops.add(ops.square(x), ops.square(x))))
    np.testing.assert_allclose(x.grad, [12.0])


def test_no_tape_records_nothing():
    x = t64([1.0])
    y = ops.square(x)
    assert y.data[0] == 1.0 and y.requires_grad


def test_backward_requires_scalar():
    x = t64([1.0, 2.0])
    with Tape() as tape:
        y = ops.square(x)
        with pytest.raises(ShapeError, match="scalar"):
            tape.backward(y)


def test_forward_deterministic_and_finite():
    rng = np.random.default_rng(16)
    x = rand64(rng, 3, 6, 6, 2)
    k = rand64(rng, 3, 3, 2, 4)
    a = ops.relu(ops.conv2d(x, k))
    b = ops.relu(ops.conv2d(x, k))
    np.testing.assert_array_equal(a.data, b.data)
    assert np.isfinite(a.data).all()


def test_operator_sugar():
    a = t64([2.0])
    b = t64([4.0])
    assert (a + b).data[0] == 6.0
    assert (a - b).data[0] == -2.0
    assert (a * b).data[0] == 8.0
    assert (b / a).data[0] == 2.0
    assert (-a).data[0] == -2.0
    assert (a + 1.0).data[0] == 3.0
    assert (2.0 * b).data[0] == 8.0
