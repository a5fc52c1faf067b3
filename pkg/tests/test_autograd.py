import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pranet import ops
from pranet.autograd import GradTape, Tensor, backward, float64_mode
from pranet.errors import InvalidArgument, NumericError
from pranet.gradcheck import analytic_grads, check_gradients, numeric_grad, relative_error
from pranet.optim import AdamState, adam_step

from oracles import naive_bilinear, naive_conv2d, scalar_adam


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float32), requires_grad=grad)


# ---------------------------------------------------------------- conv2d

def test_conv_scalar_kernel():
    out = ops.conv2d(T(np.ones((1, 1, 3, 3))), T([[[[2.0]]]]), T([0.0]))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))


def test_conv_zero_kernel_annihilates():
    rng = np.random.default_rng(0)
    out = ops.conv2d(T(rng.normal(size=(2, 3, 6, 6))), T(np.zeros((4, 3, 3, 3))), T(np.zeros(4)), 2, 1)
    assert not out.data.any()


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 2, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = ops.conv2d(T(x), T(w), T(b), stride=1, padding=1)
    np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, 1, 1), atol=1e-5)


@settings(max_examples=100, deadline=None)
@given(
    n=st.integers(1, 2), cin=st.integers(1, 3), cout=st.integers(1, 3),
    h=st.integers(3, 7), w=st.integers(3, 7), k=st.sampled_from([1, 3, 5]),
    stride=st.integers(1, 2), pad=st.integers(0, 2), seed=st.integers(0, 2**31),
)
def test_conv_random_shapes_match_oracle(n, cin, cout, h, w, k, stride, pad, seed):
    if h + 2 * pad < k or w + 2 * pad < k:
        return
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (n, cin, h, w))
    wt = rng.uniform(-1, 1, (cout, cin, k, k))
    b = rng.uniform(-1, 1, cout)
    out = ops.conv2d(T(x), T(wt), T(b), stride, pad)
    np.testing.assert_allclose(out.data, naive_conv2d(x, wt, b, stride, pad), atol=1e-5)


def test_conv_rejects_channel_mismatch():
    with pytest.raises(InvalidArgument):
        ops.conv2d(T(np.ones((1, 2, 4, 4))), T(np.ones((1, 3, 3, 3))))


def test_conv_rejects_even_kernel():
    with pytest.raises(InvalidArgument):
        ops.conv2d(T(np.ones((1, 1, 4, 4))), T(np.ones((1, 1, 2, 2))))


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
def test_non_finite_output_is_reported():
    x = T(np.full((1, 1, 2, 2), 3e38))
    with pytest.raises(NumericError):
        ops.conv2d(x, T(np.full((1, 1, 1, 1), 10.0)))


# ---------------------------------------------------------------- resize

def test_resize_identity_is_bitwise():
    x = np.random.default_rng(2).normal(size=(2, 3, 5, 7)).astype(np.float32)
    out = ops.bilinear_resize(T(x), 5, 7)
    assert out.data.tobytes() == x.tobytes()


@pytest.mark.parametrize("size", [(1, 1), (3, 9), (16, 4)])
def test_resize_preserves_constants(size):
    out = ops.bilinear_resize(T(np.full((1, 2, 6, 5), 0.37)), *size)
    np.testing.assert_allclose(out.data, 0.37, rtol=1e-6)


def test_resize_2x2_to_4x4_matches_scalar_oracle():
    src = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = ops.bilinear_resize(T(src[None, None]), 4, 4)
    expected = naive_bilinear(src, 4, 4)
    np.testing.assert_allclose(out.data[0, 0], expected, atol=1e-6)
    # corners clamp, interior follows half-pixel centres
    assert expected[0, 0] == 1.0 and expected[1, 1] == pytest.approx(1.75)


def test_resize_downsample_matches_oracle():
    src = np.random.default_rng(3).normal(size=(7, 9))
    out = ops.bilinear_resize(T(src[None, None]), 3, 4)
    np.testing.assert_allclose(out.data[0, 0], naive_bilinear(src, 3, 4), atol=1e-5)


# ---------------------------------------------------------------- elementwise

def test_sigmoid_zero_is_half():
    out = ops.sigmoid(T(np.zeros((1, 2, 3, 3))))
    assert np.all(out.data == 0.5)


def test_mul_by_ones_is_identity():
    x = np.random.default_rng(4).normal(size=(2, 3, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(ops.mul(T(x), T(np.ones_like(x))).data, x)


def test_sigmoid_20_closed_form():
    with float64_mode():
        out = ops.sigmoid(Tensor(np.full((1, 1, 1, 1), 20.0))).item()
    assert out == pytest.approx(1 / (1 + math.exp(-20)), rel=1e-9)


def test_channel_broadcast_and_rejection():
    a = T(np.ones((2, 3, 4, 4)))
    m = T(np.full((2, 1, 4, 4), 2.0))
    assert ops.mul(a, m).shape == (2, 3, 4, 4)
    with pytest.raises(InvalidArgument):
        ops.add(a, T(np.ones((2, 2, 4, 4))))
    with pytest.raises(InvalidArgument):
        ops.add(a, T(np.ones((2, 3, 4, 5))))


def test_relu_subgradient_at_zero_is_zero():
    x = T(np.zeros((1, 1, 2, 2)), grad=True)
    with GradTape() as tape:
        loss = ops.sum(ops.relu(x))
    assert not tape.backward(loss)[x].any()


# ---------------------------------------------------------------- concat

def test_concat_single_and_layout():
    a = np.random.default_rng(5).normal(size=(1, 2, 3, 3)).astype(np.float32)
    b = np.random.default_rng(6).normal(size=(1, 3, 3, 3)).astype(np.float32)
    np.testing.assert_array_equal(ops.concat_channels([T(a)]).data, a)
    out = ops.concat_channels([T(a), T(b)]).data
    assert out.shape == (1, 5, 3, 3)
    np.testing.assert_array_equal(out[:, :2], a)
    np.testing.assert_array_equal(out[:, 2:], b)


def test_concat_rejects_spatial_mismatch():
    with pytest.raises(InvalidArgument):
        ops.concat_channels([T(np.ones((1, 1, 3, 3))), T(np.ones((1, 1, 3, 4)))])


def test_concat_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    a, b = rng.uniform(-1, 1, (1, 2, 3, 3)), rng.uniform(-1, 1, (1, 1, 3, 3))
    err = check_gradients(lambda a, b: ops.sum(ops.concat_channels([a, b])), [a, b])
    assert err < 1e-3
    ga, gb = analytic_grads(lambda a, b: ops.sum(ops.concat_channels([a, b])), [a, b])
    assert np.all(ga == 1) and np.all(gb == 1)


# ---------------------------------------------------------------- backward

def test_linear_map_gradient():
    x = T(np.random.default_rng(8).normal(size=(1, 1, 3, 3)), grad=True)
    with GradTape() as tape:
        loss = ops.sum(ops.scale(x, 3.0))
    np.testing.assert_array_equal(tape.backward(loss)[x], 3.0)


def test_disconnected_leaf_gets_zero():
    x = T(np.ones((1, 1, 2, 2)), grad=True)
    y = T(np.ones((1, 1, 2, 2)), grad=True)
    with GradTape() as tape:
        ops.sum(x)  # x is on the tape but does not feed the loss
        loss = ops.sum(ops.mul(y, 2.0))
    grads = tape.backward(loss)
    assert not grads[x].any()


def test_backward_rejects_non_scalar():
    x = T(np.ones((1, 1, 2, 2)), grad=True)
    with GradTape() as tape:
        y = ops.scale(x, 2.0)
    with pytest.raises(InvalidArgument):
        backward(y, tape)


def test_repeated_use_accumulates():
    x = T(np.full((1, 1, 2, 2), 3.0), grad=True)
    with GradTape() as tape:
        loss = ops.sum(ops.mul(x, x))
    np.testing.assert_allclose(tape.backward(loss)[x], 6.0)


def test_composite_conv_sigmoid_mul_fd():
    rng = np.random.default_rng(9)
    x = rng.uniform(-1, 1, (1, 1, 4, 4))
    w = rng.uniform(-1, 1, (1, 1, 3, 3))
    b = rng.uniform(-1, 1, 1)
    m = rng.uniform(-1, 1, (1, 1, 4, 4))

    def f(x, w, b, m):
        return ops.sum(ops.mul(ops.sigmoid(ops.conv2d(x, w, b, 1, 1)), m))

    assert check_gradients(f, [x, w, b, m]) < 1e-3


def _away_from_kink(a, margin=5e-3):
    return np.where(np.abs(a) < margin, np.sign(a + 1e-12) * margin * 2, a)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), h=st.integers(2, 5), w=st.integers(2, 5), c=st.integers(1, 3))
def test_gradients_of_each_op(seed, h, w, c):
    rng = np.random.default_rng(seed)
    x = _away_from_kink(rng.uniform(-1, 1, (1, c, h, w)))
    y = rng.uniform(-1, 1, (1, c, h, w))
    m = rng.uniform(-1, 1, (1, 1, h, w))
    probes = [
        (lambda x, y: ops.sum(ops.mul(ops.add(x, y), y)), [x, y]),
        (lambda x, y: ops.sum(ops.mul(ops.sub(x, y), x)), [x, y]),
        (lambda x, m: ops.sum(ops.mul(ops.mul(x, m), x)), [x, m]),
        (lambda x: ops.sum(ops.mul(ops.sigmoid(x), x)), [x]),
        (lambda x: ops.sum(ops.mul(ops.reverse_sigmoid(x), x)), [x]),
        (lambda x, y: ops.sum(ops.mul(ops.relu(x), y)), [x, y]),
        (lambda x: ops.mean(ops.mul(ops.scale(x, -1.7), x)), [x]),
        (lambda x, y: ops.sum(ops.mul(ops.bilinear_resize(x, 3, 4), ops.bilinear_resize(y, 3, 4))), [x, y]),
        (lambda x, y: ops.sum(ops.mul(ops.concat_channels([x, y]), ops.concat_channels([y, x]))), [x, y]),
    ]
    for f, args in probes:
        assert check_gradients(f, args) < 1e-3


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), stride=st.integers(1, 2), pad=st.integers(0, 1))
def test_conv_gradients(seed, stride, pad):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (2, 2, 5, 5))
    w = rng.uniform(-1, 1, (3, 2, 3, 3))
    b = rng.uniform(-1, 1, 3)
    r = rng.uniform(-1, 1, ((5 + 2 * pad - 3) // stride + 1,) * 2)

    probe = Tensor(np.broadcast_to(r, (2, 3) + r.shape).copy(), dtype=np.float64)

    def f(x, w, b):
        return ops.sum(ops.mul(ops.conv2d(x, w, b, stride, pad), probe))

    assert check_gradients(f, [x, w, b]) < 1e-3


def test_backward_is_linear():
    rng = np.random.default_rng(10)
    x = rng.uniform(-1, 1, (1, 2, 4, 4))
    w = rng.uniform(-1, 1, (1, 2, 3, 3))

    def l1(x, w):
        return ops.sum(ops.sigmoid(ops.conv2d(x, w, None, 1, 1)))

    def l2(x, w):
        y = ops.conv2d(x, w, None, 1, 1)
        return ops.sum(ops.mul(y, y))

    a, b = 0.7, -1.3
    g1 = analytic_grads(l1, [x, w])
    g2 = analytic_grads(l2, [x, w])
    gc = analytic_grads(lambda x, w: ops.add(ops.scale(l1(x, w), a), ops.scale(l2(x, w), b)), [x, w])
    for k in range(2):
        np.testing.assert_allclose(gc[k], a * g1[k] + b * g2[k], rtol=1e-5, atol=1e-12)


def test_repeated_runs_are_bitwise_identical():
    def run():
        rng = np.random.default_rng(11)
        x = T(rng.normal(size=(2, 3, 8, 8)), grad=True)
        w = T(rng.normal(size=(4, 3, 3, 3)), grad=True)
        with GradTape() as tape:
            y = ops.bilinear_resize(ops.relu(ops.conv2d(x, w, None, 2, 1)), 7, 7)
            loss = ops.sum(ops.sigmoid(y))
        g = tape.backward(loss)
        return y.data.tobytes() + g[x].tobytes() + g[w].tobytes()

    assert run() == run()


def test_ops_without_tape_do_not_track():
    x = T(np.ones((1, 1, 2, 2)), grad=True)
    assert not ops.scale(x, 2.0).requires_grad


# ---------------------------------------------------------------- adam

def test_adam_zero_gradient_keeps_params():
    p = {"w": T(np.array([1.0, -2.0]))}
    state = AdamState.zeros(p)
    adam_step(p, {"w": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_hand_value():
    p = {"w": Tensor(np.array([1.0]), dtype=np.float64)}
    state = AdamState.zeros(p)
    adam_step(p, {"w": np.array([0.5])}, state, lr=0.1)
    assert p["w"].data[0] == pytest.approx(1 - 0.1 * 0.5 / (0.5 + 1e-8), abs=1e-12)
    assert p["w"].data[0] == pytest.approx(0.9, abs=1e-7)


def test_adam_two_steps_match_scalar_recurrence():
    p = {"w": Tensor(np.array([0.3]), dtype=np.float64)}
    state = AdamState.zeros(p)
    for _ in range(2):
        adam_step(p, {"w": np.array([-0.25])}, state, lr=0.01)
    assert p["w"].data[0] == pytest.approx(scalar_adam(0.3, [-0.25, -0.25], 0.01), abs=1e-7)
    assert state.t == 2


def test_adam_refuses_non_finite_gradient():
    p = {"w": T(np.array([1.0, 2.0]))}
    state = AdamState.zeros(p)
    with pytest.raises(NumericError):
        adam_step(p, {"w": np.array([np.nan, 0.0])}, state, lr=0.1)
    assert state.t == 0
    np.testing.assert_array_equal(p["w"].data, [1.0, 2.0])
    assert not state.m["w"].any()


def test_numeric_grad_subset_and_relative_error_floor():
    f = lambda x: ops.sum(ops.mul(x, x))  # noqa: E731
    x = np.array([[[[1.0, 2.0]]]])
    g = numeric_grad(f, [x], 0, indices=[1])
    assert np.isnan(g.ravel()[0]) and g.ravel()[1] == pytest.approx(4.0)
    assert relative_error(np.array([1e-9]), np.array([0.0])) < 1e-2
