import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pranet import loss, ops
from pranet.autograd import Tensor, float64_mode
from pranet.errors import InvalidArgument
from pranet.gradcheck import check_gradients
from pranet.model import SideOutputs

from oracles import naive_pixel_weights, naive_weighted_bce, naive_weighted_iou


def rand_mask(rng, shape, p=0.3):
    return (rng.uniform(size=shape) < p).astype(np.float32)


def test_constant_masks_have_unit_weights():
    for v in (0.0, 1.0):
        w = loss.pixel_weights(np.full((2, 1, 20, 17), v, dtype=np.float32)).data
        assert np.all(w == 1.0)


def test_half_plane_weights():
    g = np.zeros((1, 1, 64, 64), dtype=np.float32)
    g[..., 32:, :] = 1
    w = loss.pixel_weights(g).data[0, 0]
    np.testing.assert_allclose(w, naive_pixel_weights(g[0, 0]), atol=1e-6)
    col = w[:, 10]
    assert col.max() == col[31] == col[32]
    assert np.all(col[:17] == 1.0) and np.all(col[48:] == 1.0)
    assert np.all(np.diff(col[:32]) >= 0) and np.all(np.diff(col[32:]) <= 0)


def test_pixel_weights_match_oracle_on_random_masks():
    rng = np.random.default_rng(0)
    for _ in range(5):
        g = rand_mask(rng, (1, 1, 12, 19))
        np.testing.assert_allclose(loss.pixel_weights(g).data[0, 0], naive_pixel_weights(g[0, 0]), atol=1e-6)


def test_pixel_weights_reject_soft_mask():
    with pytest.raises(InvalidArgument):
        loss.pixel_weights(np.full((1, 1, 4, 4), 0.5))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), p=st.floats(0, 1), h=st.integers(1, 40), w=st.integers(1, 40))
def test_pixel_weights_range(seed, p, h, w):
    g = rand_mask(np.random.default_rng(seed), (1, 1, h, w), p)
    wt = loss.pixel_weights(g).data
    assert wt.min() >= 1.0 and wt.max() <= 6.0


def saturated(g, mag=20.0):
    return Tensor(np.where(g > 0, mag, -mag).astype(np.float32))


def test_bce_saturated_perfect():
    g = rand_mask(np.random.default_rng(1), (2, 1, 16, 16))
    assert loss.weighted_bce(saturated(g), g, loss.pixel_weights(g)).item() <= 1e-3


def test_bce_zero_logits_is_ln2():
    rng = np.random.default_rng(2)
    for _ in range(3):
        g = rand_mask(rng, (2, 1, 8, 8))
        val = loss.weighted_bce(Tensor(np.zeros(g.shape, np.float32)), g, np.ones_like(g)).item()
        assert val == pytest.approx(math.log(2), abs=1e-6)


def test_bce_single_pixel_weight_normalizes():
    one = np.ones((1, 1, 1, 1), np.float32)
    val = loss.weighted_bce(Tensor(np.zeros_like(one)), one, 3 * one).item()
    assert val == pytest.approx(math.log(2), abs=1e-6)


def test_bce_stable_for_huge_logits():
    g = np.array([[[[1.0, 0.0]]]], np.float32)
    x = Tensor(np.array([[[[-500.0, 500.0]]]], np.float32))
    assert loss.weighted_bce(x, g, np.ones_like(g)).item() == pytest.approx(500.0, rel=1e-6)


def test_iou_saturated_perfect_and_exact():
    g = rand_mask(np.random.default_rng(3), (2, 1, 16, 16))
    g[:, :, 0, 0] = 1
    w = loss.pixel_weights(g)
    assert loss.weighted_iou(saturated(g), g, w).item() <= 1e-3
    with float64_mode():
        # p == G exactly in the limit of infinite logits
        exact = Tensor(np.where(g > 0, 800.0, -800.0))
        assert loss.weighted_iou(exact, g, w.data.astype(np.float64)).item() == 0.0


def test_iou_two_by_two_transcription():
    g = np.array([[[[1, 0], [0, 0]]]], np.float64)
    with float64_mode():
        val = loss.weighted_iou(Tensor(np.zeros((1, 1, 2, 2))), g, np.ones_like(g)).item()
    inter = 0.5 * 1
    union = 4 * 0.5 + 1
    assert val == pytest.approx(1 - (inter + 1) / (union - inter + 1), abs=1e-6)


def test_bce_and_iou_match_loops():
    rng = np.random.default_rng(4)
    for _ in range(5):
        g = rand_mask(rng, (2, 1, 6, 7))
        x = rng.normal(0, 3, g.shape)
        w = rng.uniform(1, 6, g.shape)
        with float64_mode():
            bce = loss.weighted_bce(Tensor(x), g, w).item()
            iou = loss.weighted_iou(Tensor(x), g, w).item()
        assert bce == pytest.approx(naive_weighted_bce(x, g, w), abs=1e-9)
        assert iou == pytest.approx(naive_weighted_iou(x, g, w), abs=1e-9)


def test_shape_mismatch():
    with pytest.raises(InvalidArgument):
        loss.weighted_bce(Tensor(np.zeros((1, 1, 4, 4))), np.zeros((1, 1, 4, 5)), np.ones((1, 1, 4, 5)))


def side_outputs(rng, n=2, size=32):
    return SideOutputs(*(Tensor(rng.normal(0, 2, (n, 1, s, s)).astype(np.float32))
                         for s in (size // 4, size // 16, size // 8, size // 4)))


def test_total_is_sum_of_single_maps():
    rng = np.random.default_rng(5)
    g = rand_mask(rng, (2, 1, 32, 32))
    outs = side_outputs(rng)
    total, bd = loss.total_loss(outs, g)
    w = loss.pixel_weights(g)
    parts = [loss.structure_loss(ops.bilinear_resize(s, 32, 32), g, w)[0].item() for s in outs]
    assert total.item() == pytest.approx(sum(parts), abs=1e-6)
    assert [r[0] for r in bd.per_map] == list(loss.MAP_NAMES)
    assert bd.total == total.item()
    assert all(b >= 0 and 0 <= i <= 1 for _, b, i in bd.per_map)


def test_total_saturated_perfect():
    g = np.zeros((1, 1, 32, 32), np.float32)
    g[..., 8:24, 8:24] = 1
    outs = SideOutputs(*(saturated(ops.bilinear_resize(Tensor(g), s, s).data)
                         for s in (32, 32, 32, 32)))
    total, _ = loss.total_loss(outs, g)
    assert 0 <= total.item() <= 4e-3


def test_total_permutation_invariant():
    rng = np.random.default_rng(6)
    g = rand_mask(rng, (4, 1, 32, 32))
    outs = side_outputs(rng, n=4)
    perm = np.array([2, 0, 3, 1])
    shuffled = SideOutputs(*(Tensor(s.data[perm]) for s in outs))
    a = loss.total_loss(outs, g)[0].item()
    b = loss.total_loss(shuffled, g[perm])[0].item()
    assert a == pytest.approx(b, abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_loss_gradients(seed):
    rng = np.random.default_rng(seed)
    g = rand_mask(rng, (2, 1, 16, 16))
    w = loss.pixel_weights(g).data
    x = rng.normal(0, 2, g.shape)
    assert check_gradients(lambda t: loss.weighted_bce(t, g, w), [x]) < 1e-3
    assert check_gradients(lambda t: loss.weighted_iou(t, g, w), [x]) < 1e-3


def test_total_loss_gradient():
    rng = np.random.default_rng(7)
    g = rand_mask(rng, (2, 1, 16, 16))
    arrays = [rng.normal(0, 2, (2, 1, s, s)) for s in (4, 1, 2, 4)]
    err = check_gradients(lambda *ts: loss.total_loss(SideOutputs(*ts), g)[0], arrays)
    assert err < 1e-3
