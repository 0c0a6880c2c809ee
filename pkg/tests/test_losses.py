import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vbplupi import losses
from vbplupi.oracle import finite_diff_grad, relative_error
from vbplupi.tensor import ShapeError

VIS = np.array([[0.5, 0.2], [0.0, 1.0]])
SEG = np.array([[1.0, 0.0], [0.0, 1.0]])

unit = st.floats(0, 1)
masks = arrays(np.float64, (1, 4, 4), elements=unit)
binary = arrays(np.float64, (1, 4, 4), elements=st.sampled_from([0.0, 1.0]))


def test_full_worked_example():
    assert losses.lpi_full(VIS, SEG) == 0.7


def test_half_worked_example():
    assert losses.lpi_half(VIS, SEG) == 0.2


@given(binary)
def test_full_perfect_focus_and_cardinality(seg):
    assert losses.lpi_full(seg, seg) == 0
    assert losses.lpi_full(np.zeros_like(seg), seg) == seg.sum()


@given(masks)
def test_half_zero_when_nothing_outside(vis):
    assert losses.lpi_half(vis, np.ones_like(vis)) == 0


@given(masks, binary)
def test_half_zero_under_containment(vis, seg):
    assert losses.lpi_half(vis * seg, seg) == 0


@given(masks, binary)
def test_half_never_exceeds_full(vis, seg):
    # outside the mask both terms are equal; inside, the half term is zero
    assert losses.lpi_half(vis, seg) <= losses.lpi_full(vis, seg) + 1e-12


def test_batch_losses_are_sample_means():
    vis = np.stack([VIS[None], np.zeros((1, 2, 2))])
    seg = np.stack([SEG[None], SEG[None]])
    assert losses.lpi_full(vis, seg) == pytest.approx((0.7 + 2.0) / 2)
    assert losses.lpi_half(vis, seg) == pytest.approx(0.1)


def test_lpi_shape_mismatch():
    with pytest.raises(ShapeError):
        losses.lpi_full(np.zeros((2, 2)), np.zeros((2, 3)))


@pytest.mark.parametrize("fn,grad", [(losses.lpi_full, losses.lpi_full_grad), (losses.lpi_half, losses.lpi_half_grad)])
def test_lpi_gradients_finite_differences(rng, fn, grad):
    vis = rng.uniform(0.05, 0.95, size=(3, 1, 4, 4))
    seg = (rng.random((3, 1, 4, 4)) < 0.5).astype(float)
    num = finite_diff_grad(lambda: fn(vis, seg), vis)
    assert relative_error(grad(vis, seg), num) < 1e-6


def test_bce_perfect_prediction():
    y = np.array([1.0, 0.0, 1.0])
    assert losses.bce_multilabel(y, y) < 1e-11


def test_bce_half_is_log2():
    assert losses.bce_multilabel(np.full(3, 0.5), np.array([1.0, 0.0, 1.0])) == pytest.approx(math.log(2), abs=1e-12)


def test_bce_single_class():
    assert losses.bce_multilabel(np.array([0.9]), np.array([1.0])) == pytest.approx(0.105361, abs=1e-6)


def test_bce_gradient_finite_differences(rng):
    p = rng.uniform(0.05, 0.95, size=(4, 3))
    y = (rng.random((4, 3)) < 0.5).astype(float)
    num = finite_diff_grad(lambda: losses.bce_multilabel(p, y), p)
    assert relative_error(losses.bce_multilabel_grad(p, y), num) < 1e-6


def test_bce_gradient_zero_in_clamped_region():
    g = losses.bce_multilabel_grad(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    np.testing.assert_array_equal(g, [0.0, 0.0])


def test_total_loss_composition():
    probs = np.array([0.7, 0.2])
    y = np.array([1.0, 0.0])
    cls = losses.bce_multilabel(probs, y)
    assert losses.total_loss(probs, y).total == cls
    assert losses.total_loss(probs, y, VIS, SEG, "full", 0.0).total == cls
    v = losses.total_loss(probs, y, VIS, SEG, "half", 1.0)
    assert v.total == cls + 0.2 and v.privileged == 0.2 and v.classification == cls


@pytest.mark.parametrize("kwargs,msg", [
    ({"mode": "bogus"}, "unknown loss mode"),
    ({"mode": "full", "lam": -1.0}, "nonnegative"),
    ({"mode": "half"}, "needs both"),
])
def test_total_loss_errors(kwargs, msg):
    with pytest.raises(ValueError, match=msg):
        losses.total_loss(np.array([0.5]), np.array([1.0]), **kwargs)


def test_privileged_grad_regular_mode_rejected():
    with pytest.raises(ValueError):
        losses.privileged_grad(VIS, SEG, "regular")
