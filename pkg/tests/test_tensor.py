import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vbplupi.tensor import ShapeError, absolute, as_tensor, elementwise, reduce, zeros, zeros_like

finite = st.floats(-1e6, 1e6, allow_nan=False)


def shaped(shape):
    return arrays(np.float64, shape, elements=finite)


def test_mul_gates_by_binary_mask():
    out = elementwise("mul", [[1, 0], [0, 1]], [[0.5, 0.2], [0.3, 1.0]])
    np.testing.assert_array_equal(out, [[0.5, 0], [0, 1.0]])


def test_sub_example():
    out = elementwise("sub", [[0.5, 0.2], [0, 1]], [[1, 0], [0, 1]])
    np.testing.assert_array_equal(out, [[-0.5, 0.2], [0, 0]])


@given(shaped((2, 3, 4)))
def test_add_zero_is_identity(x):
    np.testing.assert_array_equal(elementwise("add", x, zeros_like(x)), x)


@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_shape_mismatch_raises(op):
    with pytest.raises(ShapeError, match=r"\(2, 2\) vs \(2, 3\)"):
        elementwise(op, np.zeros((2, 2)), np.zeros((2, 3)))


def test_unknown_op():
    with pytest.raises(ValueError, match="unknown elementwise op"):
        elementwise("div", [1.0], [1.0])


def test_sum_of_abs_example():
    d = elementwise("sub", [[0.5, 0.2], [0, 1]], [[1, 0], [0, 1]])
    assert reduce("sum", absolute(d))[0] == pytest.approx(0.7, abs=1e-15)


def test_reduce_all_axes_gives_length_one():
    assert reduce("max", [[0.1, 0.9], [0.3, 0.2]]).shape == (1,)
    assert reduce("max", [[0.1, 0.9], [0.3, 0.2]])[0] == 0.9


@given(shaped((2, 5)), st.integers(1, 4))
def test_channel_mean_of_identical_channels(m, c):
    x = np.stack([m] * c)
    np.testing.assert_allclose(reduce("mean", x, axes=(0,)), m, rtol=1e-12, atol=1e-9)


@pytest.mark.parametrize("axes", [(3,), (0, 0), (-4,)])
def test_bad_axes(axes):
    with pytest.raises(ValueError):
        reduce("sum", np.zeros((2, 2, 2)), axes=axes)


def test_unknown_reduction():
    with pytest.raises(ValueError, match="unknown reduction"):
        reduce("prod", [1.0])


def test_abs_examples():
    np.testing.assert_array_equal(absolute([[-0.5, 0.2], [0, 0]]), [[0.5, 0.2], [0, 0]])
    np.testing.assert_array_equal(absolute(zeros((3, 2))), zeros((3, 2)))


@given(shaped((4, 4)))
def test_abs_fixed_point_on_nonnegative(x):
    x = np.abs(x)
    np.testing.assert_array_equal(absolute(x), x)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_as_tensor_rejects_nonfinite(bad):
    with pytest.raises(ValueError, match="NaN or Inf"):
        as_tensor([1.0, bad])


def test_as_tensor_copies():
    src = np.ones(3)
    t = as_tensor(src)
    t[0] = 5
    assert src[0] == 1 and t.dtype == np.float64 and t.flags.c_contiguous
