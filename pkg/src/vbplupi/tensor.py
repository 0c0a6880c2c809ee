"""Dense float64 arrays with strict (non-broadcasting) elementwise algebra.

A "tensor" throughout this package is a C-contiguous ``numpy.ndarray`` of
dtype float64. The helpers here are the checked entry points: they refuse
shape mismatches instead of broadcasting.
"""
import numpy as np

DTYPE = np.float64

_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}

_REDUCE = {
    "sum": np.sum,
    "mean": np.mean,
    "min": np.min,
    "max": np.max,
}


class ShapeError(ValueError):
    pass


def as_tensor(x):
    """Copy ``x`` into a contiguous float64 array, rejecting non-finite values."""
    t = np.array(x, dtype=DTYPE, order="C", ndmin=1)
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains NaN or Inf")
    return t


def zeros(shape):
    return np.zeros(tuple(shape), dtype=DTYPE)


def zeros_like(a):
    return np.zeros(np.shape(a), dtype=DTYPE)


def check_same_shape(a, b, what="operands"):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch between {what}: {tuple(np.shape(a))} vs {tuple(np.shape(b))}")


def elementwise(op, a, b):
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    check_same_shape(a, b)
    return fn(a, b)


def reduce(op, a, axes=None):
    """Reduce over ``axes`` (all axes when None; the result is then shape ``(1,)``)."""
    try:
        fn = _REDUCE[op]
    except KeyError:
        raise ValueError(f"unknown reduction {op!r}; expected one of {sorted(_REDUCE)}") from None
    a = np.asarray(a, dtype=DTYPE)
    if axes is None:
        return np.array([fn(a)], dtype=DTYPE)
    axes = tuple(int(ax) for ax in axes)
    if len(set(axes)) != len(axes):
        raise ValueError(f"repeated axis in {axes}")
    for ax in axes:
        if not -a.ndim <= ax < a.ndim:
            raise ValueError(f"axis {ax} out of range for tensor of rank {a.ndim}")
    return fn(a, axis=axes)


def absolute(a):
    return np.abs(np.asarray(a, dtype=DTYPE))
