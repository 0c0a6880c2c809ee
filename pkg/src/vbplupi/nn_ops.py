"""Forward/backward kernels for the layers the network and the VisualBackProp head use.

Every spatial op accepts a single sample ``(C, H, W)`` or a batch
``(N, C, H, W)`` and returns the same rank it was given. Backward functions
take the forward inputs plus the upstream gradient and return gradients
summed over the batch for parameters.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, ShapeError


@dataclass
class ConvParams:
    weights: np.ndarray  # (out_channels, in_channels, kH, kW)
    bias: np.ndarray  # (out_channels,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be 4-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} output channels")
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid stride={self.stride} / padding={self.padding}")

    @property
    def kernel(self):
        return self.weights.shape[2], self.weights.shape[3]


@dataclass(frozen=True)
class DeconvGeometry:
    """Unit-weight transposed convolution that undoes one conv layer's resampling.

    ``output_shape`` is the recorded input extent of that conv layer, not the
    value implied by the inversion formula: strided convs can drop trailing
    rows/columns, which the deconvolution fills with zeros.
    """

    kernel: tuple
    stride: int
    padding: int
    output_shape: tuple

    def input_shape(self):
        """Spatial extent the matching conv produces from ``output_shape``."""
        return tuple(conv_output_size(n, k, self.stride, self.padding) for n, k in zip(self.output_shape, self.kernel))

    def check_input(self, h, w):
        if (h, w) != self.input_shape():
            raise ShapeError(
                f"deconvolution geometry {self} expects a {self.input_shape()} map, got {(h, w)}"
            )


def conv_output_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def _as_batch(x):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")


def _unbatch(x, single):
    return x[0] if single else x


def _im2col(x, kh, kw, stride, padding):
    """Return (cols, Ho, Wo) with cols of shape (N*Ho*Wo, C*kh*kw)."""
    n, c, h, w = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"nonpositive conv output extent {(ho, wo)} for input {(h, w)}, kernel {(kh, kw)}")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def conv2d_forward(x, p):
    xb, single = _as_batch(x)
    out_c, in_c, kh, kw = p.weights.shape
    if xb.shape[1] != in_c:
        raise ShapeError(f"input has {xb.shape[1]} channels, conv expects {in_c}")
    cols, ho, wo = _im2col(xb, kh, kw, p.stride, p.padding)
    out = cols @ p.weights.reshape(out_c, -1).T + p.bias
    out = out.reshape(xb.shape[0], ho, wo, out_c).transpose(0, 3, 1, 2)
    return _unbatch(np.ascontiguousarray(out), single)


def conv2d_backward(x, p, grad_out):
    """Return ``(grad_x, grad_weights, grad_bias)``."""
    xb, single = _as_batch(x)
    gb, _ = _as_batch(grad_out)
    n, c, h, w = xb.shape
    out_c, in_c, kh, kw = p.weights.shape
    cols, ho, wo = _im2col(xb, kh, kw, p.stride, p.padding)
    if gb.shape != (n, out_c, ho, wo):
        raise ShapeError(f"grad_out shape {gb.shape} != conv output shape {(n, out_c, ho, wo)}")
    g = gb.transpose(0, 2, 3, 1).reshape(-1, out_c)
    grad_w = (g.T @ cols).reshape(p.weights.shape)
    grad_b = g.sum(axis=0)
    gcols = (g @ p.weights.reshape(out_c, -1)).reshape(n, ho, wo, c, kh, kw)
    s, pad = p.stride, p.padding
    gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    grad_x = gxp[:, :, pad:pad + h, pad:pad + w]
    return _unbatch(np.ascontiguousarray(grad_x), single), grad_w, grad_b


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    if np.shape(x) != np.shape(grad_out):
        raise ShapeError(f"relu_backward shape mismatch: {np.shape(x)} vs {np.shape(grad_out)}")
    return np.where(x > 0, grad_out, 0.0)


def _deconv_buffer_extent(n_in, k, stride, padding, n_out):
    return max((n_in - 1) * stride + k, padding + n_out)


def deconv_unit_forward(x, g):
    """Transposed convolution with an all-ones kernel and zero bias, per channel."""
    xb, single = _as_batch(x)
    n, c, h, w = xb.shape
    g.check_input(h, w)
    (kh, kw), s, pad = g.kernel, g.stride, g.padding
    H, W = g.output_shape
    buf = np.zeros((n, c, _deconv_buffer_extent(h, kh, s, pad, H), _deconv_buffer_extent(w, kw, s, pad, W)), dtype=DTYPE)
    for a in range(kh):
        for b in range(kw):
            buf[:, :, a:a + s * h:s, b:b + s * w:s] += xb
    out = buf[:, :, pad:pad + H, pad:pad + W]
    return _unbatch(np.ascontiguousarray(out), single)


def deconv_unit_backward(g, grad_out):
    gb, single = _as_batch(grad_out)
    n, c, H, W = gb.shape
    if (H, W) != tuple(g.output_shape):
        raise ShapeError(f"grad_out spatial shape {(H, W)} != deconvolution output {tuple(g.output_shape)}")
    h, w = g.input_shape()
    (kh, kw), s, pad = g.kernel, g.stride, g.padding
    buf = np.zeros((n, c, _deconv_buffer_extent(h, kh, s, pad, H), _deconv_buffer_extent(w, kw, s, pad, W)), dtype=DTYPE)
    buf[:, :, pad:pad + H, pad:pad + W] = gb
    grad_x = np.zeros((n, c, h, w), dtype=DTYPE)
    for a in range(kh):
        for b in range(kw):
            grad_x += buf[:, :, a:a + s * h:s, b:b + s * w:s]
    return _unbatch(grad_x, single)


@dataclass
class ResBlockParams:
    """conv1 -> ReLU -> conv2, plus identity skip, then ReLU. Both convs keep H, W and C."""

    conv1: ConvParams
    conv2: ConvParams

    def __post_init__(self):
        for name, cp in (("conv1", self.conv1), ("conv2", self.conv2)):
            out_c, in_c, kh, kw = cp.weights.shape
            if out_c != in_c:
                raise ShapeError(f"residual {name} must map C->C, got {in_c}->{out_c}")
            if cp.stride != 1 or kh % 2 == 0 or kw % 2 == 0 or cp.padding != kh // 2 or kh != kw:
                raise ShapeError(f"residual {name} must be a stride-1 odd square kernel with same padding")

    @property
    def geometry_kernel(self):
        return self.conv1.kernel


def residual_block_forward_cached(x, params):
    z1 = conv2d_forward(x, params.conv1)
    a1 = relu_forward(z1)
    z2 = conv2d_forward(a1, params.conv2)
    if z2.shape != np.shape(x):
        raise ShapeError(f"residual block output {z2.shape} does not match input {np.shape(x)}")
    s = z2 + x
    return relu_forward(s), (z1, a1, s)


def residual_block_forward(x, params):
    return residual_block_forward_cached(x, params)[0]


def residual_block_backward(x, params, grad_out, cache=None):
    """Return ``(grad_x, grads)`` where grads maps conv1/conv2 to (grad_w, grad_b)."""
    if cache is None:
        _, cache = residual_block_forward_cached(x, params)
    z1, a1, s = cache
    gs = relu_backward(s, grad_out)
    ga1, gw2, gb2 = conv2d_backward(a1, params.conv2, gs)
    gz1 = relu_backward(z1, ga1)
    gx, gw1, gb1 = conv2d_backward(x, params.conv1, gz1)
    return gx + gs, {"conv1": (gw1, gb1), "conv2": (gw2, gb2)}


def global_avg_pool(x):
    xb, single = _as_batch(x)
    return _unbatch(xb.mean(axis=(2, 3)), single)


def global_avg_pool_backward(x_shape, grad_out):
    h, w = x_shape[-2:]
    g = np.asarray(grad_out, dtype=DTYPE)
    return np.broadcast_to(g[..., None, None] / (h * w), x_shape).copy()


def linear(x, weight, bias):
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear input width {x.shape[-1]} != weight in_features {weight.shape[1]}")
    return x @ weight.T + bias


def linear_backward(x, weight, grad_out):
    """Return ``(grad_x, grad_weight, grad_bias)``; batch rows are summed."""
    x2 = np.atleast_2d(x)
    g2 = np.atleast_2d(grad_out)
    grad_x = np.asarray(grad_out) @ weight
    return grad_x, g2.T @ x2, g2.sum(axis=0)


def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y, grad_out):
    """Gradient through the sigmoid given its output ``y``."""
    return grad_out * y * (1.0 - y)
