"""VisualBackProp as a differentiable head over a recorded forward pass.

The head reads post-ReLU feature maps (one per conv layer or residual block),
averages each over channels, and walks from the deepest map towards the
input: upsample with a unit-weight deconvolution, multiply by the next
shallower average, repeat. The last product is projected to input resolution
and min-max normalized per image.

All functions accept single-sample maps ``(C, H, W)`` or batches
``(N, C, H, W)``; normalization statistics are always per image.
"""
from dataclasses import dataclass, field

import numpy as np

from .nn_ops import DeconvGeometry, deconv_unit_backward, deconv_unit_forward
from .tensor import DTYPE, ShapeError

NORM_EPS = 1e-8


@dataclass
class ForwardTrace:
    entries: list = field(default_factory=list)  # [(feature_map, DeconvGeometry)], shallow -> deep
    input_shape: tuple = ()

    def __len__(self):
        return len(self.entries)

    def append(self, feature_map, geometry):
        self.entries.append((feature_map, geometry))

    @property
    def feature_maps(self):
        return [f for f, _ in self.entries]

    def validate(self):
        if not self.entries:
            raise ShapeError("empty forward trace")
        prev = tuple(self.input_shape)
        for i, (f, g) in enumerate(self.entries):
            hw = tuple(np.shape(f)[-2:])
            if tuple(g.output_shape) != prev:
                raise ShapeError(f"trace entry {i}: deconvolution targets {tuple(g.output_shape)} but previous map is {prev}")
            if g.input_shape() != hw:
                raise ShapeError(f"trace entry {i}: geometry maps {g.input_shape()} but feature map is {hw}")
            prev = hw


def channel_average(f):
    f = np.asarray(f, dtype=DTYPE)
    return f.mean(axis=-3, keepdims=True)


def channel_average_backward(f_shape, grad):
    c = f_shape[-3]
    return np.broadcast_to(grad / c, f_shape).copy()


def _flat_images(m):
    m = np.asarray(m, dtype=DTYPE)
    return m.reshape(-1, m.shape[-2] * m.shape[-1]) if m.ndim == 4 else m.reshape(1, -1)


def normalize_01(m):
    return _normalize_cached(m)[0]


def _normalize_cached(m):
    m = np.asarray(m, dtype=DTYPE)
    flat = _flat_images(m)
    lo_idx = flat.argmin(axis=1)
    hi_idx = flat.argmax(axis=1)
    rows = np.arange(flat.shape[0])
    lo = flat[rows, lo_idx]
    rng = flat[rows, hi_idx] - lo
    ok = rng > NORM_EPS
    out = np.zeros_like(flat)
    out[ok] = (flat[ok] - lo[ok, None]) / rng[ok, None]
    return out.reshape(m.shape), (lo_idx, hi_idx, rng, ok, out)


def normalize_01_backward(m_shape, grad, cache):
    """Reverse-mode through min-max normalization.

    min and max are differentiated through their first attaining element
    (row-major). A degenerate image (range <= eps) passes no gradient.
    """
    lo_idx, hi_idx, rng, ok, out = cache
    g = _flat_images(grad)
    gm = np.zeros_like(g)
    r = rng[ok, None]
    gm[ok] = g[ok] / r
    rows = np.flatnonzero(ok)
    d_lo = (g[ok] * (out[ok] - 1.0)).sum(axis=1) / rng[ok]
    d_hi = -(g[ok] * out[ok]).sum(axis=1) / rng[ok]
    np.add.at(gm, (rows, lo_idx[ok]), d_lo)
    np.add.at(gm, (rows, hi_idx[ok]), d_hi)
    return gm.reshape(m_shape)


def vbp_forward_cached(trace):
    trace.validate()
    avgs = [channel_average(f) for f, _ in trace.entries]
    ups = [None] * len(avgs)
    m = avgs[-1]
    for l in range(len(avgs) - 1, 0, -1):
        u = deconv_unit_forward(m, trace.entries[l][1])
        ups[l] = u
        m = u * avgs[l - 1]
    u0 = deconv_unit_forward(m, trace.entries[0][1])
    mask, norm_cache = _normalize_cached(u0)
    return mask, (avgs, ups, u0.shape, norm_cache)


def vbp_forward(trace):
    """Visualization mask at input resolution with values in [0, 1]."""
    return vbp_forward_cached(trace)[0]


def vbp_backward(trace, grad_mask, cache=None):
    """Gradient of a scalar loss w.r.t. every trace feature map, given d loss / d mask."""
    if cache is None:
        _, cache = vbp_forward_cached(trace)
    avgs, ups, u0_shape, norm_cache = cache
    grad_mask = np.asarray(grad_mask, dtype=DTYPE)
    if grad_mask.shape != u0_shape:
        raise ShapeError(f"grad_mask shape {grad_mask.shape} != mask shape {u0_shape}")
    g_avg = [None] * len(avgs)
    g_u0 = normalize_01_backward(u0_shape, grad_mask, norm_cache)
    gm = deconv_unit_backward(trace.entries[0][1], g_u0)
    for l in range(1, len(avgs)):
        g_avg[l - 1] = gm * ups[l]
        gm = deconv_unit_backward(trace.entries[l][1], gm * avgs[l - 1])
    g_avg[-1] = gm
    return [channel_average_backward(np.shape(f), ga) for (f, _), ga in zip(trace.entries, g_avg)]


__all__ = [
    "DeconvGeometry",
    "ForwardTrace",
    "channel_average",
    "normalize_01",
    "vbp_backward",
    "vbp_forward",
]
