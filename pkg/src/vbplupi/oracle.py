"""Brute-force references for tests: loop convolution, loop VisualBackProp, finite differences.

Nothing here calls into nn_ops or vbp; the references are written from the
definitions with plain Python loops so that agreement is meaningful.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FiniteDiffConfig:
    h: float = 1e-6
    rel_tol: float = 1e-5
    abs_tol: float = 1e-8
    kink_margin: float = 1e-3

    def __post_init__(self):
        if self.h <= 0 or self.rel_tol <= 0 or self.abs_tol <= 0 or self.kink_margin <= 0:
            raise ValueError("finite-difference step and tolerances must be positive")


class KinkProximityError(ValueError):
    """The sampled point sits too close to a nondifferentiable kink; draw another."""


def naive_conv2d(x, weights, bias, stride=1, padding=0):
    x = np.asarray(x, dtype=float)
    c_in, h, w = x.shape
    c_out, c_w, kh, kw = weights.shape
    if c_w != c_in:
        raise ValueError(f"channel mismatch: input {c_in}, kernel {c_w}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("nonpositive output extent")
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = float(bias[o])
                for c in range(c_in):
                    for a in range(kh):
                        for b in range(kw):
                            y = i * stride + a - padding
                            xx = j * stride + b - padding
                            if 0 <= y < h and 0 <= xx < w:
                                acc += x[c, y, xx] * weights[o, c, a, b]
                out[o, i, j] = acc
    return out


def _loop_average(f):
    c, h, w = f.shape
    out = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            s = 0.0
            for k in range(c):
                s += f[k, i, j]
            out[i][j] = s / c
    return out


def _loop_scatter(m, kernel, stride, padding, out_shape):
    H, W = out_shape
    out = [[0.0] * W for _ in range(H)]
    for i in range(len(m)):
        for j in range(len(m[0])):
            for a in range(kernel[0]):
                for b in range(kernel[1]):
                    y = i * stride - padding + a
                    x = j * stride - padding + b
                    if 0 <= y < H and 0 <= x < W:
                        out[y][x] += m[i][j]
    return out


def posthoc_vbp(trace, eps=1e-8):
    """Loop re-implementation of the VisualBackProp mask for a single-sample trace."""
    entries = trace.entries
    if not entries:
        raise ValueError("empty trace")
    prev = tuple(trace.input_shape)
    for f, g in entries:
        if tuple(g.output_shape) != prev:
            raise ValueError("geometry chain inconsistency")
        prev = np.shape(f)[-2:]
    avgs = [_loop_average(np.asarray(f)) for f, _ in entries]
    m = avgs[-1]
    for l in range(len(entries) - 1, -1, -1):
        g = entries[l][1]
        up = _loop_scatter(m, g.kernel, g.stride, g.padding, g.output_shape)
        if l > 0:
            below = avgs[l - 1]
            if (len(below), len(below[0])) != (len(up), len(up[0])):
                raise ValueError("geometry chain inconsistency")
            up = [[up[i][j] * below[i][j] for j in range(len(up[0]))] for i in range(len(up))]
        m = up
    flat = [v for row in m for v in row]
    lo, hi = min(flat), max(flat)
    if hi - lo <= eps:
        return np.zeros((1, len(m), len(m[0])))
    return np.array([[[(v - lo) / (hi - lo) for v in row] for row in m]])


def finite_diff_grad(f, x, cfg=FiniteDiffConfig()):
    """Central differences of scalar ``f`` at array ``x`` (perturbed in place, then restored)."""
    grad = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + cfg.h
        fp = f()
        flat[i] = orig - cfg.h
        fm = f()
        flat[i] = orig
        g[i] = (fp - fm) / (2 * cfg.h)
    return grad


def relative_error(analytic, numeric, abs_tol=1e-8):
    """``||a - n|| / max(||a||, ||n||, abs_tol)`` over the flattened arrays."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), abs_tol))


def check_margin(values, margin, what):
    """Reject points where any value lies within ``margin`` of zero without being zero."""
    v = np.abs(np.asarray(values))
    close = (v > 0) & (v < margin)
    if close.any():
        raise KinkProximityError(f"{what}: {int(close.sum())} values within {margin} of the kink")


def check_extrema(values, margin, what):
    """Reject ties or near-ties at a normalization extremum (exact-zero minima are structural)."""
    flat = np.sort(np.ravel(values))
    if flat.size < 2:
        return
    rng = flat[-1] - flat[0]
    if rng <= 0:
        return
    if (flat[-1] - flat[-2]) / rng < margin:
        raise KinkProximityError(f"{what}: maximum is not isolated")
    if flat[0] != 0 and (flat[1] - flat[0]) / rng < margin:
        raise KinkProximityError(f"{what}: minimum is not isolated")
