"""Privileged-information losses and the combined training objective.

The two focus terms are raw L1 sums over pixels (no per-pixel averaging), so
their scale grows with H*W; a resolution-independent weight is
``lam ~ 1/(H*W)``. The classification term is binary cross-entropy averaged
over classes.

Batched inputs (leading sample axis) are reduced by averaging per-sample
losses, so gradients are batch means.
"""
from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE, check_same_shape

PROB_EPS = 1e-12
MODES = ("regular", "full", "half")


@dataclass(frozen=True)
class LossValue:
    total: float
    classification: float
    privileged: float
    lam: float


def _per_sample_sum(t):
    t = np.asarray(t, dtype=DTYPE)
    return t.reshape(t.shape[0], -1).sum(axis=1) if t.ndim == 4 else np.array([t.sum()])


def lpi_full(i_vis, i_seg):
    check_same_shape(i_vis, i_seg, "visualization and segmentation masks")
    return float(_per_sample_sum(np.abs(np.asarray(i_vis) - i_seg)).mean())


def lpi_full_grad(i_vis, i_seg):
    n = np.shape(i_vis)[0] if np.ndim(i_vis) == 4 else 1
    return np.sign(np.asarray(i_vis) - i_seg) / n


def lpi_half(i_vis, i_seg):
    check_same_shape(i_vis, i_seg, "visualization and segmentation masks")
    i_vis = np.asarray(i_vis, dtype=DTYPE)
    return float(_per_sample_sum(np.abs(i_vis - i_vis * i_seg)).mean())


def lpi_half_grad(i_vis, i_seg):
    i_vis = np.asarray(i_vis, dtype=DTYPE)
    n = i_vis.shape[0] if i_vis.ndim == 4 else 1
    outside = 1.0 - np.asarray(i_seg, dtype=DTYPE)
    return np.sign(i_vis * outside) * outside / n


def bce_multilabel(probs, y):
    """Binary cross-entropy averaged over classes (and over samples for 2-D input)."""
    check_same_shape(probs, y, "probabilities and labels")
    p = np.clip(np.asarray(probs, dtype=DTYPE), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=DTYPE)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log1p(-p)))


def bce_multilabel_grad(probs, y):
    probs = np.asarray(probs, dtype=DTYPE)
    y = np.asarray(y, dtype=DTYPE)
    p = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    inside = (probs >= PROB_EPS) & (probs <= 1.0 - PROB_EPS)
    return np.where(inside, (p - y) / (p * (1.0 - p)), 0.0) / probs.size


def total_loss(probs, y, i_vis=None, i_seg=None, mode="regular", lam=1.0):
    if mode not in MODES:
        raise ValueError(f"unknown loss mode {mode!r}; expected one of {MODES}")
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    cls = bce_multilabel(probs, y)
    if mode == "regular":
        priv = 0.0
    else:
        if i_vis is None or i_seg is None:
            raise ValueError(f"mode {mode!r} needs both a visualization mask and a segmentation mask")
        priv = lpi_full(i_vis, i_seg) if mode == "full" else lpi_half(i_vis, i_seg)
    return LossValue(total=cls + lam * priv, classification=cls, privileged=priv, lam=lam)


def privileged_grad(i_vis, i_seg, mode):
    """d L_PI / d I_vis for the focus modes."""
    if mode == "full":
        return lpi_full_grad(i_vis, i_seg)
    if mode == "half":
        return lpi_half_grad(i_vis, i_seg)
    raise ValueError(f"no privileged term in mode {mode!r}")
