"""Ranking metrics (AP, ROC-AUC, PR curves) and mask-localization diagnostics."""
import json
from fractions import Fraction
from dataclasses import asdict, dataclass, field

import numpy as np

from .tensor import DTYPE

ENERGY_EPS = 1e-12


class UndefinedMetric(ValueError):
    pass


def _ranked(scores, labels):
    scores = np.asarray(scores, dtype=DTYPE)
    labels = np.asarray(labels, dtype=DTYPE)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be matching 1-D arrays")
    order = np.argsort(-scores, kind="stable")
    return scores[order], labels[order]


def average_precision(scores, labels):
    """Mean of precision@rank over the ranks holding positives (ties keep input order)."""
    _, lab = _ranked(scores, labels)
    n_pos = lab.sum()
    if n_pos == 0:
        raise UndefinedMetric("average precision is undefined without positives")
    # exact rational sum, rounded once, so equal rankings give bit-identical AP
    hits = np.cumsum(lab).astype(np.int64)
    total = sum(Fraction(int(hits[i]), int(i) + 1) for i in np.flatnonzero(lab))
    return float(total / int(n_pos))


def _auc_exact(scores, labels):
    """Mann-Whitney U / (n_pos * n_neg) as a Fraction; ties count one half."""
    scores = np.asarray(scores, dtype=DTYPE)
    labels = np.asarray(labels, dtype=DTYPE)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("ROC-AUC needs at least one positive and one negative")
    # midranks over the pooled sample handle ties exactly; doubled to stay integral
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    ranks2 = np.empty(len(s), dtype=np.int64)
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks2[i:j + 1] = i + j + 2
        i = j + 1
    r2 = np.empty_like(ranks2)
    r2[order] = ranks2
    u2 = int(r2[labels == 1].sum()) - n_pos * (n_pos + 1)
    return Fraction(u2, 2 * n_pos * n_neg)


def roc_auc(scores, labels):
    """Mann-Whitney estimate: P(score_pos > score_neg) + 0.5 P(tie)."""
    return float(_auc_exact(scores, labels))


def pr_curve(scores, labels):
    """``[(recall, precision), ...]``, one point per distinct threshold, highest first."""
    sc, lab = _ranked(scores, labels)
    n_pos = lab.sum()
    if n_pos == 0:
        raise UndefinedMetric("PR curve is undefined without positives")
    tp = np.cumsum(lab)
    n = np.arange(1, len(lab) + 1)
    last_of_threshold = np.flatnonzero(np.r_[sc[1:] != sc[:-1], True])
    return [(float(tp[i] / n_pos), float(tp[i] / n[i])) for i in last_of_threshold]


def micro_auc(scores, labels):
    return roc_auc(np.ravel(scores), np.ravel(labels))


def macro_auc(scores, labels):
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    k = scores.shape[1]
    return float(sum(_auc_exact(scores[:, c], labels[:, c]) for c in range(k)) / k)


def mask_iou(i_vis, i_seg, threshold=0.5):
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    pred = np.asarray(i_vis) >= threshold
    truth = np.asarray(i_seg) > 0.5
    union = (pred | truth).sum()
    if union == 0:
        return 1.0
    return float((pred & truth).sum() / union)


def outside_mask_energy(i_vis, i_seg):
    """Share of visualization mass lying where the segmentation mask is 0."""
    i_vis = np.asarray(i_vis, dtype=DTYPE)
    outside = i_vis[np.asarray(i_seg) < 0.5].sum()
    return float(outside / max(i_vis.sum(), ENERGY_EPS))


@dataclass
class EvalReport:
    per_class_ap: list
    mean_ap: float
    median_ap: float
    per_class_auc: list
    micro_auc: float
    macro_auc: float
    mean_mask_iou: float
    mean_outside_energy: float
    pr_curves: list = field(default_factory=list)

    def to_tsv(self):
        def fmt(v):
            return "nan" if v is None else f"{v:.6f}"

        lines = ["class\tAP\tAUC\n"]
        for k, (ap, auc) in enumerate(zip(self.per_class_ap, self.per_class_auc)):
            lines.append(f"{k}\t{fmt(ap)}\t{fmt(auc)}\n")
        for name in ("mean_ap", "median_ap", "micro_auc", "macro_auc", "mean_mask_iou", "mean_outside_energy"):
            lines.append(f"{name}\t{fmt(getattr(self, name))}\n")
        return "".join(lines)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _nanmean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate(probs, labels, vis_masks=None, seg_masks=None, iou_threshold=0.5):
    """Build an EvalReport from ``(N, K)`` scores/labels and optional per-sample masks.

    Classes without positives (or without negatives, for AUC) report None and
    are left out of the means.
    """
    probs = np.asarray(probs, dtype=DTYPE)
    labels = np.asarray(labels, dtype=DTYPE)
    K = probs.shape[1]
    aps, aucs, curves = [], [], []
    for k in range(K):
        try:
            aps.append(average_precision(probs[:, k], labels[:, k]))
            curves.append(pr_curve(probs[:, k], labels[:, k]))
        except UndefinedMetric:
            aps.append(None)
            curves.append([])
        try:
            aucs.append(roc_auc(probs[:, k], labels[:, k]))
        except UndefinedMetric:
            aucs.append(None)
    defined = [a for a in aps if a is not None]
    try:
        micro = micro_auc(probs, labels)
    except UndefinedMetric:
        micro = None
    iou = energy = None
    if vis_masks is not None and seg_masks is not None:
        iou = float(np.mean([mask_iou(v, s, iou_threshold) for v, s in zip(vis_masks, seg_masks)]))
        energy = float(np.mean([outside_mask_energy(v, s) for v, s in zip(vis_masks, seg_masks)]))
    return EvalReport(
        per_class_ap=aps,
        mean_ap=_nanmean(aps),
        median_ap=float(np.median(defined)) if defined else None,
        per_class_auc=aucs,
        micro_auc=micro,
        macro_auc=_nanmean(aucs),
        mean_mask_iou=iou,
        mean_outside_energy=energy,
        pr_curves=curves,
    )
