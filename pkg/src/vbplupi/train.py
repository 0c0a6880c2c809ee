"""Training loop for the five regimes, plus the regime-specific input rules.

Regimes:
  regular         image in, BCE only
  added-seg-mask  mask appended as an extra input channel (zeros at test time)
  seg-mole        image multiplied by the mask (raw image at test time)
  full-focus      BCE + lam * sum |I_vis - I_seg|
  half-focus      BCE + lam * sum |I_vis - I_vis * I_seg|
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import losses, metrics, model
from .data import corrupt_mask_bbox
from .optim import AdamState, OverfitMonitor, SGDState, adam_step, schedule_step, sgd_step
from .tensor import DTYPE
from .vbp import vbp_backward, vbp_forward_cached

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class Split:
    images: np.ndarray  # (N, C, H, W)
    labels: np.ndarray  # (N, K)
    masks: np.ndarray = None  # (N, 1, H, W) or None
    ids: list = None

    def __len__(self):
        return len(self.images)


def input_channels(regime, image_channels):
    return image_channels + 1 if regime == "added-seg-mask" else image_channels


def model_inputs(regime, images, masks, training):
    """Return ``(x, aux_mask)`` as fed to the network under ``regime``."""
    if regime == "added-seg-mask":
        aux = masks if training else np.zeros((images.shape[0], 1) + images.shape[2:], dtype=DTYPE)
        return images, aux
    if regime == "seg-mole" and training:
        return images * masks, None
    return images, None


def corrupt_masks(masks, kind):
    if kind == "none":
        return masks
    if kind == "bbox":
        return np.stack([corrupt_mask_bbox(m) for m in masks])
    raise ValueError(f"unknown mask corruption {kind!r}")


def loss_and_grads(net, x, y, seg=None, mode="regular", lam=1.0, aux_mask=None):
    """Batch-mean loss and parameter gradients. Returns ``(LossValue, grads, probs, I_vis)``."""
    probs, trace, caches = model.forward_cached(net, x, aux_mask)
    vis = vis_cache = None
    if mode != "regular":
        vis, vis_cache = vbp_forward_cached(trace)
    value = losses.total_loss(probs, y, vis, seg, mode, lam)
    grad_probs = losses.bce_multilabel_grad(probs, y)
    trace_grads = None
    if mode != "regular" and lam != 0:
        g_vis = lam * losses.privileged_grad(vis, seg, mode)
        trace_grads = vbp_backward(trace, g_vis, vis_cache)
    grads = model.backward(net, caches, grad_probs, trace_grads)
    return value, grads, probs, vis


def predict_batched(net, images, regime, batch_size=256, with_masks=False):
    probs, vis = [], []
    for i in range(0, len(images), batch_size):
        x, aux = model_inputs(regime, images[i:i + batch_size], None, training=False)
        if with_masks:
            p, trace = model.forward_with_trace(net, x, aux)
            vis.append(vbp_forward_cached(trace)[0])
        else:
            p = model.predict(net, x, aux)
        probs.append(p)
    probs = np.concatenate(probs)
    return (probs, np.concatenate(vis)) if with_masks else probs


def mean_ap(net, split, regime):
    if split is None or len(split) == 0:
        return float("nan")
    report = metrics.evaluate(predict_batched(net, split.images, regime), split.labels)
    return float("nan") if report.mean_ap is None else report.mean_ap


@dataclass
class EpochLog:
    epoch: int
    step: int
    train_loss: float
    cls_loss: float
    pi_loss: float
    lr: float
    val_map: float

    def line(self):
        return (
            f"{self.epoch}\t{self.step}\t{self.train_loss:.8g}\t{self.cls_loss:.8g}\t"
            f"{self.pi_loss:.8g}\t{self.lr:.8g}\t{self.val_map:.8g}\n"
        )


def fit(run, train, val=None, net=None, on_epoch=None):
    """Train per ``run`` (a RunConfig) and return ``(net, [EpochLog, ...])``."""
    regime, mode = run.regime, run.loss_mode
    if run.needs_masks and train.masks is None:
        raise TrainingError(f"regime {regime!r} needs segmentation masks")
    masks = corrupt_masks(train.masks, run.mask_corruption) if train.masks is not None else None
    if net is None:
        c, h, w = train.images.shape[1:]
        spec = model.NetworkSpec((input_channels(regime, c), h, w), run.layers, train.labels.shape[1])
        net = model.build(spec, run.seed, meta={"regime": regime})
    n = len(train)
    steps_per_epoch = math.ceil(n / run.batch_size)
    sched = run.optim.schedule(steps_per_epoch)
    adam = AdamState(lr=sched.adam_lr, beta1=run.optim.beta1, beta2=run.optim.beta2, eps=run.optim.eps)
    sgd = SGDState(lr=sched.sgd_lr, momentum=run.optim.momentum)
    monitor = OverfitMonitor(run.optim.patience)
    switch_at = None
    rng = np.random.default_rng(np.random.SeedSequence([run.seed, 1]))
    history = []
    step = 0
    lr = sched.adam_lr
    for epoch in range(1, run.epochs + 1):
        order = rng.permutation(n)
        lam = run.lam if epoch > run.pi_warmup_epochs else 0.0
        tot = cls = pi = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * run.batch_size:(b + 1) * run.batch_size]
            seg = masks[idx] if masks is not None and run.needs_masks else None
            x, aux = model_inputs(regime, train.images[idx], seg, training=True)
            value, grads, _, _ = loss_and_grads(
                net, x, train.labels[idx], seg if mode != "regular" else None, mode, lam, aux
            )
            if not math.isfinite(value.total):
                ids = [train.ids[i] for i in idx] if train.ids else idx.tolist()
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}, batch {b}: samples {ids}")
            which, lr = schedule_step(sched, step, switch_at)
            if which == "adam":
                adam.lr = lr
                adam_step(net.params, grads, adam)
            else:
                sgd.lr = lr
                sgd_step(net.params, grads, sgd)
            tot += value.total
            cls += value.classification
            pi += value.privileged
            step += 1
        val_map = mean_ap(net, val, regime)
        entry = EpochLog(epoch, step, tot / steps_per_epoch, cls / steps_per_epoch, pi / steps_per_epoch, lr, val_map)
        history.append(entry)
        log.info("epoch %d: loss %.4f cls %.4f pi %.4f val mAP %.4f", epoch, entry.train_loss, entry.cls_loss,
                 entry.pi_loss, val_map)
        if on_epoch is not None:
            on_epoch(entry)
        if switch_at is None and step < sched.switch_step and monitor.update(val_map):
            switch_at = step
            log.info("validation mAP fell %d evals in a row; switching to SGD at step %d", monitor.patience, step)
    return net, history
