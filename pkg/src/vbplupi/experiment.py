"""Desk-scale comparison of regular training against the two focus regimes.

Protocol per seed: generate a cluttered-shapes dataset whose test split has
the clutter/label link removed, pretrain a regular network, then fine-tune a
copy of it under each regime with the same optimizer and budget. The
pretrained network stands in for an ImageNet-initialised backbone.
"""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import data, metrics, train
from .config import OptimConfig, RunConfig

log = logging.getLogger(__name__)

EXPERIMENT_LAYERS = "conv(8,1,1,0) relu conv(8,2,2,0) relu resblock(3) gap linear(3) sigmoid"


def _default_data():
    return {
        "background_intensity": (0.0, 0.15),
        "object_intensity": (0.6, 1.0),
        "clutter_intensity": (0.3, 0.5),
        "clutter_correlation": 0.6,
        "test_clutter_correlation": 0.0,
    }


@dataclass
class ExperimentConfig:
    seeds: tuple = (0, 1, 2, 3, 4)
    n_train: int = 2000
    n_test: int = 400
    data: dict = field(default_factory=_default_data)
    layers: str = EXPERIMENT_LAYERS
    lam: float = 1.0
    batch_size: int = 32
    pretrain_epochs: int = 15
    pretrain_lr: float = 1e-3
    finetune_epochs: int = 15
    finetune_lr: float = 3e-4
    regimes: tuple = ("regular", "full-focus", "half-focus")
    corruptions: tuple = ("none",)


@dataclass
class RegimeResult:
    regime: str
    corruption: str
    seed: int
    mean_ap: float
    outside_energy: float
    mask_iou: float
    seconds: float


def make_splits(cfg, seed):
    n = cfg.n_train + cfg.n_test
    dcfg = data.DatasetConfig(num_samples=n, splits=(cfg.n_train / n, 0.0, cfg.n_test / n), seed=seed, **cfg.data)
    samples = [data.generate_sample(dcfg, i) for i in range(n)]

    def stack(idx):
        return train.Split(
            np.stack([samples[i].image for i in idx]),
            np.stack([samples[i].labels for i in idx]),
            np.stack([samples[i].seg_mask for i in idx]),
            [samples[i].id for i in idx],
        )

    return stack(range(cfg.n_train)), stack(range(cfg.n_train, n))


def evaluate(net, regime, split):
    probs, vis = train.predict_batched(net, split.images, regime, with_masks=True)
    return metrics.evaluate(probs, split.labels, vis, split.masks)


def _adam_only(lr):
    # a switch step beyond any budget keeps Adam throughout; patience 0 disables the monitor
    return OptimConfig(adam_lr=lr, switch_step=10**12, patience=0, decay_every=10**6)


def run_seed(cfg, seed):
    """Pretrain once, fine-tune every (regime, corruption) pair; return RegimeResults."""
    tr, te = make_splits(cfg, seed)
    t0 = time.process_time()
    pre = RunConfig(regime="regular", seed=seed, epochs=cfg.pretrain_epochs, batch_size=cfg.batch_size,
                    layers=cfg.layers, optim=_adam_only(cfg.pretrain_lr))
    base, _ = train.fit(pre, tr)
    pre_seconds = time.process_time() - t0
    results = []
    for regime in cfg.regimes:
        corruptions = ("none",) if regime == "regular" else cfg.corruptions
        for corruption in corruptions:
            t0 = time.process_time()
            run = RunConfig(regime=regime, lam=cfg.lam, seed=seed, epochs=cfg.finetune_epochs,
                            batch_size=cfg.batch_size, layers=cfg.layers, mask_corruption=corruption,
                            optim=_adam_only(cfg.finetune_lr))
            net, _ = train.fit(run, tr, net=base.copy())
            rep = evaluate(net, regime, te)
            res = RegimeResult(regime, corruption, seed, rep.mean_ap, rep.mean_outside_energy, rep.mean_mask_iou,
                               pre_seconds + time.process_time() - t0)
            log.info("seed %d %s/%s: mAP %.4f outside %.4f IoU %.4f (%.0fs)", seed, regime, corruption,
                     res.mean_ap, res.outside_energy, res.mask_iou, res.seconds)
            results.append(res)
    return results


def run(cfg):
    out = []
    for seed in cfg.seeds:
        out.extend(run_seed(cfg, seed))
    return out


def medians(results):
    """``{(regime, corruption): (median mAP, median outside energy, median IoU)}``."""
    keys = sorted({(r.regime, r.corruption) for r in results})
    table = {}
    for key in keys:
        rows = [r for r in results if (r.regime, r.corruption) == key]
        table[key] = tuple(float(np.median([getattr(r, a) for r in rows]))
                           for a in ("mean_ap", "outside_energy", "mask_iou"))
    return table


def degradation(results, regime):
    """Median over seeds of exact-mask mAP minus bbox-mask mAP."""
    by = {(r.seed, r.corruption): r.mean_ap for r in results if r.regime == regime}
    seeds = sorted({s for s, _ in by})
    return float(np.median([by[(s, "none")] - by[(s, "bbox")] for s in seeds]))


def format_table(results):
    lines = ["regime\tmasks\tmedian_mAP\tmedian_outside\tmedian_IoU\n"]
    for (regime, corruption), (ap, out, iou) in medians(results).items():
        lines.append(f"{regime}\t{corruption}\t{ap:.4f}\t{out:.4f}\t{iou:.4f}\n")
    return "".join(lines)
