"""Command-line entry point: gen-data, train, eval, visualize.

Exit codes: 0 success, 1 usage error, 2 runtime or data error.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import data, metrics, model, train
from .config import ConfigError, dump_dataset_config, dump_run_config, load_dataset_config, load_run_config
from .vbp import vbp_forward

log = logging.getLogger("vbplupi")

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _makedirs(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create directory {path}: {exc.strerror}") from None


def load_split(manifest, split, with_masks):
    """Read ``split`` of a manifest into a train.Split; mask files are touched only if asked."""
    rows = data.read_manifest(manifest, split)
    if not rows:
        return None
    images = np.stack([data.read_image(r.image) for r in rows])
    masks = np.stack([data.read_pgm(r.mask) for r in rows]) if with_masks else None
    labels = np.stack([r.labels for r in rows])
    return train.Split(images, labels, masks, [r.id for r in rows])


def cmd_gen_data(config_path):
    cfg, out_dir = load_dataset_config(config_path)
    _makedirs(out_dir)
    path = data.build_manifest(cfg, out_dir)
    with open(os.path.join(out_dir, "dataset.ini"), "w", encoding="utf-8") as fh:
        fh.write(dump_dataset_config(cfg, "."))
    log.info("wrote %d samples to %s", cfg.num_samples, out_dir)
    return path


def cmd_train(config_path):
    run = load_run_config(config_path)
    if not run.manifest:
        raise ConfigError("[run] manifest: required")
    if run.needs_masks:
        missing = [r.mask for r in data.read_manifest(run.manifest, "train") if not os.path.exists(r.mask)]
        if missing:
            raise ConfigError(f"regime {run.regime!r} needs masks; {len(missing)} listed mask files are missing")
    tr = load_split(run.manifest, "train", run.needs_masks)
    if tr is None:
        raise ValueError(f"{run.manifest}: train split is empty")
    val = load_split(run.manifest, "val", False)
    _makedirs(run.output_dir)
    with open(os.path.join(run.output_dir, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(dump_run_config(run))
    log_path = os.path.join(run.output_dir, "train.log")
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        def on_epoch(entry):
            fh.write(entry.line())
            fh.flush()

        net, _ = train.fit(run, tr, val, on_epoch=on_epoch)
    ckpt = os.path.join(run.output_dir, "model.pfck")
    model.save_checkpoint(net, ckpt)
    return ckpt


def cmd_eval(checkpoint, manifest, split, out_dir=None):
    net = model.load_checkpoint(checkpoint)
    regime = net.meta.get("regime", "regular")
    rows = data.read_manifest(manifest, split)
    if not rows:
        raise ValueError(f"{manifest}: split {split!r} is empty")
    with_masks = all(os.path.exists(r.mask) for r in rows)
    s = load_split(manifest, split, with_masks)
    c = train.input_channels(regime, s.images.shape[1])
    if (c,) + s.images.shape[2:] != net.spec.input_shape:
        raise ValueError(
            f"checkpoint expects input {net.spec.input_shape} but {split} images give {(c,) + s.images.shape[2:]}"
        )
    if s.labels.shape[1] != net.spec.num_classes:
        raise ValueError(f"checkpoint has {net.spec.num_classes} classes, manifest labels have {s.labels.shape[1]}")
    # prediction never sees the masks; they only feed the localization diagnostics
    probs, vis = train.predict_batched(net, s.images, regime, with_masks=True)
    report = metrics.evaluate(probs, s.labels, vis if with_masks else None, s.masks)
    out_dir = out_dir or os.path.join(os.path.dirname(os.path.abspath(checkpoint)), f"eval_{split}")
    _makedirs(out_dir)
    with open(os.path.join(out_dir, "report.tsv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_tsv())
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    for k, curve in enumerate(report.pr_curves):
        with open(os.path.join(out_dir, f"pr_class{k}.tsv"), "w", encoding="utf-8") as fh:
            fh.write("recall\tprecision\n")
            fh.writelines(f"{r:.6f}\t{p:.6f}\n" for r, p in curve)
    return report


def overlay(image, mask):
    """Add the mask to the red channel (gray images are expanded to RGB first)."""
    image = np.asarray(image, dtype=float)
    if image.shape[0] == 1:
        image = np.repeat(image, 3, axis=0)
    if image.shape[1:] != np.shape(mask)[-2:]:
        raise ValueError(f"mask {np.shape(mask)} does not match image {image.shape}")
    out = image.copy()
    out[0] = np.clip(image[0] + np.reshape(mask, image.shape[1:]), 0.0, 1.0)
    return out


def cmd_visualize(checkpoint, image_path, out_dir):
    net = model.load_checkpoint(checkpoint)
    image = data.read_image(image_path)
    regime = net.meta.get("regime", "regular")
    x, aux = train.model_inputs(regime, image[None], None, training=False)
    _, trace = model.forward_with_trace(net, x, aux)
    mask = vbp_forward(trace)[0]
    _makedirs(out_dir)
    data.write_pgm(mask, os.path.join(out_dir, "mask.pgm"))
    data.write_ppm(overlay(image, mask), os.path.join(out_dir, "overlay.ppm"))
    return mask


def build_parser():
    p = _Parser(prog="vbplupi", description="Privileged-mask training with VisualBackProp.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    g = sub.add_parser("gen-data", help="generate the synthetic dataset")
    g.add_argument("config")
    t = sub.add_parser("train", help="train one regime")
    t.add_argument("config")
    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    e.add_argument("checkpoint")
    e.add_argument("manifest")
    e.add_argument("split", choices=("train", "val", "test"))
    e.add_argument("--out", default=None, help="report directory (default: eval_<split> beside the checkpoint)")
    v = sub.add_parser("visualize", help="export a VisualBackProp mask and overlay")
    v.add_argument("checkpoint")
    v.add_argument("image")
    v.add_argument("outdir")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "gen-data":
            print(cmd_gen_data(args.config))
        elif args.command == "train":
            print(cmd_train(args.config))
        elif args.command == "eval":
            print(cmd_eval(args.checkpoint, args.manifest, args.split, args.out).to_tsv(), end="")
        else:
            cmd_visualize(args.checkpoint, args.image, args.outdir)
    except (ValueError, OSError, train.TrainingError) as exc:
        print(f"vbplupi {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
