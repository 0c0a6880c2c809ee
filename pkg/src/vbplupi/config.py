"""``key = value`` config files with sections, for gen-data and train runs.

Relative paths are resolved against the config file's directory. Unknown
keys are rejected so that a copied config is a complete record of the run.
"""
import configparser
import os
from dataclasses import dataclass, field, fields

from .data import DatasetConfig
from .optim import ScheduleConfig

REGIMES = ("regular", "added-seg-mask", "seg-mole", "full-focus", "half-focus")
MASK_CORRUPTIONS = ("none", "bbox")


class ConfigError(ValueError):
    pass


@dataclass
class OptimConfig:
    adam_lr: float = 1e-4
    sgd_lr: float = 1e-4
    switch_step: int = 0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    decay_factor: float = 0.1
    decay_every: int = 30
    decay_unit: str = "epochs"
    lr_min: float = 0.0
    patience: int = 3

    def schedule(self, steps_per_epoch):
        return ScheduleConfig(
            adam_lr=self.adam_lr,
            sgd_lr=self.sgd_lr,
            switch_step=self.switch_step,
            decay_factor=self.decay_factor,
            decay_every=self.decay_every,
            decay_unit=self.decay_unit,
            steps_per_epoch=steps_per_epoch,
            lr_min=self.lr_min,
        )


DEFAULT_LAYERS = "conv(8,3,1,1) relu conv(8,3,2,1) relu resblock(3) gap linear(3) sigmoid"


@dataclass
class RunConfig:
    regime: str = "regular"
    lam: float = 1.0
    # epochs trained on BCE alone before the privileged term switches on
    pi_warmup_epochs: int = 0
    manifest: str = ""
    mask_corruption: str = "none"
    seed: int = 0
    output_dir: str = "run"
    epochs: int = 10
    batch_size: int = 32
    layers: str = DEFAULT_LAYERS
    optim: OptimConfig = field(default_factory=OptimConfig)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"[run] regime: {self.regime!r} is not one of {REGIMES}")
        if self.mask_corruption not in MASK_CORRUPTIONS:
            raise ConfigError(f"[run] mask_corruption: {self.mask_corruption!r} is not one of {MASK_CORRUPTIONS}")
        if self.lam < 0:
            raise ConfigError("[run] lambda: must be nonnegative")
        if self.pi_warmup_epochs < 0:
            raise ConfigError("[run] pi_warmup_epochs: must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("[run] epochs and batch_size must be positive")

    @property
    def loss_mode(self):
        return {"full-focus": "full", "half-focus": "half"}.get(self.regime, "regular")

    @property
    def needs_masks(self):
        return self.regime != "regular"


def _coerce(section, key, raw, default):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return None if raw.strip().lower() == "none" else float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], str):
                return tuple(items)
            return tuple(float(s) for s in items)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _fill(cls, section, items, renames=None, skip=()):
    renames = renames or {}
    defaults = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        defaults[f.name] = f.default if not callable(f.default_factory) else f.default_factory()
    kwargs = {}
    for key, raw in items:
        name = renames.get(key, key)
        if name not in defaults:
            raise ConfigError(f"[{section}] {key}: unknown field")
        kwargs[name] = _coerce(section, key, raw, defaults[name])
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _read(path):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parser


def _resolve(base, p):
    return p if not p or os.path.isabs(p) else os.path.normpath(os.path.join(base, p))


def load_dataset_config(path):
    """Return ``(DatasetConfig, output_dir)``."""
    parser = _read(path)
    base = os.path.dirname(os.path.abspath(path))
    for sec in parser.sections():
        if sec not in ("dataset", "output"):
            raise ConfigError(f"[{sec}]: unknown section")
    if not parser.has_section("dataset"):
        raise ConfigError(f"{path}: missing [dataset] section")
    items = parser.items("dataset")
    for key, raw in items:
        if key == "splits":
            vals = _coerce("dataset", key, raw, (0.0,))
            if len(vals) != 3 or abs(sum(vals) - 1.0) > 1e-9:
                raise ConfigError(f"[dataset] splits: fractions {vals} must be three values summing to 1")
    cfg = _fill(DatasetConfig, "dataset", items)
    out = parser.get("output", "dir", fallback="dataset")
    return cfg, _resolve(base, out)


def load_run_config(path):
    parser = _read(path)
    base = os.path.dirname(os.path.abspath(path))
    for sec in parser.sections():
        if sec not in ("run", "network", "optim"):
            raise ConfigError(f"[{sec}]: unknown section")
    optim = _fill(OptimConfig, "optim", parser.items("optim") if parser.has_section("optim") else [])
    items = list(parser.items("run")) if parser.has_section("run") else []
    if parser.has_section("network"):
        for key, raw in parser.items("network"):
            if key != "layers":
                raise ConfigError(f"[network] {key}: unknown field")
            items.append(("layers", raw))
    run = _fill(RunConfig, "run", items, renames={"lambda": "lam"}, skip=("optim",))
    run.optim = optim
    run.manifest = _resolve(base, run.manifest)
    run.output_dir = _resolve(base, run.output_dir)
    return run


def dump_run_config(run):
    lines = ["[run]\n"]
    for f in fields(RunConfig):
        if f.name in ("optim", "layers"):
            continue
        key = "lambda" if f.name == "lam" else f.name
        lines.append(f"{key} = {getattr(run, f.name)}\n")
    lines.append("\n[network]\n")
    lines.append(f"layers = {run.layers}\n")
    lines.append("\n[optim]\n")
    for f in fields(OptimConfig):
        lines.append(f"{f.name} = {getattr(run.optim, f.name)}\n")
    return "".join(lines)


def dump_dataset_config(cfg, out_dir):
    lines = ["[dataset]\n"]
    for f in fields(DatasetConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}\n")
    lines.append(f"\n[output]\ndir = {out_dir}\n")
    return "".join(lines)
