"""Synthetic cluttered-shapes dataset, mask corruption, and PGM/PPM/manifest I/O.

Each sample holds 1-K class shapes (one per present class) on a uniform
background, plus oriented line clutter drawn on background pixels only. The
clutter orientation is tied to one of the present classes with probability
``clutter_correlation``, giving a regular classifier a background shortcut.
"""
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .tensor import DTYPE

SHAPES = ("disk", "square", "triangle", "diamond", "cross")
CLUTTER_STYLES = ("lines", "speckles")


@dataclass
class DatasetConfig:
    num_samples: int = 100
    image_size: int = 16
    num_classes: int = 3
    channels: int = 3
    shapes: tuple = SHAPES[:3]
    presence_prob: tuple = ()  # per class; empty -> 0.4 each
    min_size: int = 2
    max_size: int = 3
    background_intensity: tuple = (0.0, 0.2)
    object_intensity: tuple = (0.3, 1.0)
    clutter_intensity: tuple = (0.5, 1.0)
    clutter_density: float = 0.3
    clutter_style: str = "lines"
    clutter_correlation: float = 0.6
    # None keeps the train correlation on the test split too
    test_clutter_correlation: float = None
    noise: float = 0.0
    seed: int = 0
    splits: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        self.shapes = tuple(self.shapes)
        self.splits = tuple(float(s) for s in self.splits)
        if not self.presence_prob:
            self.presence_prob = (0.4,) * self.num_classes
        self.presence_prob = tuple(float(p) for p in self.presence_prob)
        for name in ("background_intensity", "object_intensity", "clutter_intensity"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    def validate(self):
        for name in ("num_samples", "image_size", "num_classes", "channels", "min_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_size < self.min_size:
            raise ValueError("max_size must be >= min_size")
        if len(self.splits) != 3 or min(self.splits) < 0 or abs(sum(self.splits) - 1.0) > 1e-9:
            raise ValueError(f"splits must be three nonnegative fractions summing to 1, got {self.splits}")
        if len(self.shapes) < self.num_classes:
            raise ValueError(f"need {self.num_classes} shape names, got {self.shapes}")
        unknown = set(self.shapes) - set(SHAPES)
        if unknown:
            raise ValueError(f"unknown shapes {sorted(unknown)}; choose from {SHAPES}")
        if len(self.presence_prob) != self.num_classes or not all(0 <= p <= 1 for p in self.presence_prob):
            raise ValueError("presence_prob needs one probability per class")
        for name in ("background_intensity", "object_intensity", "clutter_intensity"):
            lo_hi = getattr(self, name)
            if len(lo_hi) != 2 or not 0 <= lo_hi[0] <= lo_hi[1] <= 1:
                raise ValueError(f"{name} must be a (low, high) range inside [0, 1]")
        if self.object_intensity[0] <= self.background_intensity[1]:
            raise ValueError("objects must be brighter than the brightest background")
        if self.clutter_style not in CLUTTER_STYLES:
            raise ValueError(f"clutter_style must be one of {CLUTTER_STYLES}")
        for name in ("clutter_density", "clutter_correlation"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.test_clutter_correlation is not None and not 0 <= self.test_clutter_correlation <= 1:
            raise ValueError("test_clutter_correlation must lie in [0, 1]")
        if 2 * self.max_size + 1 > self.image_size:
            raise ValueError(
                f"shapes too large for image size: max_size {self.max_size} needs {2 * self.max_size + 1} px, "
                f"image is {self.image_size}"
            )


@dataclass
class Sample:
    image: np.ndarray  # (C, H, W) in [0, 1]
    seg_mask: np.ndarray  # (1, H, W) binary
    labels: np.ndarray  # (K,) binary
    id: str
    clutter_mask: np.ndarray = field(default=None, repr=False)  # (1, H, W); pixels carrying clutter


def sample_id(index):
    return f"s{index:06d}"


def split_counts(cfg):
    n = cfg.num_samples
    n_train = int(round(cfg.splits[0] * n))
    n_val = min(int(round(cfg.splits[1] * n)), n - n_train)
    return n_train, n_val, n - n_train - n_val


def split_of(cfg, index):
    n_train, n_val, _ = split_counts(cfg)
    if index < n_train:
        return "train"
    return "val" if index < n_train + n_val else "test"


def expected_label_frequencies(cfg):
    """Marginal P(label k = 1) implied by the presence rule (empty draws get one uniform class)."""
    p = np.asarray(cfg.presence_prob)
    none = np.prod(1.0 - p)
    return p + none / cfg.num_classes


def shape_mask(kind, size, cy, cx, r):
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        m = dy * dy + dx * dx <= r * r
    elif kind == "square":
        m = (np.abs(dy) <= r) & (np.abs(dx) <= r)
    elif kind == "triangle":
        m = (dy >= -r) & (dy <= r) & (2 * np.abs(dx) <= dy + r)
    elif kind == "diamond":
        m = np.abs(dy) + np.abs(dx) <= r
    elif kind == "cross":
        arm = max(r // 3, 0)
        m = ((np.abs(dy) <= arm) & (np.abs(dx) <= r)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= r))
    else:
        raise ValueError(f"unknown shape {kind!r}")
    return m


def _draw_segment(canvas, cy, cx, angle, length):
    size = canvas.shape[0]
    dy, dx = math.sin(angle), math.cos(angle)
    for t in np.arange(-length / 2, length / 2 + 1e-9, 0.5):
        y = int(round(cy + t * dy))
        x = int(round(cx + t * dx))
        if 0 <= y < size and 0 <= x < size:
            canvas[y, x] = True


def _sample_rng(cfg, index):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))


def generate_sample(cfg, index):
    if not 0 <= index < cfg.num_samples:
        raise IndexError(f"sample index {index} outside [0, {cfg.num_samples})")
    rng = _sample_rng(cfg, index)
    size, K = cfg.image_size, cfg.num_classes

    present = rng.random(K) < np.asarray(cfg.presence_prob)
    if not present.any():
        present[rng.integers(K)] = True
    classes = np.flatnonzero(present)

    bg = rng.uniform(*cfg.background_intensity)
    image = np.full((cfg.channels, size, size), bg, dtype=DTYPE)
    seg = np.zeros((size, size), dtype=bool)
    for k in rng.permutation(classes):
        for attempt in range(200):
            hi = cfg.max_size if attempt < 100 else cfg.min_size
            r = int(rng.integers(cfg.min_size, hi + 1))
            cy, cx = rng.integers(r, size - r, size=2)
            m = shape_mask(cfg.shapes[k], size, cy, cx, r)
            if not (m & seg).any():
                break
        else:
            raise ValueError(f"could not place {len(classes)} shapes in a {size}x{size} image; shapes too large")
        seg |= m
        # class-correlated brightness: class k centres at a fraction of the range, +-25% jitter
        lo, hi = cfg.object_intensity
        frac = 0.25 + 0.5 * k / max(K - 1, 1) + rng.uniform(-0.25, 0.25) + rng.uniform(-0.05, 0.05, size=cfg.channels)
        value = lo + (hi - lo) * np.clip(frac, 0.0, 1.0)
        image[:, m] = value[:, None]

    clutter = np.zeros((size, size), dtype=bool)
    n_seg = int(round(cfg.clutter_density * size / 2))
    if n_seg:
        corr = cfg.clutter_correlation
        if cfg.test_clutter_correlation is not None and split_of(cfg, index) == "test":
            corr = cfg.test_clutter_correlation
        pattern = rng.choice(classes) if rng.random() < corr else rng.integers(K)
        angle = math.pi * pattern / K
        if cfg.clutter_style == "speckles":
            n_seg, lengths = 3 * n_seg, np.full(3 * n_seg, 1.0)
        else:
            lengths = rng.uniform(size / 3, size * 0.8, size=n_seg)
        for length in lengths:
            cy, cx = rng.uniform(0, size - 1, size=2)
            _draw_segment(clutter, cy, cx, angle, length)
        clutter &= ~seg
        image[:, clutter] = rng.uniform(*cfg.clutter_intensity)

    if cfg.noise > 0:
        image = np.clip(image + rng.normal(0.0, cfg.noise, size=image.shape), 0.0, 1.0)

    labels = present.astype(DTYPE)
    return Sample(image, seg[None].astype(DTYPE), labels, sample_id(index), clutter[None].astype(DTYPE))


def corrupt_mask_bbox(mask):
    """Replace each 4-connected foreground component by its filled bounding box."""
    m = np.asarray(mask) > 0.5
    out = np.zeros(m.shape, dtype=DTYPE)
    plane = m.reshape(m.shape[-2:])
    labelled, _ = ndimage.label(plane)
    target = out.reshape(plane.shape)
    for sl in ndimage.find_objects(labelled):
        target[sl] = 1.0
    return out


# --- PGM / PPM -------------------------------------------------------------

MAX_DIM = 1 << 15


class ImageFormatError(ValueError):
    pass


class MalformedHeaderError(ImageFormatError):
    pass


class DimensionOverflowError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    pass


def quantize(t):
    """8-bit levels, round half to even."""
    t = np.asarray(t, dtype=DTYPE)
    if t.size and (t.min() < 0 or t.max() > 1):
        raise ValueError("image values must lie in [0, 1]")
    return np.rint(t * 255.0).astype(np.uint8)


def _encode(t, channels, magic):
    t = np.asarray(t, dtype=DTYPE)
    if t.ndim == 2 and channels == 1:
        t = t[None]
    if t.ndim != 3 or t.shape[0] != channels:
        raise ValueError(f"{magic} needs a ({channels},H,W) tensor, got shape {t.shape}")
    _, h, w = t.shape
    header = f"{magic}\n{w} {h}\n255\n".encode("ascii")
    return header + quantize(t).transpose(1, 2, 0).tobytes()


def _decode(buf, magic, channels):
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedHeaderError(f"header ended after {len(tokens)} fields")
        tokens.append(buf[start:pos])
    if tokens[0] != magic.encode():
        raise MalformedHeaderError(f"expected magic {magic!r}, got {tokens[0]!r}")
    try:
        w, h, maxval = (int(tok) for tok in tokens[1:])
    except ValueError:
        raise MalformedHeaderError(f"non-integer header field in {tokens[1:]!r}") from None
    if maxval != 255:
        raise MalformedHeaderError(f"only maxval 255 is supported, got {maxval}")
    if w < 1 or h < 1:
        raise MalformedHeaderError(f"nonpositive dimensions {w}x{h}")
    if w > MAX_DIM or h > MAX_DIM:
        raise DimensionOverflowError(f"dimensions {w}x{h} exceed {MAX_DIM}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise MalformedHeaderError("missing whitespace after maxval")
    pos += 1
    need = w * h * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise TruncatedPayloadError(f"payload has {len(payload)} of {need} bytes")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, channels).transpose(2, 0, 1)
    return arr.astype(DTYPE) / 255.0


def _write(path, data):
    with open(path, "wb") as fh:
        fh.write(data)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def write_pgm(t, path):
    _write(path, _encode(t, 1, "P5"))


def read_pgm(path):
    return _decode(_read(path), "P5", 1)


def write_ppm(t, path):
    _write(path, _encode(t, 3, "P6"))


def read_ppm(path):
    return _decode(_read(path), "P6", 3)


def write_image(t, path):
    (write_pgm if np.shape(t)[0] == 1 else write_ppm)(t, path)


def read_image(path):
    buf = _read(path)
    if buf[:2] == b"P5":
        return _decode(buf, "P5", 1)
    return _decode(buf, "P6", 3)


# --- manifests -------------------------------------------------------------

@dataclass
class ManifestRow:
    id: str
    image: str
    mask: str
    labels: np.ndarray
    split: str


def manifest_lines(cfg, image_ext):
    for i in range(cfg.num_samples):
        yield i, sample_id(i), f"images/{sample_id(i)}.{image_ext}", f"masks/{sample_id(i)}.pgm"


def build_manifest(cfg, out_dir):
    """Generate every sample, write images/masks, and return the manifest path."""
    ext = "pgm" if cfg.channels == 1 else "ppm"
    if cfg.channels not in (1, 3):
        raise ValueError("file export supports 1 or 3 channels")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    lines = []
    for i, sid, img_rel, mask_rel in manifest_lines(cfg, ext):
        s = generate_sample(cfg, i)
        write_image(s.image, os.path.join(out_dir, img_rel))
        write_pgm(s.seg_mask, os.path.join(out_dir, mask_rel))
        bits = "".join(str(int(v)) for v in s.labels)
        lines.append(f"{sid}\t{img_rel}\t{mask_rel}\t{bits}\t{split_of(cfg, i)}\n")
    path = os.path.join(out_dir, "manifest.tsv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)
    return path


def read_manifest(path, split=None):
    root = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5 or set(parts[3]) - {"0", "1"}:
                raise ValueError(f"{path}:{lineno}: malformed manifest line")
            sid, img, mask, bits, tag = parts
            if split is not None and tag != split:
                continue
            labels = np.array([float(b) for b in bits], dtype=DTYPE)
            rows.append(ManifestRow(sid, os.path.join(root, img), os.path.join(root, mask), labels, tag))
    return rows
