"""Declarative CNN with a trace-collecting forward pass and hand-written backward.

A network is a flat layer list, e.g.::

    conv(8,3,1,1) relu conv(8,3,2,1) relu resblock(3) gap linear(3) sigmoid

Each ``conv`` must be followed by ``relu``; the pair contributes one entry to
the forward trace, as does each ``resblock``. The tail is always
``gap linear(K) sigmoid``.
"""
import json
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn_ops
from .nn_ops import ConvParams, DeconvGeometry, ResBlockParams, conv_output_size
from .tensor import DTYPE, ShapeError
from .vbp import ForwardTrace


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def __str__(self):
        return f"conv({self.out_channels},{self.kernel},{self.stride},{self.padding})"


@dataclass(frozen=True)
class ReLU:
    def __str__(self):
        return "relu"


@dataclass(frozen=True)
class ResBlock:
    kernel: int = 3

    def __str__(self):
        return f"resblock({self.kernel})"


@dataclass(frozen=True)
class GlobalAvgPool:
    def __str__(self):
        return "gap"


@dataclass(frozen=True)
class Linear:
    out_features: int

    def __str__(self):
        return f"linear({self.out_features})"


@dataclass(frozen=True)
class Sigmoid:
    def __str__(self):
        return "sigmoid"


_LAYER_RE = re.compile(r"([a-z]+)(?:\(([^)]*)\))?")
_LAYER_TYPES = {
    "conv": Conv,
    "relu": ReLU,
    "resblock": ResBlock,
    "gap": GlobalAvgPool,
    "linear": Linear,
    "sigmoid": Sigmoid,
}


def parse_layers(text):
    layers = []
    for token in re.findall(r"[a-z]+(?:\([^)]*\))?", text.lower()):
        name, args = _LAYER_RE.fullmatch(token).groups()
        if name not in _LAYER_TYPES:
            raise SpecError(f"unknown layer {token!r}")
        vals = [int(a) for a in args.split(",")] if args else []
        try:
            layers.append(_LAYER_TYPES[name](*vals))
        except TypeError:
            raise SpecError(f"bad arguments for layer {token!r}") from None
    return layers


def format_layers(layers):
    return " ".join(str(layer) for layer in layers)


@dataclass
class NetworkSpec:
    input_shape: tuple  # (C, H, W)
    layers: list
    num_classes: int

    def __post_init__(self):
        if isinstance(self.layers, str):
            self.layers = parse_layers(self.layers)
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.validate()

    def validate(self):
        """Static shape check; returns per-layer output shapes."""
        layers = self.layers
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise SpecError(f"input_shape must be positive (C,H,W), got {self.input_shape}")
        if len(layers) < 4 or [type(x) for x in layers[-3:]] != [GlobalAvgPool, Linear, Sigmoid]:
            raise SpecError("network must end with gap linear(K) sigmoid")
        if layers[-2].out_features != self.num_classes:
            raise SpecError(f"layer {len(layers) - 2} ({layers[-2]}): expected {self.num_classes} outputs")
        shapes = []
        c, h, w = self.input_shape
        traced = 0
        for i, layer in enumerate(layers[:-3]):
            where = f"layer {i} ({layer})"
            if isinstance(layer, Conv):
                if i + 1 >= len(layers) or not isinstance(layers[i + 1], ReLU):
                    raise SpecError(f"{where}: conv must be followed by relu")
                if layer.kernel < 1 or layer.stride < 1 or layer.padding < 0 or layer.out_channels < 1:
                    raise SpecError(f"{where}: invalid conv hyperparameters")
                if layer.stride > 2:
                    raise SpecError(f"{where}: strides above 2 are not supported")
                h = conv_output_size(h, layer.kernel, layer.stride, layer.padding)
                w = conv_output_size(w, layer.kernel, layer.stride, layer.padding)
                if h < 1 or w < 1:
                    raise SpecError(f"{where}: nonpositive output extent {(h, w)}")
                c = layer.out_channels
                traced += 1
            elif isinstance(layer, ReLU):
                if i == 0 or not isinstance(layers[i - 1], Conv):
                    raise SpecError(f"{where}: relu is only allowed directly after conv")
            elif isinstance(layer, ResBlock):
                if layer.kernel < 1 or layer.kernel % 2 == 0:
                    raise SpecError(f"{where}: residual kernel must be odd")
                traced += 1
            else:
                raise SpecError(f"{where}: {type(layer).__name__} is only allowed in the tail")
            shapes.append((c, h, w))
        if traced == 0:
            raise SpecError("network needs at least one conv or resblock")
        shapes += [(c,), (self.num_classes,), (self.num_classes,)]
        return shapes

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": format_layers(self.layers),
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["input_shape"]), d["layers"], int(d["num_classes"]))

    def param_shapes(self):
        """Ordered ``{name: shape}`` in declaration order."""
        out = {}
        c = self.input_shape[0]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                out[f"{i}.weight"] = (layer.out_channels, c, layer.kernel, layer.kernel)
                out[f"{i}.bias"] = (layer.out_channels,)
                c = layer.out_channels
            elif isinstance(layer, ResBlock):
                k = layer.kernel
                for conv in ("conv1", "conv2"):
                    out[f"{i}.{conv}.weight"] = (c, c, k, k)
                    out[f"{i}.{conv}.bias"] = (c,)
            elif isinstance(layer, Linear):
                out[f"{i}.weight"] = (layer.out_features, c)
                out[f"{i}.bias"] = (layer.out_features,)
        return out


@dataclass
class Network:
    spec: NetworkSpec
    params: dict
    rng_seed: int = 0
    meta: dict = field(default_factory=dict)

    def num_params(self):
        return sum(p.size for p in self.params.values())

    def copy(self):
        return Network(self.spec, {k: v.copy() for k, v in self.params.items()}, self.rng_seed, dict(self.meta))


def glorot_bound(shape):
    if len(shape) == 4:
        rf = shape[2] * shape[3]
        fan_in, fan_out = shape[1] * rf, shape[0] * rf
    else:
        fan_out, fan_in = shape
    return np.sqrt(6.0 / (fan_in + fan_out))


def build(spec, seed=0, meta=None):
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith("bias"):
            params[name] = np.zeros(shape, dtype=DTYPE)
        else:
            bound = glorot_bound(shape)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return Network(spec, params, seed, dict(meta or {}))


def _conv_params(net, i):
    layer = net.spec.layers[i]
    return ConvParams(net.params[f"{i}.weight"], net.params[f"{i}.bias"], layer.stride, layer.padding)


def _res_params(net, i):
    k = net.spec.layers[i].kernel
    convs = [
        ConvParams(net.params[f"{i}.{c}.weight"], net.params[f"{i}.{c}.bias"], 1, k // 2)
        for c in ("conv1", "conv2")
    ]
    return ResBlockParams(*convs)


def _prepare_input(net, x, aux_mask):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim not in (3, 4):
        raise ShapeError(f"input must be (C,H,W) or (N,C,H,W), got {x.shape}")
    expected = net.spec.input_shape
    if aux_mask is not None:
        aux_mask = np.asarray(aux_mask, dtype=DTYPE)
        if x.shape[-3] + 1 != expected[0]:
            raise ShapeError(
                f"aux_mask given but network expects {expected[0]} input channels and image has {x.shape[-3]}"
            )
        x = np.concatenate([x, aux_mask], axis=-3)
    if x.shape[-3:] != expected:
        raise ShapeError(f"input shape {x.shape[-3:]} != network input {expected}")
    return x


def _forward(net, x, collect):
    layers = net.spec.layers
    trace = ForwardTrace(input_shape=tuple(x.shape[-2:])) if collect else None
    caches = [] if collect else None
    a = x
    for i, layer in enumerate(layers):
        inp = a
        cache = None
        if isinstance(layer, Conv):
            a = nn_ops.conv2d_forward(a, _conv_params(net, i))
        elif isinstance(layer, ReLU):
            a = nn_ops.relu_forward(a)
            if collect:
                conv = layers[i - 1]
                geom = DeconvGeometry(
                    (conv.kernel, conv.kernel), conv.stride, conv.padding, tuple(caches[i - 1][0].shape[-2:])
                )
                trace.append(a, geom)
        elif isinstance(layer, ResBlock):
            a, cache = nn_ops.residual_block_forward_cached(a, _res_params(net, i))
            if collect:
                k = layer.kernel
                trace.append(a, DeconvGeometry((k, k), 1, k // 2, tuple(inp.shape[-2:])))
        elif isinstance(layer, GlobalAvgPool):
            a = nn_ops.global_avg_pool(a)
        elif isinstance(layer, Linear):
            a = nn_ops.linear(a, net.params[f"{i}.weight"], net.params[f"{i}.bias"])
        elif isinstance(layer, Sigmoid):
            a = nn_ops.sigmoid(a)
        if collect:
            caches.append((inp, a, cache))
    return a, trace, caches


def forward_with_trace(net, x, aux_mask=None):
    """Return ``(probs, trace)``; ``probs`` is ``(K,)`` or ``(N, K)``."""
    x = _prepare_input(net, x, aux_mask)
    probs, trace, _ = _forward(net, x, True)
    return probs, trace


def forward_cached(net, x, aux_mask=None):
    x = _prepare_input(net, x, aux_mask)
    return _forward(net, x, True)


def predict(net, x, aux_mask=None):
    x = _prepare_input(net, x, aux_mask)
    return _forward(net, x, False)[0]


def backward(net, caches, grad_probs, trace_grads=None):
    """Parameter gradients given d loss/d probs and optional d loss/d trace maps."""
    layers = net.spec.layers
    entry_of = {}
    for i, layer in enumerate(layers):
        if isinstance(layer, (ReLU, ResBlock)):
            entry_of[i] = len(entry_of)
    grads = {}
    g = grad_probs
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        inp, out, cache = caches[i]
        if trace_grads is not None and i in entry_of and trace_grads[entry_of[i]] is not None:
            g = g + trace_grads[entry_of[i]]
        if isinstance(layer, Sigmoid):
            g = nn_ops.sigmoid_backward(out, g)
        elif isinstance(layer, Linear):
            g, gw, gb = nn_ops.linear_backward(inp, net.params[f"{i}.weight"], g)
            grads[f"{i}.weight"], grads[f"{i}.bias"] = gw, gb
        elif isinstance(layer, GlobalAvgPool):
            g = nn_ops.global_avg_pool_backward(inp.shape, g)
        elif isinstance(layer, ReLU):
            g = nn_ops.relu_backward(inp, g)
        elif isinstance(layer, Conv):
            g, gw, gb = nn_ops.conv2d_backward(inp, _conv_params(net, i), g)
            grads[f"{i}.weight"], grads[f"{i}.bias"] = gw, gb
        elif isinstance(layer, ResBlock):
            g, sub = nn_ops.residual_block_backward(inp, _res_params(net, i), g, cache)
            for conv, (gw, gb) in sub.items():
                grads[f"{i}.{conv}.weight"], grads[f"{i}.{conv}.bias"] = gw, gb
    return {name: grads[name] for name in net.params}


# --- checkpoints -----------------------------------------------------------

MAGIC = b"PFCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointLengthError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def checkpoint_bytes(net):
    header = json.dumps(
        {"spec": net.spec.to_dict(), "seed": int(net.rng_seed), "meta": net.meta}, sort_keys=True
    ).encode("utf-8")
    flat = np.concatenate([net.params[k].ravel() for k in net.params]).astype("<f8")
    return b"".join([
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<Q", len(header)),
        header,
        struct.pack("<Q", flat.size),
        flat.tobytes(),
    ])


def save_checkpoint(net, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(net))


def checkpoint_from_bytes(buf):
    if len(buf) < len(MAGIC) + 12:
        raise CheckpointTruncatedError(f"checkpoint is only {len(buf)} bytes")
    if buf[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    (hlen,) = struct.unpack_from("<Q", buf, 8)
    pos = 16
    if hlen > len(buf) - pos - 8:
        raise CheckpointLengthError(f"header length {hlen} exceeds file size {len(buf)}")
    try:
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
        spec = NetworkSpec.from_dict(header["spec"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, SpecError) as exc:
        raise CheckpointFormatError(f"unreadable checkpoint header: {exc}") from None
    pos += hlen
    (count,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    shapes = spec.param_shapes()
    expected = sum(int(np.prod(s)) for s in shapes.values())
    if count != expected:
        raise CheckpointLengthError(f"checkpoint declares {count} parameters, spec needs {expected}")
    have = len(buf) - pos
    if have < 8 * count:
        raise CheckpointTruncatedError(f"parameter payload truncated: {have} of {8 * count} bytes")
    if have > 8 * count:
        raise CheckpointLengthError(f"{have - 8 * count} trailing bytes after parameters")
    flat = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(DTYPE)
    params = {}
    off = 0
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        params[name] = flat[off:off + n].reshape(shape).copy()
        off += n
    return Network(spec, params, header.get("seed", 0), header.get("meta", {}))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
