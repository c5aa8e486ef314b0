"""Declarative construction and evaluation of the four dilated architectures.

Every network is a stack of dilated convolutions (kernel/rate plan fixed per
architecture), optionally interleaved with stride-1 max pooling, followed by
a 1x1 classifier. A rectified-linear activation follows every convolution
except the classifier. The densely connected variant feeds each layer (and
the classifier) the channel concatenation of the raw input and all preceding
feature maps. Default widths put the parameter totals near 1.3M / 0.8M /
1.3M / 1.9M for the four networks at 4 input bands and 6 classes.

Weight files: magic ``DSW1``; header of unsigned 32-bit little-endian words
(architecture id, in_channels, num_classes, layer count, then kernel/rate/
width per layer, pooling rows encoded as window/0/0); parameters follow as
little-endian float32, weights then bias per convolution, classifier last.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import ConvParams
from .errors import DataError

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "ARCHITECTURES",
    "POOL_WINDOW",
    "canonical_name",
    "build",
    "init_params",
    "forward",
    "backward",
    "param_count",
    "save_params",
    "load_params",
]

POOL_WINDOW = 3


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" or "pool"
    kernel: int
    rate: int = 1
    width: int = 0  # conv output channels; 0 for pooling layers
    dense_input: bool = False

    def __post_init__(self):
        if self.kind not in ("conv", "pool"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.rate < 1:
            raise ValueError(f"dilation rate must be >= 1, got {self.rate}")
        if self.kind == "conv" and self.width < 1:
            raise ValueError(f"conv width must be >= 1, got {self.width}")


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    in_channels: int
    num_classes: int
    layers: tuple[LayerSpec, ...]
    dense_classifier: bool = False

    @property
    def conv_layers(self) -> tuple[LayerSpec, ...]:
        return tuple(l for l in self.layers if l.kind == "conv")

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(l.width for l in self.conv_layers)

    def receptive_field(self) -> int:
        return engine.receptive_field(self.layers)


@dataclass(frozen=True)
class ArchInfo:
    arch_id: int
    plan: tuple[tuple[int, int], ...]  # (kernel, rate) per convolution
    pooling: bool
    dense: bool
    default_widths: tuple[int, ...]


_PLAN6 = ((5, 1), (5, 2), (4, 3), (4, 4), (3, 5), (3, 6))
_PLAN8 = _PLAN6 + ((3, 7), (3, 8))

ARCHITECTURES = {
    "dilated6": ArchInfo(1, _PLAN6, False, False, (64, 64, 128, 128, 256, 256)),
    "dense_dilated6": ArchInfo(2, _PLAN6, False, True, (32, 32, 64, 64, 128, 128)),
    "dilated6_pooling": ArchInfo(3, _PLAN6, True, False, (64, 64, 128, 128, 256, 256)),
    "dilated8_pooling": ArchInfo(
        4, _PLAN8, True, False, (64, 64, 128, 128, 192, 192, 224, 224)
    ),
}

_NAME_LOOKUP = {k.replace("_", ""): k for k in ARCHITECTURES}
_ID_LOOKUP = {info.arch_id: name for name, info in ARCHITECTURES.items()}


def canonical_name(name: str) -> str:
    """Resolve spellings like 'Dilated6Pooling' or 'dilated6_pooling'."""
    key = name.strip().lower().replace("_", "").replace("-", "")
    if key not in _NAME_LOOKUP:
        raise ValueError(
            f"unknown architecture {name!r}; choose one of {sorted(ARCHITECTURES)}"
        )
    return _NAME_LOOKUP[key]


def build(
    name: str, in_channels: int, num_classes: int, widths=None
) -> NetworkSpec:
    """Instantiate one of the four architectures.

    widths overrides the per-convolution output channels (defaults sized to
    the budgets in the module docstring); its length must match the plan.
    """
    cname = canonical_name(name)
    info = ARCHITECTURES[cname]
    if in_channels < 1:
        raise ValueError(f"in_channels must be >= 1, got {in_channels}")
    if num_classes < 1:
        raise ValueError(f"num_classes must be >= 1, got {num_classes}")
    widths = tuple(info.default_widths if widths is None else widths)
    if len(widths) != len(info.plan):
        raise ValueError(
            f"{cname} needs {len(info.plan)} widths, got {len(widths)}"
        )
    layers = []
    for (kernel, rate), width in zip(info.plan, widths):
        layers.append(
            LayerSpec("conv", kernel, rate, int(width), dense_input=info.dense)
        )
        if info.pooling:
            layers.append(LayerSpec("pool", POOL_WINDOW))
    return NetworkSpec(
        name=cname,
        in_channels=in_channels,
        num_classes=num_classes,
        layers=tuple(layers),
        dense_classifier=info.dense,
    )


def _conv_input_channels(spec: NetworkSpec) -> tuple[list[int], int]:
    """Input channel count of each convolution, plus the classifier input."""
    widths = list(spec.widths)
    ins = []
    for i, layer in enumerate(spec.conv_layers):
        if layer.dense_input:
            ins.append(spec.in_channels + sum(widths[:i]))
        else:
            ins.append(spec.in_channels if i == 0 else widths[i - 1])
    if spec.dense_classifier:
        cls_in = spec.in_channels + sum(widths)
    else:
        cls_in = widths[-1] if widths else spec.in_channels
    return ins, cls_in


def param_count(spec: NetworkSpec) -> int:
    """Trainable parameter total (pooling layers contribute nothing)."""
    ins, cls_in = _conv_input_channels(spec)
    total = 0
    for layer, cin in zip(spec.conv_layers, ins):
        total += layer.width * cin * layer.kernel * layer.kernel + layer.width
    total += spec.num_classes * cls_in + spec.num_classes
    return total


def init_params(spec: NetworkSpec, seed: int, dtype=np.float32) -> list[ConvParams]:
    """Fan-in-scaled Gaussian weights (std sqrt(2/fan_in)) and zero biases."""
    rng = np.random.default_rng(seed)
    ins, cls_in = _conv_input_channels(spec)
    params = []
    for layer, cin in zip(spec.conv_layers, ins):
        fan_in = cin * layer.kernel * layer.kernel
        weights = rng.normal(
            0.0, np.sqrt(2.0 / fan_in), size=(layer.width, cin, layer.kernel, layer.kernel)
        )
        params.append(
            ConvParams(
                weights.astype(dtype),
                np.zeros(layer.width, dtype=dtype),
                rate=layer.rate,
            )
        )
    cls_weights = rng.normal(
        0.0, np.sqrt(2.0 / cls_in), size=(spec.num_classes, cls_in, 1, 1)
    )
    params.append(
        ConvParams(
            cls_weights.astype(dtype),
            np.zeros(spec.num_classes, dtype=dtype),
            rate=1,
        )
    )
    return params


@dataclass
class Saved:
    """Forward activations kept for the backward pass.

    feats[0] is the network input, feats[i] the final output of stage i
    (post-activation, post-pooling); pre_relu and pools are per stage.
    """

    feats: list = field(default_factory=list)
    pre_relu: list = field(default_factory=list)
    pools: list = field(default_factory=list)


def _check_params(spec: NetworkSpec, params) -> None:
    expected = len(spec.conv_layers) + 1
    if len(params) != expected:
        raise ValueError(
            f"{spec.name} expects {expected} parameter sets, got {len(params)}"
        )


def forward(spec: NetworkSpec, params, batch: np.ndarray, save_for_backward=False):
    """Dense logits of shape (batch, num_classes, rows, cols).

    Works at any spatial extent: the stack preserves resolution, so the
    output rows/cols always equal the input's. With save_for_backward,
    returns (logits, Saved) instead.
    """
    _check_params(spec, params)
    if batch.ndim != 4:
        raise ValueError(f"batch must be (n, channels, rows, cols), got {batch.shape}")
    if batch.shape[1] != spec.in_channels:
        raise ValueError(
            f"batch has {batch.shape[1]} channels but {spec.name} expects "
            f"{spec.in_channels}"
        )
    feats = [batch]
    pre_relu = []
    pools = []
    cur = batch
    ci = 0
    i = 0
    while i < len(spec.layers):
        layer = spec.layers[i]
        if layer.kind != "conv":
            raise ValueError("pooling layer without a preceding convolution")
        inp = engine.concat_channels(feats) if layer.dense_input else cur
        pre = engine.conv2d_dilated(inp, params[ci])
        act = engine.relu(pre)
        pool_ctx = None
        if i + 1 < len(spec.layers) and spec.layers[i + 1].kind == "pool":
            act, pool_ctx = engine.maxpool_same(act, spec.layers[i + 1].kernel)
            i += 1
        pre_relu.append(pre if save_for_backward else None)
        pools.append(pool_ctx)
        feats.append(act)
        cur = act
        ci += 1
        i += 1
    cls_input = engine.concat_channels(feats) if spec.dense_classifier else cur
    logits = engine.conv2d_dilated(cls_input, params[-1])
    if save_for_backward:
        return logits, Saved(feats=feats, pre_relu=pre_relu, pools=pools)
    return logits


def backward(spec: NetworkSpec, params, saved: Saved, grad_logits: np.ndarray):
    """Chain rule over the layer stack; returns (per-layer grads, grad_input).

    Gradients come back as [(grad_weights, grad_bias), ...] in parameter
    order. Dense fan-out is handled by splitting each consumer's input
    gradient at the concatenation offsets and summing per producer.
    """
    if saved is None or not saved.feats:
        raise ValueError("backward requires the Saved record from forward(...)")
    _check_params(spec, params)
    n_convs = len(saved.pre_relu)
    seg_sizes = [spec.in_channels] + [f.shape[1] for f in saved.feats[1:]]
    grad_feats: list = [None] * (n_convs + 1)

    def accumulate(idx, g):
        if grad_feats[idx] is None:
            grad_feats[idx] = np.zeros_like(g)
        grad_feats[idx] += g

    grads: list = [None] * (n_convs + 1)

    cls_input = (
        engine.concat_channels(saved.feats)
        if spec.dense_classifier
        else saved.feats[-1]
    )
    g_in, gw, gb = engine.conv2d_dilated_backward(grad_logits, cls_input, params[-1])
    grads[-1] = (gw, gb)
    if spec.dense_classifier:
        for idx, piece in enumerate(engine.concat_channels_backward(g_in, seg_sizes)):
            accumulate(idx, piece)
    else:
        accumulate(n_convs, g_in)

    conv_specs = spec.conv_layers
    for ci in range(n_convs - 1, -1, -1):
        g = grad_feats[ci + 1]
        if g is None:
            g = np.zeros_like(saved.feats[ci + 1])
        if saved.pools[ci] is not None:
            g = engine.maxpool_same_backward(g, saved.pools[ci])
        g = engine.relu_backward(g, saved.pre_relu[ci])
        if conv_specs[ci].dense_input:
            inp = engine.concat_channels(saved.feats[: ci + 1])
        else:
            inp = saved.feats[ci]
        g_in, gw, gb = engine.conv2d_dilated_backward(g, inp, params[ci])
        grads[ci] = (gw, gb)
        if conv_specs[ci].dense_input:
            pieces = engine.concat_channels_backward(g_in, seg_sizes[: ci + 1])
            for idx, piece in enumerate(pieces):
                accumulate(idx, piece)
        else:
            accumulate(ci, g_in)

    grad_input = grad_feats[0]
    if grad_input is None:
        grad_input = np.zeros_like(saved.feats[0])
    return grads, grad_input


_MAGIC = b"DSW1"


def save_params(path, spec: NetworkSpec, params) -> None:
    """Write spec header + float32 parameters (see module docstring)."""
    _check_params(spec, params)
    info = ARCHITECTURES[spec.name]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(
            struct.pack(
                "<4I", info.arch_id, spec.in_channels, spec.num_classes, len(spec.layers)
            )
        )
        for layer in spec.layers:
            if layer.kind == "conv":
                f.write(struct.pack("<3I", layer.kernel, layer.rate, layer.width))
            else:
                f.write(struct.pack("<3I", layer.kernel, 0, 0))
        for p in params:
            f.write(np.ascontiguousarray(p.weights, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(p.bias, dtype="<f4").tobytes())


def load_params(path):
    """Read a weight file back into (NetworkSpec, params); validates layout."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}, expected {_MAGIC!r}")
    if len(blob) < 20:
        raise DataError(f"{path}: truncated header ({len(blob)} bytes)")
    arch_id, in_channels, num_classes, n_layers = struct.unpack_from("<4I", blob, 4)
    if arch_id not in _ID_LOOKUP:
        raise DataError(f"{path}: unknown architecture id {arch_id}")
    offset = 20
    records = []
    for _ in range(n_layers):
        if offset + 12 > len(blob):
            raise DataError(f"{path}: truncated layer table at byte {offset}")
        records.append(struct.unpack_from("<3I", blob, offset))
        offset += 12
    widths = tuple(w for _, rate, w in records if rate > 0)
    try:
        spec = build(_ID_LOOKUP[arch_id], in_channels, num_classes, widths=widths)
    except ValueError as e:
        raise DataError(f"{path}: {e}")
    expected = []
    for layer in spec.layers:
        if layer.kind == "conv":
            expected.append((layer.kernel, layer.rate, layer.width))
        else:
            expected.append((layer.kernel, 0, 0))
    if records != expected:
        raise DataError(
            f"{path}: layer table {records} does not match {spec.name} {expected}"
        )

    ins, cls_in = _conv_input_channels(spec)
    params = []
    shapes = [
        (layer.width, cin, layer.kernel, layer.kernel)
        for layer, cin in zip(spec.conv_layers, ins)
    ]
    shapes.append((num_classes, cls_in, 1, 1))
    rates = [layer.rate for layer in spec.conv_layers] + [1]
    for shape, rate in zip(shapes, rates):
        n_w = int(np.prod(shape))
        n_b = shape[0]
        need = (n_w + n_b) * 4
        if offset + need > len(blob):
            raise DataError(
                f"{path}: parameter block truncated at byte {offset}, "
                f"needed {need} more"
            )
        weights = np.frombuffer(blob, dtype="<f4", count=n_w, offset=offset)
        offset += n_w * 4
        bias = np.frombuffer(blob, dtype="<f4", count=n_b, offset=offset)
        offset += n_b * 4
        params.append(
            ConvParams(weights.reshape(shape).copy(), bias.copy(), rate=rate)
        )
    if offset != len(blob):
        raise DataError(
            f"{path}: {len(blob) - offset} trailing bytes after parameters"
        )
    return spec, params
