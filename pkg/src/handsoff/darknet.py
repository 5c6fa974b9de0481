"""Darknet network-description (``.cfg``) and binary weights parsing.

The config dialect is INI-like: ``[section]`` headers followed by
``key=value`` lines, ``#``/``;`` comments. Only the five layer kinds used by
the YOLOv3 graph are accepted. Weights are little-endian: a small version
header followed by one parameter block per convolutional layer.
"""

from __future__ import annotations

import io
import logging
import re
import struct
from dataclasses import dataclass, field
from importlib import resources
from typing import BinaryIO, ClassVar, Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import (
    ConfigError,
    NegativeVarianceError,
    TrailingBytesError,
    TruncatedWeightsError,
)
from .tensor import DEFAULT_BN_EPSILON, DEFAULT_LEAKY_SLOPE, BatchNorm, ConvParams, conv_output_size

log = logging.getLogger(__name__)

ACTIVATIONS = ("leaky", "linear")
REFERENCE_CONFIG = "yolov3-handshake.cfg"


@dataclass(frozen=True)
class LayerSpec:
    index: int
    kind: ClassVar[str] = ""


@dataclass(frozen=True)
class ConvLayer(LayerSpec):
    kind: ClassVar[str] = "convolutional"
    filters: int = 0
    size: int = 1
    stride: int = 1
    padding: int = 0
    batch_normalize: bool = False
    activation: str = "linear"
    slope: float = DEFAULT_LEAKY_SLOPE


@dataclass(frozen=True)
class ShortcutLayer(LayerSpec):
    kind: ClassVar[str] = "shortcut"
    source: int = 0
    activation: str = "linear"


@dataclass(frozen=True)
class RouteLayer(LayerSpec):
    kind: ClassVar[str] = "route"
    sources: Tuple[int, ...] = ()


@dataclass(frozen=True)
class UpsampleLayer(LayerSpec):
    kind: ClassVar[str] = "upsample"
    factor: int = 2


@dataclass(frozen=True)
class YoloLayer(LayerSpec):
    kind: ClassVar[str] = "yolo"
    mask: Tuple[int, ...] = ()
    anchors: Tuple[Tuple[float, float], ...] = ()
    classes: int = 1

    @property
    def depth(self) -> int:
        return len(self.mask) * (5 + self.classes)

    @property
    def head_anchors(self) -> Tuple[Tuple[float, float], ...]:
        return tuple(self.anchors[m] for m in self.mask)


@dataclass(frozen=True)
class NetworkSpec:
    layers: Tuple[LayerSpec, ...]
    input_width: int = 416
    input_height: int = 416
    input_channels: int = 3
    warnings: Tuple[str, ...] = field(default=(), compare=False, repr=False)

    @property
    def heads(self) -> List[YoloLayer]:
        return [layer for layer in self.layers if isinstance(layer, YoloLayer)]

    @property
    def anchors(self) -> Tuple[Tuple[float, float], ...]:
        heads = self.heads
        return heads[0].anchors if heads else ()

    @property
    def classes(self) -> int:
        heads = self.heads
        return heads[0].classes if heads else 0

    @property
    def shapes(self) -> List[Tuple[int, int, int]]:
        """Per-layer output shapes (C, H, W); see :func:`infer_shapes`."""
        return infer_shapes(self)

    def conv_layers(self) -> List[ConvLayer]:
        return [layer for layer in self.layers if isinstance(layer, ConvLayer)]


# ---------------------------------------------------------------------------
# config text


_SECTION_RE = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")
_KEYVAL_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")

_NET_KEYS = {"width", "height", "channels"}
_LAYER_KEYS = {
    "convolutional": {"filters", "size", "stride", "pad", "padding", "batch_normalize", "activation", "slope"},
    "shortcut": {"from", "activation"},
    "route": {"layers"},
    "upsample": {"stride"},
    "yolo": {"mask", "anchors", "classes", "num"},
}


@dataclass
class _Section:
    name: str
    line: int
    options: Dict[str, Tuple[str, int]] = field(default_factory=dict)


def _tokenize(text: str) -> List[_Section]:
    sections: List[_Section] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = _SECTION_RE.match(line)
        if m:
            sections.append(_Section(m.group(1).lower(), lineno))
            continue
        m = _KEYVAL_RE.match(line)
        if not m:
            raise ConfigError(f"malformed line {raw.strip()!r}", line=lineno)
        if not sections:
            raise ConfigError("key=value line before any [section]", line=lineno)
        key, value = m.group(1), m.group(2).strip()
        if value == "":
            raise ConfigError(f"empty value for key {key!r}", line=lineno)
        sections[-1].options[key] = (value, lineno)
    return sections


class _Reader:
    """Typed access to one section's options with line-numbered errors."""

    def __init__(self, section: _Section, layer_index: Optional[int]):
        self.section = section
        self.layer_index = layer_index

    def _where(self) -> str:
        if self.layer_index is None:
            return f"[{self.section.name}]"
        return f"layer {self.layer_index} [{self.section.name}]"

    def raw(self, key: str, default=None, required=False):
        if key in self.section.options:
            return self.section.options[key]
        if required:
            raise ConfigError(f"{self._where()} missing mandatory key {key!r}", line=self.section.line)
        return default, self.section.line

    def int(self, key: str, default=None, required=False) -> int:
        value, line = self.raw(key, default, required)
        if isinstance(value, int):
            return value
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{self._where()} key {key!r} expects an integer, got {value!r}", line=line)

    def float(self, key: str, default=None) -> float:
        value, line = self.raw(key, default)
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{self._where()} key {key!r} expects a number, got {value!r}", line=line)

    def int_list(self, key: str, required=False) -> List[int]:
        value, line = self.raw(key, "", required)
        try:
            return [int(v) for v in str(value).split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"{self._where()} key {key!r} expects integers, got {value!r}", line=line)

    def float_list(self, key: str, required=False) -> List[float]:
        value, line = self.raw(key, "", required)
        try:
            return [float(v) for v in str(value).split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"{self._where()} key {key!r} expects numbers, got {value!r}", line=line)

    def line_of(self, key: str) -> int:
        return self.section.options.get(key, (None, self.section.line))[1]


def _resolve_ref(ref: int, index: int, key_line: int, kind: str) -> int:
    target = index + ref if ref < 0 else ref
    if target >= index:
        raise ConfigError(
            f"layer {index} ({kind}) references layer {target}, which is not earlier than {index}",
            line=key_line,
        )
    if target < 0:
        raise ConfigError(f"layer {index} ({kind}) references nonexistent layer {target}", line=key_line)
    return target


def _parse_layer(section: _Section, index: int) -> LayerSpec:
    r = _Reader(section, index)
    kind = section.name
    if kind == "convolutional":
        size = r.int("size", required=True)
        filters = r.int("filters", required=True)
        stride = r.int("stride", 1)
        if "padding" in section.options:
            padding = r.int("padding")
        else:
            padding = size // 2 if r.int("pad", 0) else 0
        activation = str(r.raw("activation", "linear")[0])
        if activation not in ACTIVATIONS:
            raise ConfigError(
                f"layer {index}: unsupported activation {activation!r}", line=r.line_of("activation")
            )
        slope = r.float("slope", DEFAULT_LEAKY_SLOPE)
        if filters < 1 or size < 1 or stride < 1 or padding < 0:
            raise ConfigError(f"layer {index}: invalid convolution geometry", line=section.line)
        if not 0.0 <= slope < 1.0:
            raise ConfigError(f"layer {index}: slope must lie in [0, 1)", line=r.line_of("slope"))
        return ConvLayer(
            index=index,
            filters=filters,
            size=size,
            stride=stride,
            padding=padding,
            batch_normalize=bool(r.int("batch_normalize", 0)),
            activation=activation,
            slope=slope,
        )
    if kind == "shortcut":
        ref = r.int("from", required=True)
        activation = str(r.raw("activation", "linear")[0])
        if activation not in ACTIVATIONS:
            raise ConfigError(f"layer {index}: unsupported activation {activation!r}", line=r.line_of("activation"))
        return ShortcutLayer(
            index=index, source=_resolve_ref(ref, index, r.line_of("from"), kind), activation=activation
        )
    if kind == "route":
        refs = r.int_list("layers", required=True)
        if not refs:
            raise ConfigError(f"layer {index}: route needs at least one source", line=r.line_of("layers"))
        sources = tuple(_resolve_ref(ref, index, r.line_of("layers"), kind) for ref in refs)
        return RouteLayer(index=index, sources=sources)
    if kind == "upsample":
        factor = r.int("stride", 2)
        if factor < 1:
            raise ConfigError(f"layer {index}: upsample stride must be >= 1", line=r.line_of("stride"))
        return UpsampleLayer(index=index, factor=factor)
    if kind == "yolo":
        mask = r.int_list("mask", required=True)
        flat = r.float_list("anchors", required=True)
        classes = r.int("classes", required=True)
        if len(flat) % 2:
            raise ConfigError(f"layer {index}: anchors must come in (w, h) pairs", line=r.line_of("anchors"))
        anchors = tuple((flat[i], flat[i + 1]) for i in range(0, len(flat), 2))
        for m in mask:
            if not 0 <= m < len(anchors):
                raise ConfigError(
                    f"layer {index}: mask index {m} outside {len(anchors)} anchors", line=r.line_of("mask")
                )
        if any(w <= 0 or h <= 0 for w, h in anchors):
            raise ConfigError(f"layer {index}: anchors must be positive", line=r.line_of("anchors"))
        if classes < 1:
            raise ConfigError(f"layer {index}: classes must be >= 1", line=r.line_of("classes"))
        if not mask:
            raise ConfigError(f"layer {index}: empty mask", line=r.line_of("mask"))
        return YoloLayer(index=index, mask=tuple(mask), anchors=anchors, classes=classes)
    raise ConfigError(f"unknown section kind [{section.name}]", line=section.line)


def parse_config(text: str) -> NetworkSpec:
    """Parse and validate a network description.

    Unknown keys are logged as warnings (and kept on ``spec.warnings``);
    unknown section kinds, malformed lines, missing mandatory keys, forward
    references, and head depths that disagree with ``mask``/``classes`` raise
    :class:`ConfigError`.
    """
    sections = _tokenize(text)
    warnings: List[str] = []
    width = height = 416
    channels = 3
    if sections and sections[0].name in ("net", "network"):
        net = _Reader(sections[0], None)
        width = net.int("width", 416)
        height = net.int("height", 416)
        channels = net.int("channels", 3)
        for key, (_, line) in sections[0].options.items():
            if key not in _NET_KEYS:
                warnings.append(f"line {line}: ignoring key {key!r} in [net]")
        sections = sections[1:]
        if width < 1 or height < 1 or channels < 1:
            raise ConfigError("[net] dimensions must be positive")

    layers = []
    for index, section in enumerate(sections):
        if section.name in ("net", "network"):
            raise ConfigError("[net] must be the first section", line=section.line)
        layer = _parse_layer(section, index)
        for key, (_, line) in section.options.items():
            if key not in _LAYER_KEYS[section.name]:
                warnings.append(f"line {line}: ignoring key {key!r} in layer {index} [{section.name}]")
        layers.append(layer)
    if not layers:
        raise ConfigError("network has no layers")

    spec = NetworkSpec(
        layers=tuple(layers),
        input_width=width,
        input_height=height,
        input_channels=channels,
        warnings=tuple(warnings),
    )
    infer_shapes(spec)
    heads = spec.heads
    for head in heads:
        if head.classes != 1:
            warnings.append(f"layer {head.index}: classes={head.classes}; this toolkit targets a single class")
        if head.anchors != heads[0].anchors:
            warnings.append(f"layer {head.index}: anchors differ from the first head's")
    for message in warnings:
        log.warning(message)
    return NetworkSpec(
        layers=spec.layers,
        input_width=width,
        input_height=height,
        input_channels=channels,
        warnings=tuple(warnings),
    )


def load_config(path) -> NetworkSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def reference_config_text() -> str:
    """The bundled 106-layer single-class YOLOv3 description."""
    return resources.files("handsoff.cfg").joinpath(REFERENCE_CONFIG).read_text(encoding="utf-8")


def _fmt_number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def serialize_config(spec: NetworkSpec) -> str:
    """Canonical text form; ``parse_config(serialize_config(s)) == s``."""
    out = [
        "[net]",
        f"width={spec.input_width}",
        f"height={spec.input_height}",
        f"channels={spec.input_channels}",
    ]
    for layer in spec.layers:
        out.append("")
        out.append(f"[{layer.kind}]")
        if isinstance(layer, ConvLayer):
            if layer.batch_normalize:
                out.append("batch_normalize=1")
            out += [
                f"filters={layer.filters}",
                f"size={layer.size}",
                f"stride={layer.stride}",
                f"padding={layer.padding}",
                f"activation={layer.activation}",
            ]
            if layer.slope != DEFAULT_LEAKY_SLOPE:
                out.append(f"slope={layer.slope!r}")
        elif isinstance(layer, ShortcutLayer):
            out += [f"from={layer.source}", f"activation={layer.activation}"]
        elif isinstance(layer, RouteLayer):
            out.append("layers=" + ",".join(str(s) for s in layer.sources))
        elif isinstance(layer, UpsampleLayer):
            out.append(f"stride={layer.factor}")
        elif isinstance(layer, YoloLayer):
            out.append("mask=" + ",".join(str(m) for m in layer.mask))
            out.append("anchors=" + ", ".join(f"{_fmt_number(w)},{_fmt_number(h)}" for w, h in layer.anchors))
            out.append(f"classes={layer.classes}")
            out.append(f"num={len(layer.anchors)}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# shape inference


def infer_shapes(spec: NetworkSpec) -> List[Tuple[int, int, int]]:
    """Output shape (C, H, W) of every layer at the declared input size."""
    shapes: List[Tuple[int, int, int]] = []
    prev = (spec.input_channels, spec.input_height, spec.input_width)
    for layer in spec.layers:
        i = layer.index
        if isinstance(layer, ConvLayer):
            c, h, w = prev
            oh = conv_output_size(h, layer.size, layer.stride, layer.padding)
            ow = conv_output_size(w, layer.size, layer.stride, layer.padding)
            if oh < 1 or ow < 1 or h + 2 * layer.padding < layer.size or w + 2 * layer.padding < layer.size:
                raise ConfigError(f"layer {i}: kernel {layer.size} does not fit {h}x{w} input")
            out = (layer.filters, oh, ow)
        elif isinstance(layer, ShortcutLayer):
            other = shapes[layer.source]
            if other != prev:
                raise ConfigError(
                    f"layer {i}: shortcut from layer {layer.source} has shape {other}, expected {prev}"
                )
            out = prev
        elif isinstance(layer, RouteLayer):
            parts = [shapes[s] for s in layer.sources]
            if any(p[1:] != parts[0][1:] for p in parts):
                raise ConfigError(f"layer {i}: route sources {layer.sources} differ spatially: {parts}")
            out = (sum(p[0] for p in parts), parts[0][1], parts[0][2])
        elif isinstance(layer, UpsampleLayer):
            c, h, w = prev
            out = (c, h * layer.factor, w * layer.factor)
        elif isinstance(layer, YoloLayer):
            if prev[0] != layer.depth:
                raise ConfigError(
                    f"layer {i}: head depth {prev[0]} inconsistent with {len(layer.mask)} masks "
                    f"x (5 + {layer.classes} classes) = {layer.depth}"
                )
            out = prev
        else:  # pragma: no cover
            raise ConfigError(f"layer {i}: unsupported layer type {type(layer).__name__}")
        shapes.append(out)
        prev = out
    return shapes


def conv_input_channels(spec: NetworkSpec) -> Dict[int, int]:
    shapes = infer_shapes(spec)
    result = {}
    for layer in spec.conv_layers():
        result[layer.index] = spec.input_channels if layer.index == 0 else shapes[layer.index - 1][0]
    return result


def layer_parameter_counts(spec: NetworkSpec) -> List[int]:
    """Number of 32-bit reals each layer reads from a weights file."""
    in_ch = conv_input_channels(spec)
    counts = []
    for layer in spec.layers:
        if isinstance(layer, ConvLayer):
            per_filter = 4 if layer.batch_normalize else 1
            counts.append(layer.filters * (per_filter + in_ch[layer.index] * layer.size**2))
        else:
            counts.append(0)
    return counts


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class WeightsHeader:
    major: int = 0
    minor: int = 2
    revision: int = 0
    images_seen: int = 0

    @property
    def wide_counter(self) -> bool:
        return self.major * 10 + self.minor >= 2

    @property
    def size(self) -> int:
        return 12 + (8 if self.wide_counter else 4)

    def pack(self) -> bytes:
        seen = struct.pack("<q" if self.wide_counter else "<i", self.images_seen)
        return struct.pack("<3i", self.major, self.minor, self.revision) + seen


@dataclass(frozen=True)
class ParameterizedNetwork:
    spec: NetworkSpec
    header: WeightsHeader
    params: Dict[int, ConvParams]
    bytes_consumed: int = 0

    @property
    def parameter_count(self) -> int:
        return sum(p.parameter_count for p in self.params.values())


def read_header(buf: memoryview) -> WeightsHeader:
    if len(buf) < 12:
        raise TruncatedWeightsError(None, 12 - len(buf))
    major, minor, revision = struct.unpack_from("<3i", buf, 0)
    wide = major * 10 + minor >= 2
    need = 20 if wide else 16
    if len(buf) < need:
        raise TruncatedWeightsError(None, need - len(buf))
    (seen,) = struct.unpack_from("<q" if wide else "<i", buf, 12)
    return WeightsHeader(major, minor, revision, seen)


def load_weights(spec: NetworkSpec, data: Union[bytes, bytearray, BinaryIO]) -> ParameterizedNetwork:
    """Attach parameters from a darknet weights stream to ``spec``.

    Per convolutional layer, in order: batch-normalized layers carry beta,
    gamma, running mean, running variance; others carry a bias vector. The
    kernel weights (out, in, kh, kw) follow. The stream must be consumed
    exactly.
    """
    if not isinstance(data, (bytes, bytearray, memoryview)):
        data = data.read()
    buf = memoryview(data)
    header = read_header(buf)
    offset = header.size

    counts = layer_parameter_counts(spec)
    expected_total = header.size + 4 * sum(counts)
    in_ch = conv_input_channels(spec)

    def take(n: int, layer_index: int) -> np.ndarray:
        nonlocal offset
        end = offset + 4 * n
        if end > len(buf):
            raise TruncatedWeightsError(layer_index, expected_total - len(buf))
        arr = np.frombuffer(buf[offset:end], dtype="<f4").astype(np.float32)
        offset = end
        return arr

    params: Dict[int, ConvParams] = {}
    for layer in spec.conv_layers():
        n = layer.filters
        bn = None
        if layer.batch_normalize:
            beta = take(n, layer.index)
            gamma = take(n, layer.index)
            mean = take(n, layer.index)
            var = take(n, layer.index)
            bad = np.flatnonzero(var < 0)
            if bad.size:
                raise NegativeVarianceError(layer.index, int(bad[0]), float(var[bad[0]]))
            bn = BatchNorm(gamma, beta, mean, var, DEFAULT_BN_EPSILON)
            bias = np.zeros(n, dtype=np.float32)
        else:
            bias = take(n, layer.index)
        weights = take(n * in_ch[layer.index] * layer.size**2, layer.index)
        params[layer.index] = ConvParams(
            out_channels=n,
            in_channels=in_ch[layer.index],
            kernel_size=layer.size,
            stride=layer.stride,
            padding=layer.padding,
            weights=weights,
            bias=bias,
            batchnorm=bn,
        )
    if offset != len(buf):
        raise TrailingBytesError(len(buf) - offset)
    return ParameterizedNetwork(spec=spec, header=header, params=params, bytes_consumed=offset)


def load_weights_file(spec: NetworkSpec, path) -> ParameterizedNetwork:
    with open(path, "rb") as fh:
        return load_weights(spec, fh.read())


# ---------------------------------------------------------------------------
# inspection


def inspect(net: Union[ParameterizedNetwork, NetworkSpec]) -> str:
    """Per-layer table: index, kind, output shape (HxWxC), parameter count."""
    spec = net.spec if isinstance(net, ParameterizedNetwork) else net
    shapes = infer_shapes(spec)
    counts = layer_parameter_counts(spec)
    if isinstance(net, ParameterizedNetwork):
        loaded = [net.params[i].parameter_count if i in net.params else 0 for i in range(len(spec.layers))]
        if loaded != counts:  # pragma: no cover - load_weights guarantees this
            raise AssertionError("loaded parameter counts disagree with the config")
    buf = io.StringIO()
    buf.write(f"{'layer':>5}  {'kind':<14} {'detail':<22} {'output':>14} {'params':>12}\n")
    for layer, (c, h, w), n in zip(spec.layers, shapes, counts):
        buf.write(f"{layer.index:>5}  {layer.kind:<14} {_detail(layer):<22} {f'{h}x{w}x{c}':>14} {n:>12,}\n")
    total = sum(counts)
    header_size = net.header.size if isinstance(net, ParameterizedNetwork) else WeightsHeader().size
    buf.write(
        f"total: {len(spec.layers)} layers, {len(spec.heads)} heads, {total:,} params, "
        f"{header_size + 4 * total:,} weight bytes\n"
    )
    return buf.getvalue()


def _detail(layer: LayerSpec) -> str:
    if isinstance(layer, ConvLayer):
        bn = " bn" if layer.batch_normalize else ""
        return f"{layer.filters} {layer.size}x{layer.size}/{layer.stride}{bn} {layer.activation}"
    if isinstance(layer, ShortcutLayer):
        return f"from {layer.source}"
    if isinstance(layer, RouteLayer):
        return "layers " + ",".join(map(str, layer.sources))
    if isinstance(layer, UpsampleLayer):
        return f"x{layer.factor}"
    if isinstance(layer, YoloLayer):
        return "mask " + ",".join(map(str, layer.mask)) + f" cls {layer.classes}"
    return ""
