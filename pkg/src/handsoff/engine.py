"""Forward execution of a parsed network, plus input preprocessing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .darknet import (
    ConvLayer,
    ParameterizedNetwork,
    RouteLayer,
    ShortcutLayer,
    UpsampleLayer,
    YoloLayer,
    infer_shapes,
)
from .errors import HandsOffError, ShapeError
from .tensor import (
    Tensor,
    add,
    apply_batchnorm,
    concat_channels,
    conv2d,
    fold_batchnorm,
    leaky_relu,
    upsample_nearest,
)

LETTERBOX_FILL = 0.5


@dataclass(frozen=True)
class PreprocessRecord:
    """What :func:`preprocess` did, so boxes can be mapped back to the source."""

    source_width: int
    source_height: int
    net_width: int
    net_height: int
    letterbox: bool = False
    scale_x: float = 1.0
    scale_y: float = 1.0
    pad_x: float = 0.0
    pad_y: float = 0.0


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an (H, W, C) float array with half-pixel-centre bilinear sampling."""
    in_h, in_w = image.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return image.copy()

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    y0, y1, fy = axis_weights(in_h, out_h)
    x0, x1, fx = axis_weights(in_w, out_w)
    img = image.astype(np.float64)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bottom = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bottom * fy[:, None, None]


def preprocess(
    image: np.ndarray, width: int, height: Optional[int] = None, letterbox: bool = False
) -> Tuple[Tensor, PreprocessRecord]:
    """RGB8 (H, W, 3) raster -> (3, height, width) tensor in [0, 1].

    The default is a direct resize that ignores aspect ratio. With
    ``letterbox`` the image is scaled to fit and centred on a grey canvas.
    """
    height = width if height is None else height
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[0] == 0 or image.shape[1] == 0 or image.shape[2] == 0:
        raise HandsOffError(f"cannot preprocess image of shape {image.shape}")
    src_h, src_w = image.shape[:2]
    scaled = image.astype(np.float64) / 255.0

    if not letterbox:
        resized = bilinear_resize(scaled, height, width)
        record = PreprocessRecord(src_w, src_h, width, height, False, width / src_w, height / src_h)
    else:
        scale = min(width / src_w, height / src_h)
        new_w = max(1, min(width, int(round(src_w * scale))))
        new_h = max(1, min(height, int(round(src_h * scale))))
        pad_x = (width - new_w) // 2
        pad_y = (height - new_h) // 2
        resized = np.full((height, width, image.shape[2]), LETTERBOX_FILL)
        resized[pad_y : pad_y + new_h, pad_x : pad_x + new_w] = bilinear_resize(scaled, new_h, new_w)
        record = PreprocessRecord(
            src_w, src_h, width, height, True, new_w / src_w, new_h / src_h, float(pad_x), float(pad_y)
        )
    return Tensor._wrap(resized.transpose(2, 0, 1).astype(np.float32)), record


@dataclass(frozen=True)
class HeadOutput:
    tensor: Tensor
    layer_index: int
    anchors: Tuple[Tuple[float, float], ...]
    classes: int
    stride_x: float
    stride_y: float

    @property
    def grid(self) -> int:
        return self.tensor.height

    @property
    def grid_width(self) -> int:
        return self.tensor.width

    @property
    def depth(self) -> int:
        return self.tensor.channels

    @property
    def stride(self) -> float:
        return self.stride_x


# Peak number of simultaneously live feature maps during a forward pass of
# the bundled reference graph: at a shortcut in the 13x13 stage, layers 36
# and 61 (read by the routes) and the shortcut source are retained, plus that
# layer's input and output.
REFERENCE_PEAK_LIVE = 5


class Network:
    """Executable graph over a :class:`ParameterizedNetwork`.

    Only outputs that a later shortcut/route reads are kept past the next
    layer; ``peak_live`` records the high-water mark of the last forward.

    Parameters are shared read-only, so several ``Network`` instances built
    from the same loaded weights may run concurrently; a single instance runs
    one forward pass at a time.
    """

    def __init__(self, net: ParameterizedNetwork, fold_bn: bool = True):
        self.net = net
        self.spec = net.spec
        self.fold_bn = fold_bn
        self.params = {i: fold_batchnorm(p) for i, p in net.params.items()} if fold_bn else dict(net.params)
        self.shapes = infer_shapes(self.spec)
        self.last_use = self._last_uses()
        self.peak_live = 0

    def clone(self) -> "Network":
        twin = object.__new__(Network)
        twin.__dict__.update(self.__dict__)
        twin.peak_live = 0
        return twin

    def _last_uses(self) -> Dict[int, int]:
        """For each layer, the last later layer that reads its output by reference."""
        last: Dict[int, int] = {}
        for layer in self.spec.layers:
            refs: Tuple[int, ...] = ()
            if isinstance(layer, ShortcutLayer):
                refs = (layer.source,)
            elif isinstance(layer, RouteLayer):
                refs = layer.sources
            for r in refs:
                last[r] = max(last.get(r, -1), layer.index)
        return last

    @property
    def input_size(self) -> Tuple[int, int]:
        return self.spec.input_width, self.spec.input_height

    def forward(self, x: Tensor) -> List[HeadOutput]:
        """Run every layer; return head inputs in network order (coarse to fine)."""
        expected = (self.spec.input_channels, self.spec.input_height, self.spec.input_width)
        if x.shape != expected:
            raise ShapeError("network input", expected=expected, actual=x.shape)
        retained: Dict[int, Tensor] = {}
        heads: List[HeadOutput] = []
        prev = x
        peak = 0
        for layer in self.spec.layers:
            i = layer.index
            if isinstance(layer, ConvLayer):
                params = self.params[i]
                out = conv2d(prev, params, layer_index=i)
                if params.batchnorm is not None:
                    out = apply_batchnorm(out, params.batchnorm)
                if layer.activation == "leaky":
                    out = leaky_relu(out, layer.slope)
            elif isinstance(layer, ShortcutLayer):
                out = add(prev, retained[layer.source], layer_index=i)
                if layer.activation == "leaky":
                    out = leaky_relu(out)
            elif isinstance(layer, RouteLayer):
                out = concat_channels([retained[s] for s in layer.sources], layer_index=i)
            elif isinstance(layer, UpsampleLayer):
                out = upsample_nearest(prev, layer.factor)
            elif isinstance(layer, YoloLayer):
                out = prev
                w, h = self.input_size
                heads.append(
                    HeadOutput(
                        tensor=out,
                        layer_index=i,
                        anchors=layer.head_anchors,
                        classes=layer.classes,
                        stride_x=w / out.width,
                        stride_y=h / out.height,
                    )
                )
            else:  # pragma: no cover
                raise ShapeError(f"unsupported layer {type(layer).__name__}", layer_index=i)
            if out.shape != self.shapes[i]:
                raise ShapeError("runtime shape disagrees with inference", i, self.shapes[i], out.shape)

            # live while this layer ran: retained maps, its direct input, its output
            peak = max(peak, len(set(retained) | {i - 1}) + 1)
            # free tensors whose last reader was this layer, keep ones read later
            for src in [s for s in retained if self.last_use[s] <= i]:
                del retained[src]
            if self.last_use.get(i, -1) > i:
                retained[i] = out
            prev = out
        self.peak_live = peak
        return heads


def forward(net: ParameterizedNetwork, x: Tensor, fold_bn: bool = True) -> List[HeadOutput]:
    return Network(net, fold_bn=fold_bn).forward(x)
