"""Dense (C, H, W) float32 feature maps and the layer primitives built on them.

Every primitive is a pure function: inputs are never written to, and the
arrays held by a :class:`Tensor` are flagged read-only to enforce it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError

DEFAULT_LEAKY_SLOPE = 0.1
DEFAULT_BN_EPSILON = 1e-5


class Tensor:
    """Rank-3 channel-major feature map (batch size is always 1)."""

    __slots__ = ("array",)

    def __init__(self, array, _owned=False):
        arr = np.ascontiguousarray(array, dtype=np.float32)
        if arr.ndim != 3:
            raise ShapeError("tensor must be rank 3 (C, H, W)", expected=3, actual=arr.ndim)
        if min(arr.shape) < 1:
            raise ShapeError("tensor dimensions must be positive", actual=arr.shape)
        if arr.flags.writeable and arr is array and not _owned:
            arr = arr.copy()
        arr.flags.writeable = False
        self.array = arr

    @classmethod
    def from_flat(cls, channels: int, height: int, width: int, data) -> "Tensor":
        flat = np.asarray(data, dtype=np.float32).ravel()
        if flat.size != channels * height * width:
            raise ShapeError(
                "flat data length does not match shape",
                expected=channels * height * width,
                actual=flat.size,
            )
        return cls(flat.reshape(channels, height, width))

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "Tensor":
        return cls(np.zeros((channels, height, width), dtype=np.float32))

    @classmethod
    def _wrap(cls, array) -> "Tensor":
        # caller hands over ownership of a freshly computed array
        return cls(array, _owned=True)

    @property
    def channels(self) -> int:
        return self.array.shape[0]

    @property
    def height(self) -> int:
        return self.array.shape[1]

    @property
    def width(self) -> int:
        return self.array.shape[2]

    @property
    def shape(self) -> tuple:
        return self.array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat channel-major view of the values."""
        return self.array.reshape(-1)

    def __repr__(self):
        return f"Tensor(channels={self.channels}, height={self.height}, width={self.width})"


@dataclass(frozen=True)
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_variance: np.ndarray
    epsilon: float = DEFAULT_BN_EPSILON

    def __post_init__(self):
        for name in ("gamma", "beta", "running_mean", "running_variance"):
            object.__setattr__(self, name, _frozen_f32(getattr(self, name)))
        n = self.gamma.size
        if not (self.beta.size == self.running_mean.size == self.running_variance.size == n):
            raise ShapeError("batchnorm arrays differ in length")
        if np.any(self.running_variance < 0):
            raise ValueError("running variance must be non-negative")

    @property
    def channels(self) -> int:
        return self.gamma.size


@dataclass(frozen=True)
class ConvParams:
    out_channels: int
    in_channels: int
    kernel_size: int
    stride: int
    padding: int
    weights: np.ndarray
    bias: np.ndarray
    batchnorm: Optional[BatchNorm] = None

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen_f32(self.weights))
        object.__setattr__(self, "bias", _frozen_f32(self.bias))
        expected = self.out_channels * self.in_channels * self.kernel_size**2
        if self.weights.size != expected:
            raise ShapeError("conv weights length", expected=expected, actual=self.weights.size)
        if self.bias.size != self.out_channels:
            raise ShapeError("conv bias length", expected=self.out_channels, actual=self.bias.size)
        if self.batchnorm is not None and self.batchnorm.channels != self.out_channels:
            raise ShapeError(
                "batchnorm length", expected=self.out_channels, actual=self.batchnorm.channels
            )
        if self.stride < 1 or self.kernel_size < 1 or self.padding < 0:
            raise ValueError("invalid conv geometry")

    @property
    def weight_matrix(self) -> np.ndarray:
        return self.weights.reshape(self.out_channels, -1)

    @property
    def parameter_count(self) -> int:
        per_channel = 4 if self.batchnorm is not None else 1
        return self.weights.size + per_channel * self.out_channels


def _frozen_f32(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float32).ravel()
    arr.flags.writeable = False
    return arr


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, params: ConvParams, layer_index: Optional[int] = None) -> Tensor:
    """Zero-padded cross-correlation plus bias.

    Batch-norm is not applied here; see :func:`apply_batchnorm` and
    :func:`fold_batchnorm`.
    """
    if x.channels != params.in_channels:
        raise ShapeError(
            "input channel mismatch",
            layer_index=layer_index,
            expected=params.in_channels,
            actual=x.channels,
        )
    k, s, p = params.kernel_size, params.stride, params.padding
    out_h = conv_output_size(x.height, k, s, p)
    out_w = conv_output_size(x.width, k, s, p)
    if out_h < 1 or out_w < 1 or x.height + 2 * p < k or x.width + 2 * p < k:
        raise ShapeError(
            f"kernel {k} stride {s} pad {p} does not fit {x.height}x{x.width} input",
            layer_index=layer_index,
        )

    weights = params.weight_matrix
    if k == 1 and s == 1 and p == 0:
        cols = x.array.reshape(x.channels, -1)
    else:
        padded = np.pad(x.array, ((0, 0), (p, p), (p, p))) if p else x.array
        windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
        windows = windows[:, : (out_h - 1) * s + 1 : s, : (out_w - 1) * s + 1 : s]
        # (C, oh, ow, k, k) -> (C, k, k, oh, ow) so rows line up with the weight layout
        cols = windows.transpose(0, 3, 4, 1, 2).reshape(x.channels * k * k, out_h * out_w)
    out = weights @ cols
    out += params.bias[:, None]
    return Tensor._wrap(out.reshape(params.out_channels, out_h, out_w))


def apply_batchnorm(x: Tensor, bn: BatchNorm) -> Tensor:
    if bn.channels != x.channels:
        raise ShapeError("batchnorm channel mismatch", expected=x.channels, actual=bn.channels)
    scale = bn.gamma / np.sqrt(bn.running_variance + np.float32(bn.epsilon))
    shift = bn.beta - bn.running_mean * scale
    return Tensor._wrap(x.array * scale[:, None, None] + shift[:, None, None])


def fold_batchnorm(params: ConvParams) -> ConvParams:
    """Return equivalent params with batch-norm merged into weights and bias."""
    bn = params.batchnorm
    if bn is None:
        return params
    scale = bn.gamma.astype(np.float64) / np.sqrt(
        bn.running_variance.astype(np.float64) + bn.epsilon
    )
    weights = params.weight_matrix.astype(np.float64) * scale[:, None]
    bias = bn.beta + (params.bias.astype(np.float64) - bn.running_mean) * scale
    return replace(params, weights=weights.ravel(), bias=bias, batchnorm=None)


def leaky_relu(x: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky slope must lie in [0, 1), got {slope}")
    a = x.array
    return Tensor._wrap(np.where(a >= 0, a, a * np.float32(slope)))


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    return Tensor._wrap(np.repeat(np.repeat(x.array, factor, axis=1), factor, axis=2))


def add(a: Tensor, b: Tensor, layer_index: Optional[int] = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("shortcut shape mismatch", layer_index=layer_index, expected=a.shape, actual=b.shape)
    return Tensor._wrap(a.array + b.array)


def concat_channels(parts: Sequence[Tensor], layer_index: Optional[int] = None) -> Tensor:
    if not parts:
        raise ShapeError("nothing to concatenate", layer_index=layer_index)
    if len(parts) == 1:
        return parts[0]
    hw = parts[0].shape[1:]
    for part in parts[1:]:
        if part.shape[1:] != hw:
            raise ShapeError(
                "route spatial mismatch", layer_index=layer_index, expected=hw, actual=part.shape[1:]
            )
    return Tensor._wrap(np.concatenate([p.array for p in parts], axis=0))
