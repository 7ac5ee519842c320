"""Dense float64 kernels for the three layer kinds a victim network is built from.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every kernel
takes a single sample by default, or a batch with one extra leading axis when
called with ``batched=True``; the attack uses the former, the trainer the latter.

Convolution is cross-correlation with zero padding, no kernel flip.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when array shapes do not compose."""


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Affine:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    kind = "affine"

    def __post_init__(self):
        w = _frozen(self.weight, 2, "affine weight")
        b = _frozen(self.bias, 1, "affine bias")
        if b.shape[0] != w.shape[0]:
            raise ShapeError(f"affine bias shape {b.shape} does not match weight shape {w.shape}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True, eq=False)
class Conv2d:
    kernel: np.ndarray  # (outC, inC, kH, kW)
    bias: np.ndarray  # (outC,)
    stride: int = 1
    padding: int = 0

    kind = "conv2d"

    def __post_init__(self):
        k = _frozen(self.kernel, 4, "conv2d kernel")
        b = _frozen(self.bias, 1, "conv2d bias")
        if b.shape[0] != k.shape[0]:
            raise ShapeError(f"conv2d bias shape {b.shape} does not match kernel shape {k.shape}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ValueError(f"conv2d stride must be an integer >= 1, got {self.stride}")
        if int(self.padding) != self.padding or self.padding < 0:
            raise ValueError(f"conv2d padding must be an integer >= 0, got {self.padding}")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "stride", int(self.stride))
        object.__setattr__(self, "padding", int(self.padding))

    def output_shape(self, in_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        c, h, w = in_shape
        out_c, in_c, kh, kw = self.kernel.shape
        if c != in_c:
            raise ShapeError(f"conv2d expects {in_c} input channels, got input shape {in_shape}")
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"conv2d with kernel {kh}x{kw}, stride {self.stride}, padding {self.padding} "
                f"gives non-positive output {oh}x{ow} for input shape {in_shape}"
            )
        return out_c, oh, ow


@dataclass(frozen=True)
class ReLU:
    kind = "relu"


Layer = Union[Affine, Conv2d, ReLU]


def _as_batch(x: np.ndarray, batched: bool) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if batched:
        if x.ndim < 1:
            raise ShapeError("batched input needs a leading batch axis")
        return x
    return x[None]


def _flat_batch(x: np.ndarray, n_in: int, batched: bool, what: str) -> np.ndarray:
    xb = _as_batch(x, batched)
    if xb[0].size != n_in:
        raise ShapeError(f"{what}: input shape {np.shape(x)} does not match {n_in} inputs")
    return xb.reshape(xb.shape[0], n_in)


def affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, *, batched: bool = False) -> np.ndarray:
    """y = w @ x + b. Multi-dimensional inputs are flattened per sample."""
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if w.ndim != 2 or b.shape != (w.shape[0],):
        raise ShapeError(f"affine bias shape {b.shape} does not match weight shape {w.shape}")
    flat = _flat_batch(x, w.shape[1], batched, f"affine with weight shape {w.shape}")
    y = flat @ w.T + b
    return y if batched else y[0]


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, C, H', W', kH, kW) view into the padded input
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d_forward(x: np.ndarray, layer: Conv2d, *, batched: bool = False) -> np.ndarray:
    xb = _as_batch(x, batched)
    if xb.ndim != 4:
        raise ShapeError(f"conv2d expects a (C, H, W) input, got shape {np.shape(x)}")
    _, oh, ow = layer.output_shape(xb.shape[1:])
    _, _, kh, kw = layer.kernel.shape
    p = layer.padding
    xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p))) if p else xb
    cols = _windows(xp, kh, kw, layer.stride)[:, :, :oh, :ow]
    y = np.einsum("nchwij,ocij->nohw", cols, layer.kernel, optimize=True)
    y += layer.bias[None, :, None, None]
    return y if batched else y[0]


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def layer_forward(layer: Layer, x: np.ndarray, *, batched: bool = False) -> np.ndarray:
    if isinstance(layer, Affine):
        return affine_forward(x, layer.weight, layer.bias, batched=batched)
    if isinstance(layer, Conv2d):
        return conv2d_forward(x, layer, batched=batched)
    if isinstance(layer, ReLU):
        return relu_forward(x)
    raise TypeError(f"unknown layer type {type(layer).__name__}")


def layer_output_shape(layer: Layer, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(layer, Affine):
        if int(np.prod(in_shape)) != layer.in_features:
            raise ShapeError(f"affine expects {layer.in_features} inputs, got shape {in_shape}")
        return (layer.out_features,)
    if isinstance(layer, Conv2d):
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d expects a (C, H, W) input, got shape {in_shape}")
        return layer.output_shape(in_shape)
    return tuple(in_shape)


def layer_backward(layer: Layer, x: np.ndarray, upstream: np.ndarray, *, batched: bool = False):
    """Return ``(grad_x, param_grads)`` for one layer evaluated at ``x``.

    ``param_grads`` is a tuple matching the layer's parameters
    (weight/kernel, bias), summed over the batch, or ``()`` for ReLU.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)

    if isinstance(layer, ReLU):
        if upstream.shape != x.shape:
            raise ShapeError(f"relu upstream shape {upstream.shape} does not match input shape {x.shape}")
        return np.where(x > 0, upstream, 0.0), ()

    if isinstance(layer, Affine):
        xf = _flat_batch(x, layer.in_features, batched, f"affine with weight shape {layer.weight.shape}")
        expected = (xf.shape[0], layer.out_features) if batched else (layer.out_features,)
        if upstream.shape != expected:
            raise ShapeError(f"affine upstream shape {upstream.shape} does not match output shape {expected}")
        up = upstream.reshape(xf.shape[0], layer.out_features)
        gx = (up @ layer.weight).reshape(x.shape)
        return gx, (up.T @ xf, up.sum(axis=0))

    if isinstance(layer, Conv2d):
        xb = _as_batch(x, batched)
        if xb.ndim != 4:
            raise ShapeError(f"conv2d expects a (C, H, W) input, got shape {x.shape}")
        out_shape = layer.output_shape(xb.shape[1:])
        up = _as_batch(upstream, batched)
        if up.shape != (xb.shape[0],) + out_shape:
            raise ShapeError(
                f"conv2d upstream shape {upstream.shape} does not match output shape {out_shape}"
            )
        _, oh, ow = out_shape
        _, _, kh, kw = layer.kernel.shape
        p, s = layer.padding, layer.stride
        xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p))) if p else xb
        cols = _windows(xp, kh, kw, s)[:, :, :oh, :ow]
        gk = np.einsum("nohw,nchwij->ocij", up, cols, optimize=True)
        gb = up.sum(axis=(0, 2, 3))
        dcols = np.einsum("nohw,ocij->ncijhw", up, layer.kernel, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + s * (oh - 1) + 1 : s, j : j + s * (ow - 1) + 1 : s] += dcols[:, :, i, j]
        gx = gxp[:, :, p : p + xb.shape[2], p : p + xb.shape[3]] if p else gxp
        return (gx if batched else gx[0]), (gk, gb)

    raise TypeError(f"unknown layer type {type(layer).__name__}")


def layer_vjp(layer: Layer, x: np.ndarray, upstream: np.ndarray, *, batched: bool = False) -> np.ndarray:
    """Vector-Jacobian product J(x)^T @ upstream with respect to the layer input.

    The ReLU subgradient at exactly zero is taken to be 0.
    """
    return layer_backward(layer, x, upstream, batched=batched)[0]
