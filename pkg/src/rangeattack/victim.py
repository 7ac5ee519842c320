"""The victim regression network: preprocessing + layer stack, trainer, model files.

A :class:`VictimNetwork` maps a raw ``(C, H, W)`` image with pixel values in
``[0, 255]`` to a single real prediction. Preprocessing optionally reverses the
channel order (RGB to BGR) and subtracts one scalar grand mean from every
pixel, so the layer stack sees values in ``[-255, 255]``.

Networks are immutable: parameter arrays are read-only, and :func:`train`
returns a new network.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import LabeledDataset
from .tensor import (
    Affine,
    Conv2d,
    Layer,
    ReLU,
    ShapeError,
    layer_backward,
    layer_forward,
    layer_output_shape,
)

MODEL_FORMAT = "rangeattack-victim"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    """A model file could not be parsed."""


@dataclass(frozen=True)
class PreprocessSpec:
    grand_mean: float = 0.0
    swap_channels: bool = True

    def __post_init__(self):
        gm = float(self.grand_mean)
        if not 0.0 <= gm <= 255.0:
            raise ValueError(f"grand_mean must lie in [0, 255], got {gm}")
        object.__setattr__(self, "grand_mean", gm)
        object.__setattr__(self, "swap_channels", bool(self.swap_channels))


@dataclass(frozen=True, eq=False)
class VictimNetwork:
    input_shape: tuple[int, int, int]
    preprocess: PreprocessSpec
    layers: tuple[Layer, ...]

    def __post_init__(self):
        shape = tuple(int(s) for s in self.input_shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ShapeError(f"input_shape must be (C, H, W) with positive entries, got {self.input_shape}")
        layers = tuple(self.layers)
        if not layers or not isinstance(layers[-1], Affine) or layers[-1].out_features != 1:
            raise ShapeError("the layer stack must end in an affine layer with one output")
        s: tuple[int, ...] = shape
        for i, layer in enumerate(layers):
            try:
                s = layer_output_shape(layer, s)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
        object.__setattr__(self, "input_shape", shape)
        object.__setattr__(self, "layers", layers)

    @property
    def n_inputs(self) -> int:
        return int(np.prod(self.input_shape))


def _check_input(net: VictimNetwork, x, batched: bool) -> np.ndarray:
    x = np.asarray(x)
    got = x.shape[1:] if batched else x.shape
    if tuple(got) != net.input_shape:
        raise ShapeError(f"input shape {tuple(got)} does not match network input shape {net.input_shape}")
    return x


def preprocess(net: VictimNetwork, x, *, batched: bool = False) -> np.ndarray:
    x = _check_input(net, x, batched).astype(np.float64)
    if net.preprocess.swap_channels:
        x = x[:, ::-1] if batched else x[::-1]
    return x - net.preprocess.grand_mean


def _run(layers: Sequence[Layer], z: np.ndarray, batched: bool):
    inputs = []
    for layer in layers:
        inputs.append(z)
        z = layer_forward(layer, z, batched=batched)
    return z, inputs


def forward(net: VictimNetwork, image) -> float:
    """Prediction f(X) for one image. Real-valued pixels are accepted too."""
    out, _ = _run(net.layers, preprocess(net, image), False)
    return float(out[0])


def predict_batch(net: VictimNetwork, images) -> np.ndarray:
    out, _ = _run(net.layers, preprocess(net, images, batched=True), True)
    return out[:, 0]


def value_and_gradient(net: VictimNetwork, x) -> tuple[float, np.ndarray]:
    """f(x) and its gradient with respect to the raw pixel values of ``x``."""
    out, inputs = _run(net.layers, preprocess(net, x), False)
    g = np.ones(1)
    for layer, z in zip(reversed(net.layers), reversed(inputs)):
        g = layer_backward(layer, z, g)[0]
    g = g.reshape(net.input_shape)
    # mean shift has unit derivative; channel reversal is its own inverse
    if net.preprocess.swap_channels:
        g = g[::-1]
    return float(out[0]), np.ascontiguousarray(g)


def input_gradient(net: VictimNetwork, x) -> np.ndarray:
    return value_and_gradient(net, x)[1]


# --------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    batch_size: int = 64
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not self.epsilon_hat > 0:
            raise ValueError(f"epsilon_hat must be positive, got {self.epsilon_hat}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


def adam_step(param, grad, m, v, t: int, cfg: TrainConfig):
    """One Adam update; returns new ``(param, m, v)`` without touching the inputs."""
    if t < 1:
        raise ValueError(f"Adam step counter starts at 1, got {t}")
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    param = param - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon_hat)
    return param, m, v


def xavier_init(fan_in: int, fan_out: int, rng: np.random.Generator, shape=None) -> np.ndarray:
    """Glorot-uniform samples on [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].

    Returns a ``(fan_out, fan_in)`` matrix unless ``shape`` is given.
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape if shape is not None else (fan_out, fan_in))


def default_victim(
    input_shape=(3, 32, 32), grand_mean: float = 0.0, swap_channels: bool = True, seed: int = 0
) -> VictimNetwork:
    """conv(C->8, 3x3, s1, p1) - relu - conv(8->8, 3x3, s2, p1) - relu - affine(->32) - relu - affine(->1).

    Weights are Xavier-uniform, biases zero.
    """
    c, h, w = input_shape
    rng = np.random.default_rng(seed)

    def conv(in_c, out_c, stride):
        k = xavier_init(in_c * 9, out_c * 9, rng, shape=(out_c, in_c, 3, 3))
        return Conv2d(k, np.zeros(out_c), stride=stride, padding=1)

    conv1 = conv(c, 8, 1)
    conv2 = conv(8, 8, 2)
    flat = int(np.prod(conv2.output_shape(conv1.output_shape((c, h, w)))))
    layers = (
        conv1,
        ReLU(),
        conv2,
        ReLU(),
        Affine(xavier_init(flat, 32, rng), np.zeros(32)),
        ReLU(),
        Affine(xavier_init(32, 1, rng), np.zeros(1)),
    )
    return VictimNetwork((c, h, w), PreprocessSpec(grand_mean, swap_channels), layers)


def _params(layers) -> list[np.ndarray]:
    out = []
    for layer in layers:
        if isinstance(layer, Affine):
            out += [layer.weight.copy(), layer.bias.copy()]
        elif isinstance(layer, Conv2d):
            out += [layer.kernel.copy(), layer.bias.copy()]
    return out


def _with_params(layers, params) -> tuple[Layer, ...]:
    it = iter(params)
    rebuilt = []
    for layer in layers:
        if isinstance(layer, Affine):
            rebuilt.append(Affine(next(it), next(it)))
        elif isinstance(layer, Conv2d):
            rebuilt.append(Conv2d(next(it), next(it), layer.stride, layer.padding))
        else:
            rebuilt.append(layer)
    return tuple(rebuilt)


def _as_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, LabeledDataset):
        return dataset.images, dataset.labels
    pairs = list(dataset)
    if not pairs:
        return np.zeros((0,)), np.zeros((0,))
    return np.stack([np.asarray(img) for img, _ in pairs]), np.array([float(y) for _, y in pairs])


def train(net: VictimNetwork, dataset, cfg: TrainConfig, log=None):
    """Fit ``net`` to (image, label) pairs by mini-batch Adam on squared error.

    Returns ``(trained_net, history)`` where ``history[e]`` is the mean squared
    error over epoch ``e``, accumulated batch by batch before each update.
    Shuffling is driven by ``cfg.seed`` so runs are bit-reproducible.
    """
    images, labels = _as_arrays(dataset)
    if len(labels) == 0:
        raise ValueError("cannot train on an empty dataset")
    if not np.all(np.isfinite(labels)):
        raise ValueError("labels must be finite")
    _check_input(net, images, True)

    rng = np.random.default_rng(cfg.seed)
    params = _params(net.layers)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    t = 0
    history: list[float] = []
    n = len(labels)
    layers = net.layers

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sq_err = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = preprocess(net, images[idx], batched=True)
            out, inputs = _run(layers, x, True)
            err = out[:, 0] - labels[idx]
            sq_err += float(err @ err)

            g = (2.0 / len(idx)) * err[:, None]
            grads: list[np.ndarray] = []
            for layer, z in zip(reversed(layers), reversed(inputs)):
                g, pg = layer_backward(layer, z, g, batched=True)
                grads = list(pg) + grads

            t += 1
            for i, (p, gr) in enumerate(zip(params, grads)):
                params[i], m[i], v[i] = adam_step(p, gr, m[i], v[i], t, cfg)
            layers = _with_params(layers, params)
        history.append(sq_err / n)
        if log is not None:
            log(epoch, history[-1])

    return VictimNetwork(net.input_shape, net.preprocess, layers), history


# ------------------------------------------------------------- model files


def _layer_record(layer: Layer) -> dict:
    if isinstance(layer, Affine):
        return {
            "kind": "affine",
            "shape": list(layer.weight.shape),
            "weight": layer.weight.ravel().tolist(),
            "bias": layer.bias.tolist(),
        }
    if isinstance(layer, Conv2d):
        return {
            "kind": "conv2d",
            "shape": list(layer.kernel.shape),
            "stride": layer.stride,
            "padding": layer.padding,
            "kernel": layer.kernel.ravel().tolist(),
            "bias": layer.bias.tolist(),
        }
    return {"kind": "relu"}


def dumps_model(net: VictimNetwork) -> str:
    # json writes floats with repr(), which round-trips float64 exactly
    head = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "input_shape": list(net.input_shape),
        "preprocess": {
            "grand_mean": net.preprocess.grand_mean,
            "swap_channels": net.preprocess.swap_channels,
        },
    }
    lines = ["{"]
    for key, value in head.items():
        lines.append(f"  {json.dumps(key)}: {json.dumps(value, allow_nan=False)},")
    lines.append('  "layers": [')
    records = [json.dumps(_layer_record(layer), allow_nan=False) for layer in net.layers]
    lines.append(",\n".join("    " + r for r in records))
    lines.append("  ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_model(net: VictimNetwork, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_model(net))
    tmp.replace(path)


def _field(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise ModelFormatError(f"{where}: missing field {key!r}")
    return obj[key]


def _int_list(value, where: str) -> list[int]:
    if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise ModelFormatError(f"{where}: expected a list of integers")
    return value


def _array(value, shape, where: str) -> np.ndarray:
    if not isinstance(value, list):
        raise ModelFormatError(f"{where}: expected a list of numbers")
    need = int(np.prod(shape))
    if len(value) != need:
        raise ShapeError(f"{where}: expected {need} values for shape {list(shape)}, got {len(value)}")
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ModelFormatError(f"{where}: non-numeric entry") from None
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ModelFormatError(f"{where}: entries must be finite numbers")
    return arr.reshape(shape)


def loads_model(text: str, source: str = "<model>") -> VictimNetwork:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from None
    if _field(doc, "format", source) != MODEL_FORMAT:
        raise ModelFormatError(f"{source}: field 'format' must be {MODEL_FORMAT!r}")
    version = _field(doc, "version", source)
    if version != MODEL_VERSION:
        raise ModelFormatError(f"{source}: unsupported version {version!r}")
    input_shape = _int_list(_field(doc, "input_shape", source), f"{source}: input_shape")
    pre = _field(doc, "preprocess", source)
    try:
        spec = PreprocessSpec(
            float(_field(pre, "grand_mean", f"{source}: preprocess")),
            _field(pre, "swap_channels", f"{source}: preprocess"),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"{source}: preprocess: {e}") from None

    raw_layers = _field(doc, "layers", source)
    if not isinstance(raw_layers, list):
        raise ModelFormatError(f"{source}: field 'layers' must be a list")
    layers: list[Layer] = []
    for i, rec in enumerate(raw_layers):
        where = f"{source}: layers[{i}]"
        kind = _field(rec, "kind", where)
        if kind == "relu":
            layers.append(ReLU())
        elif kind == "affine":
            shape = _int_list(_field(rec, "shape", where), f"{where}.shape")
            if len(shape) != 2:
                raise ShapeError(f"{where}.shape: affine shape must be [out, in], got {shape}")
            w = _array(_field(rec, "weight", where), shape, f"{where}.weight")
            b = _array(_field(rec, "bias", where), (shape[0],), f"{where}.bias")
            layers.append(Affine(w, b))
        elif kind == "conv2d":
            shape = _int_list(_field(rec, "shape", where), f"{where}.shape")
            if len(shape) != 4:
                raise ShapeError(f"{where}.shape: conv2d shape must be [outC, inC, kH, kW], got {shape}")
            k = _array(_field(rec, "kernel", where), shape, f"{where}.kernel")
            b = _array(_field(rec, "bias", where), (shape[0],), f"{where}.bias")
            stride, padding = _field(rec, "stride", where), _field(rec, "padding", where)
            if not isinstance(stride, int) or not isinstance(padding, int):
                raise ModelFormatError(f"{where}: stride and padding must be integers")
            try:
                layers.append(Conv2d(k, b, stride, padding))
            except ShapeError:
                raise
            except ValueError as e:
                raise ModelFormatError(f"{where}: {e}") from None
        else:
            raise ModelFormatError(f"{where}.kind: unknown layer kind {kind!r}")
    try:
        return VictimNetwork(tuple(input_shape), spec, tuple(layers))
    except ShapeError as e:
        raise ShapeError(f"{source}: {e}") from None


def load_model(path) -> VictimNetwork:
    path = Path(path)
    return loads_model(path.read_text(), str(path))
