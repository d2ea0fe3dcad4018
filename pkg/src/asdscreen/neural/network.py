"""Network assembly: shape validation, seeded init, forward and backward."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import NetShapeError, ValidationError
from .layers import (
    Conv,
    DenseBlock,
    FullyConnected,
    GlobalAvgPool,
    LayerSpec,
    MaxPool,
    ReLU,
    SigmoidHead,
    Transition,
    _conv2d_backward,
    _conv2d_forward_cached,
    _dense_block_backward,
    _dense_block_forward_cached,
    _fc_backward,
    _fc_forward_cached,
    _global_avg_pool_backward,
    _global_avg_pool_forward_cached,
    _maxpool_backward,
    _maxpool_forward_cached,
    conv_output_dim,
)

_SIGMOID_CLAMP = 36.0


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -_SIGMOID_CLAMP, _SIGMOID_CLAMP)))


def bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy, computed from logits for stability."""
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


@dataclass(frozen=True)
class CallbackConfig:
    """Plateau-driven learning-rate decay plus best-weight checkpointing.

    When validation accuracy fails to improve for ``patience`` consecutive
    epochs the learning rate is multiplied by ``lr_decay_factor`` (floored
    at ``min_lr``); parameters are checkpointed whenever validation accuracy
    strictly improves.
    """

    lr_decay_factor: float = 0.5
    patience: int = 3
    min_lr: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ValidationError("lr_decay_factor must lie strictly in (0, 1)")
        if self.patience < 1:
            raise ValidationError("patience must be a positive integer")
        if self.min_lr <= 0:
            raise ValidationError("min_lr must be positive")


@dataclass(frozen=True)
class NetConfig:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]  # (h, w, c)
    init_seed: int = 0
    batch_size: int = 32
    epochs: int = 10
    initial_lr: float = 0.05
    callback: CallbackConfig = field(default_factory=CallbackConfig)
    dtype: str = "float64"  # float32 roughly halves training time

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        if self.dtype not in ("float64", "float32"):
            raise ValidationError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be positive")
        if self.initial_lr < 0:
            raise ValidationError("initial_lr must be non-negative")
        if len(self.layers) < 2 or not (
            isinstance(self.layers[-2], FullyConnected)
            and self.layers[-2].out == 1
            and isinstance(self.layers[-1], SigmoidHead)
        ):
            raise ValidationError(
                "layer stack must end with FullyConnected(1) + SigmoidHead"
            )
        infer_shapes(self.layers, self.input_shape)  # reject bad chains at build


def default_layers() -> tuple[LayerSpec, ...]:
    """Stem conv, two dense blocks around a compressing transition, then
    global pooling into the sigmoid head."""
    return (
        Conv(out_channels=8, kernel=3, stride=1, padding=1),
        DenseBlock(layers=4, growth_rate=4),
        Transition(compression=0.5),
        DenseBlock(layers=4, growth_rate=4),
        GlobalAvgPool(),
        FullyConnected(out=1),
        SigmoidHead(),
    )


def infer_shapes(
    layers: tuple[LayerSpec, ...], input_shape: tuple[int, int, int]
) -> list[tuple]:
    """Per-layer output shapes (sample dimension excluded); raises
    NetShapeError naming the first incompatible layer."""
    shapes = []
    shape: tuple = tuple(input_shape)
    if len(shape) != 3 or min(shape) < 1:
        raise NetShapeError(f"input shape {shape} is not a valid (h, w, c)")
    for index, layer in enumerate(layers):
        try:
            shape = _apply_shape(layer, shape)
        except NetShapeError as exc:
            raise NetShapeError(str(exc), layer_index=index) from None
        shapes.append(shape)
    return shapes


def _need_spatial(layer, shape) -> tuple[int, int, int]:
    if len(shape) != 3:
        raise NetShapeError(
            f"{type(layer).__name__} needs (h, w, c) input, got {shape}"
        )
    return shape


def _apply_shape(layer: LayerSpec, shape: tuple) -> tuple:
    if isinstance(layer, Conv):
        h, w, _ = _need_spatial(layer, shape)
        if layer.kernel < 1 or layer.stride < 1 or layer.padding < 0:
            raise NetShapeError(f"bad conv geometry {layer}")
        oh = conv_output_dim(h, layer.kernel, layer.stride, layer.padding)
        ow = conv_output_dim(w, layer.kernel, layer.stride, layer.padding)
        if oh < 1 or ow < 1:
            raise NetShapeError(f"conv output {oh}x{ow} collapses for input {h}x{w}")
        return (oh, ow, layer.out_channels)
    if isinstance(layer, ReLU):
        return shape
    if isinstance(layer, MaxPool):
        h, w, c = _need_spatial(layer, shape)
        oh = conv_output_dim(h, layer.kernel, layer.stride, 0)
        ow = conv_output_dim(w, layer.kernel, layer.stride, 0)
        if oh < 1 or ow < 1:
            raise NetShapeError(f"pool output {oh}x{ow} collapses for input {h}x{w}")
        return (oh, ow, c)
    if isinstance(layer, DenseBlock):
        h, w, c = _need_spatial(layer, shape)
        if layer.layers < 0 or layer.growth_rate < 1:
            raise NetShapeError(f"bad dense block geometry {layer}")
        return (h, w, c + layer.layers * layer.growth_rate)
    if isinstance(layer, Transition):
        h, w, c = _need_spatial(layer, shape)
        if not 0.0 < layer.compression <= 1.0:
            raise NetShapeError(f"compression {layer.compression} outside (0, 1]")
        out_c = math.floor(layer.compression * c)
        if out_c < 1:
            raise NetShapeError(f"transition compresses {c} channels to zero")
        return (h, w, out_c)
    if isinstance(layer, GlobalAvgPool):
        _, _, c = _need_spatial(layer, shape)
        return (c,)
    if isinstance(layer, FullyConnected):
        if len(shape) != 1:
            raise NetShapeError(
                f"FullyConnected needs a flat (d,) input, got {shape}; "
                f"precede it with GlobalAvgPool"
            )
        if layer.out < 1:
            raise NetShapeError("FullyConnected output size must be positive")
        return (layer.out,)
    if isinstance(layer, SigmoidHead):
        if shape != (1,):
            raise NetShapeError(f"SigmoidHead needs a (1,) input, got {shape}")
        return shape
    raise NetShapeError(f"unknown layer spec {layer!r}")


class Network:
    """Parameter container with exact forward/backward passes.

    ``params`` is a flat list of arrays in declaration order (conv and
    dense-block kernels/biases, transition kernels/biases, FC weights);
    ``param_names`` parallels it.  Weights are drawn uniformly at
    +-sqrt(6/fan_in) from the seeded generator, biases start at zero.
    """

    def __init__(self, config: NetConfig):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.shapes = infer_shapes(config.layers, config.input_shape)
        rng = np.random.default_rng(config.init_seed)
        self.params: list[np.ndarray] = []
        self.param_names: list[str] = []
        shape: tuple = tuple(config.input_shape)
        for index, layer in enumerate(config.layers):
            if isinstance(layer, Conv):
                self._add_conv(
                    f"conv{index}", rng, layer.kernel, shape[2], layer.out_channels
                )
            elif isinstance(layer, DenseBlock):
                c = shape[2]
                for sub in range(layer.layers):
                    self._add_conv(
                        f"dense{index}.{sub}", rng, 3, c + sub * layer.growth_rate,
                        layer.growth_rate,
                    )
            elif isinstance(layer, Transition):
                out_c = math.floor(layer.compression * shape[2])
                self._add_conv(f"transition{index}", rng, 1, shape[2], out_c)
            elif isinstance(layer, FullyConnected):
                fan_in = shape[0]
                limit = math.sqrt(6.0 / fan_in)
                self.params.append(
                    rng.uniform(-limit, limit, size=(fan_in, layer.out)).astype(self.dtype)
                )
                self.param_names.append(f"fc{index}.W")
                self.params.append(np.zeros(layer.out, dtype=self.dtype))
                self.param_names.append(f"fc{index}.b")
            shape = self.shapes[index]

    def _add_conv(self, name: str, rng, kernel: int, c_in: int, c_out: int):
        fan_in = kernel * kernel * c_in
        limit = math.sqrt(6.0 / fan_in)
        self.params.append(
            rng.uniform(-limit, limit, size=(kernel, kernel, c_in, c_out)).astype(self.dtype)
        )
        self.param_names.append(f"{name}.W")
        self.params.append(np.zeros(c_out, dtype=self.dtype))
        self.param_names.append(f"{name}.b")

    # -- forward -----------------------------------------------------------

    def _walk_forward(self, x: np.ndarray):
        """Returns (logits, caches); caches hold whatever backward needs."""
        if x.ndim != 4 or x.shape[1:] != tuple(self.config.input_shape):
            raise NetShapeError(
                f"input batch shape {x.shape} does not match configured "
                f"input {self.config.input_shape}"
            )
        act = x
        caches = []
        cursor = 0
        for index, layer in enumerate(self.config.layers):
            try:
                if isinstance(layer, Conv):
                    kernels, bias = self.params[cursor], self.params[cursor + 1]
                    cursor += 2
                    act, cache = _conv2d_forward_cached(
                        act, kernels, bias, layer.stride, layer.padding
                    )
                    caches.append(cache)
                elif isinstance(layer, ReLU):
                    caches.append(act)
                    act = np.maximum(act, 0.0)
                elif isinstance(layer, MaxPool):
                    act, cache = _maxpool_forward_cached(act, layer.kernel, layer.stride)
                    caches.append(cache)
                elif isinstance(layer, DenseBlock):
                    layer_params = [
                        (self.params[cursor + 2 * s], self.params[cursor + 2 * s + 1])
                        for s in range(layer.layers)
                    ]
                    cursor += 2 * layer.layers
                    x_channels = act.shape[3]
                    act, cache = _dense_block_forward_cached(act, layer_params)
                    caches.append((x_channels, layer_params, cache))
                elif isinstance(layer, Transition):
                    kernels, bias = self.params[cursor], self.params[cursor + 1]
                    cursor += 2
                    act, cache = _conv2d_forward_cached(act, kernels, bias, 1, 0)
                    caches.append(cache)
                elif isinstance(layer, GlobalAvgPool):
                    act, cache = _global_avg_pool_forward_cached(act)
                    caches.append(cache)
                elif isinstance(layer, FullyConnected):
                    weights, bias = self.params[cursor], self.params[cursor + 1]
                    cursor += 2
                    act, cache = _fc_forward_cached(act, weights, bias)
                    caches.append(cache)
                elif isinstance(layer, SigmoidHead):
                    caches.append(None)  # applied by the caller
            except NetShapeError as exc:
                raise NetShapeError(str(exc), layer_index=index) from None
        return act[:, 0], caches

    def forward_logits(self, x: np.ndarray) -> np.ndarray:
        logits, _ = self._walk_forward(np.asarray(x, dtype=self.dtype))
        return logits

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Per-sample ASD probabilities, strictly inside (0, 1)."""
        return _sigmoid(self.forward_logits(x).astype(np.float64))

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        return bce_from_logits(
            self.forward_logits(x).astype(np.float64), np.asarray(y, dtype=np.float64)
        )

    # -- backward ----------------------------------------------------------

    def backward(self, x: np.ndarray, y: np.ndarray):
        """Mean-BCE loss and gradients aligned with ``params``.

        The logits of the forward pass are left in ``last_logits_`` so the
        training loop can derive batch metrics without a second pass.
        """
        x = np.asarray(x, dtype=self.dtype)
        y = np.asarray(y, dtype=self.dtype)
        logits, caches = self._walk_forward(x)
        self.last_logits_ = logits
        loss = bce_from_logits(logits.astype(np.float64), y.astype(np.float64))
        grads: list[np.ndarray | None] = [None] * len(self.params)

        # d(mean BCE)/dz through the sigmoid head
        delta = ((_sigmoid(logits) - y) / self.dtype.type(len(y)))[:, None]

        cursor = len(self.params)
        for index in range(len(self.config.layers) - 1, -1, -1):
            layer = self.config.layers[index]
            cache = caches[index]
            if isinstance(layer, SigmoidHead):
                continue
            if isinstance(layer, FullyConnected):
                cursor -= 2
                delta, grads[cursor], grads[cursor + 1] = _fc_backward(delta, cache)
            elif isinstance(layer, GlobalAvgPool):
                delta = _global_avg_pool_backward(delta, cache)
            elif isinstance(layer, (Conv, Transition)):
                cursor -= 2
                delta, grads[cursor], grads[cursor + 1] = _conv2d_backward(delta, cache)
            elif isinstance(layer, MaxPool):
                delta = _maxpool_backward(delta, cache)
            elif isinstance(layer, ReLU):
                delta = delta * (cache > 0)
            elif isinstance(layer, DenseBlock):
                x_channels, layer_params, block_cache = cache
                cursor -= 2 * layer.layers
                delta, dparams = _dense_block_backward(
                    delta, x_channels, layer_params, block_cache
                )
                for s, (dk, db) in enumerate(dparams):
                    grads[cursor + 2 * s] = dk
                    grads[cursor + 2 * s + 1] = db
        return loss, grads
