"""Layer specs and forward/backward primitives for the image network.

Activations are (n, h, w, c) float64 arrays in channel-last layout.
Convolution is cross-correlation with zero padding, computed through an
im2col reshape and one matrix product; kernels are (kh, kw, c_in, c_out).
Every backward function consumes the cache its forward produced and returns
exact reverse-mode gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NetShapeError


# ---------------------------------------------------------------------------
# Layer specifications (configuration only; parameters live in the network)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    kernel: int
    stride: int


@dataclass(frozen=True)
class DenseBlock:
    """L internal 3x3 conv+ReLU layers, each fed the concatenation of the
    block input and all previous internal outputs; each adds growth_rate
    channels and the block emits input plus all L outputs."""

    layers: int
    growth_rate: int


@dataclass(frozen=True)
class Transition:
    """Channel-compressing 1x1 convolution: out = floor(compression * in)."""

    compression: float


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class FullyConnected:
    out: int


@dataclass(frozen=True)
class SigmoidHead:
    pass


LayerSpec = (
    Conv | ReLU | MaxPool | DenseBlock | Transition | GlobalAvgPool
    | FullyConnected | SigmoidHead
)


def conv_output_dim(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def _check_conv_geometry(x, kernels, stride, padding):
    n, h, w, c = x.shape
    kh, kw, c_in, c_out = kernels.shape
    if c_in != c:
        raise NetShapeError(
            f"kernel expects {c_in} input channels, activation has {c}"
        )
    oh = conv_output_dim(h, kh, stride, padding)
    ow = conv_output_dim(w, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise NetShapeError(
            f"conv output would be {oh}x{ow} for input {h}x{w}, kernel {kh}x{kw}"
        )
    return oh, ow


def _pad_hw(x, padding):
    if not padding:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))


def _conv2d_forward_cached(x, kernels, bias, stride, padding):
    """Stride-1 convolutions run as one GEMM per kernel offset over the
    padded tensor, accumulating shifted output slices: no column matrix is
    materialized, which keeps the memory traffic on the (small) output
    channel side.  Strided convolutions take an im2col fallback."""
    oh, ow = _check_conv_geometry(x, kernels, stride, padding)
    n = x.shape[0]
    kh, kw, c_in, c_out = kernels.shape
    if stride == 1:
        xp = _pad_hw(x, padding)
        hp, wp = xp.shape[1], xp.shape[2]
        xp2 = xp.reshape(n * hp * wp, c_in)
        out = np.broadcast_to(bias, (n, oh, ow, c_out)).astype(x.dtype)
        for i in range(kh):
            for j in range(kw):
                term = (xp2 @ kernels[i, j]).reshape(n, hp, wp, c_out)
                out += term[:, i : i + oh, j : j + ow, :]
        cache = ("gemm", x.shape, xp, kernels, padding, oh, ow)
        return out, cache
    cols, oh, ow = _im2col(x, kh, kw, stride, padding)
    out = cols @ kernels.reshape(kh * kw * c_in, c_out) + bias
    cache = ("im2col", x.shape, cols, kernels, stride, padding, oh, ow)
    return out.reshape(n, oh, ow, c_out), cache


def conv2d_forward(x, kernels, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlate a batch with a kernel stack (zero padding)."""
    out, _ = _conv2d_forward_cached(
        np.asarray(x, dtype=np.float64), np.asarray(kernels, dtype=np.float64),
        np.asarray(bias, dtype=np.float64), stride, padding,
    )
    return out


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    xp = _pad_hw(x, padding)
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    n, oh, ow = windows.shape[:3]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * x.shape[3])
    return cols, oh, ow


def _conv2d_backward(dy, cache):
    if cache[0] == "gemm":
        return _conv2d_backward_gemm(dy, cache)
    return _conv2d_backward_im2col(dy, cache)


def _conv2d_backward_gemm(dy, cache):
    _, x_shape, xp, kernels, padding, oh, ow = cache
    n, h, w, c = x_shape
    kh, kw, c_in, c_out = kernels.shape
    hp, wp = xp.shape[1], xp.shape[2]
    xp2 = xp.reshape(n * hp * wp, c_in)
    dy2 = np.ascontiguousarray(dy).reshape(n * oh * ow, c_out)
    dy4 = dy2.reshape(n, oh, ow, c_out)
    db = dy2.sum(axis=0)
    dk = np.empty_like(kernels)
    dxp = np.zeros((n, hp, wp, c_in), dtype=xp.dtype)
    dy_embedded = np.zeros((n, hp, wp, c_out), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            dy_embedded[:, i : i + oh, j : j + ow, :] = dy4
            dk[i, j] = xp2.T @ dy_embedded.reshape(n * hp * wp, c_out)
            dy_embedded[:, i : i + oh, j : j + ow, :] = 0.0
            dxp[:, i : i + oh, j : j + ow, :] += (dy2 @ kernels[i, j].T).reshape(
                n, oh, ow, c_in
            )
    dx = dxp[:, padding : hp - padding, padding : wp - padding, :] if padding else dxp
    return dx, dk, db


def _conv2d_backward_im2col(dy, cache):
    _, x_shape, cols, kernels, stride, padding, oh, ow = cache
    n, h, w, c = x_shape
    kh, kw, c_in, c_out = kernels.shape
    dyf = dy.reshape(n * oh * ow, c_out)
    dk = (cols.T @ dyf).reshape(kh, kw, c_in, c_out)
    db = dyf.sum(axis=0)
    dcols = (dyf @ kernels.reshape(-1, c_out).T).reshape(n, oh, ow, kh, kw, c_in)
    hp, wp = h + 2 * padding, w + 2 * padding
    dxp = np.zeros((n, hp, wp, c), dtype=np.asarray(dy).dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += (
                dcols[:, :, :, i, j, :]
            )
    dx = dxp[:, padding : hp - padding, padding : wp - padding, :] if padding else dxp
    return dx, dk, db


# ---------------------------------------------------------------------------
# Dense block
# ---------------------------------------------------------------------------


def _dense_block_forward_cached(x, layer_params):
    features = x
    caches = []
    for kernels, bias in layer_params:
        conv_out, conv_cache = _conv2d_forward_cached(
            features, kernels, bias, stride=1, padding=1
        )
        activated = np.maximum(conv_out, 0.0)
        caches.append((conv_cache, conv_out))
        features = np.concatenate([features, activated], axis=3)
    return features, caches


def dense_block_forward(x, layer_params) -> np.ndarray:
    """Forward a dense block given [(kernels, bias), ...] for its layers.

    Layer i consumes channels [0 : c_in + i*g) of the running concatenation;
    the result carries c_in + L*g channels.
    """
    out, _ = _dense_block_forward_cached(np.asarray(x, dtype=np.float64), layer_params)
    return out


def _dense_block_backward(dfeatures, x_channels, layer_params, caches):
    grad = np.array(dfeatures)  # running gradient for the concatenation
    dparams = [None] * len(layer_params)
    offset = x_channels + (len(layer_params) - 1) * _growth(layer_params)
    for idx in range(len(layer_params) - 1, -1, -1):
        conv_cache, conv_out = caches[idx]
        g = _growth(layer_params)
        dact = grad[..., offset : offset + g]
        dconv = dact * (conv_out > 0)
        dx, dk, db = _conv2d_backward(dconv, conv_cache)
        grad = grad[..., :offset]
        grad += dx
        dparams[idx] = (dk, db)
        offset -= g
    return grad, dparams


def _growth(layer_params) -> int:
    return layer_params[0][0].shape[3] if layer_params else 0


# ---------------------------------------------------------------------------
# Pooling and dense heads
# ---------------------------------------------------------------------------


def _maxpool_forward_cached(x, kernel, stride):
    n, h, w, c = x.shape
    oh = conv_output_dim(h, kernel, stride, 0)
    ow = conv_output_dim(w, kernel, stride, 0)
    if oh < 1 or ow < 1:
        raise NetShapeError(f"pool window {kernel} too large for input {h}x{w}")
    windows = sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    flat = windows.reshape(n, oh, ow, c, kernel * kernel)
    idx = flat.argmax(axis=4)  # first maximum: deterministic tie-break
    out = np.take_along_axis(flat, idx[..., None], axis=4)[..., 0]
    return out, (x.shape, idx, kernel, stride, oh, ow)


def _maxpool_backward(dy, cache):
    x_shape, idx, kernel, stride, oh, ow = cache
    n, h, w, c = x_shape
    dx = np.zeros(x_shape)
    rows = (np.arange(oh) * stride)[None, :, None, None] + idx // kernel
    cols = (np.arange(ow) * stride)[None, None, :, None] + idx % kernel
    np.add.at(
        dx,
        (
            np.arange(n)[:, None, None, None],
            rows,
            cols,
            np.arange(c)[None, None, None, :],
        ),
        dy,
    )
    return dx


def _global_avg_pool_forward_cached(x):
    return x.mean(axis=(1, 2)), x.shape


def _global_avg_pool_backward(dy, x_shape):
    n, h, w, c = x_shape
    return np.broadcast_to(dy[:, None, None, :], x_shape) / (h * w)


def _fc_forward_cached(x, weights, bias):
    return x @ weights + bias, (x, weights)


def _fc_backward(dy, cache):
    x, weights = cache
    return dy @ weights.T, x.T @ dy, dy.sum(axis=0)
