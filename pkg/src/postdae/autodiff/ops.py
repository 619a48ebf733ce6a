"""Network layers as differentiable functions on NCHW tensors."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .tensor import Tensor, as_tensor


class ShapeError(ValueError):
    pass


def conv_output_size(n: int, stride: int) -> int:
    return (n - 1) // stride + 1


def _im2col(x: np.ndarray, stride: int):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * 9)
    return cols, ho, wo


def _col2im(dcols: np.ndarray, x_shape, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c, h, w = x_shape
    dcols = dcols.reshape(n, ho, wo, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, w + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """3x3 cross-correlation with zero padding 1; output size ceil(H/stride)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if stride not in (1, 2):
        raise ShapeError("stride must be 1 or 2")
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be NCHW, got shape {x.shape}")
    k, c = weight.shape[0], weight.shape[1]
    if weight.shape != (k, c, 3, 3) or x.shape[1] != c or bias.shape != (k,):
        raise ShapeError(
            f"conv2d shapes do not line up: input {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    n = x.shape[0]
    cols, ho, wo = _im2col(x.data, stride)
    wmat = weight.data.reshape(k, c * 9)
    out = (cols @ wmat.T + bias.data).reshape(n, ho, wo, k).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, k)
        dw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        db = g2.sum(axis=0) if bias.requires_grad else None
        dx = _col2im(g2 @ wmat, x.shape, stride, ho, wo) if x.requires_grad else None
        return dx, dw, db

    return Tensor.from_op(np.ascontiguousarray(out), (x, weight, bias), backward)


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. Ties route the gradient to the first
    window element in row-major order."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=4)
    out = np.take_along_axis(win, idx[..., None], axis=4)[..., 0]

    def backward(g):
        dwin = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=4)
        dx = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (dx,)

    return Tensor.from_op(out, (x,), backward)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the spatial dims."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor.from_op(out, (x,), backward)


def upconv(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling followed by a stride-1 3x3 convolution."""
    return conv2d(upsample2x(x), weight, bias, stride=1)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ShapeError(
            f"dense shapes do not line up: input {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    out = x.data @ weight.data + bias.data

    def backward(g):
        dx = g @ weight.data.T if x.requires_grad else None
        dw = x.data.T @ g if weight.requires_grad else None
        db = g.sum(axis=0) if bias.requires_grad else None
        return dx, dw, db

    return Tensor.from_op(out, (x, weight, bias), backward)


def flatten(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return x.reshape((x.shape[0], -1))


def unflatten(x: Tensor, channels: int, height: int, width: int) -> Tensor:
    x = as_tensor(x)
    if x.shape[1] != channels * height * width:
        raise ShapeError(f"cannot reshape {x.shape} to (N, {channels}, {height}, {width})")
    return x.reshape((x.shape[0], channels, height, width))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = special.expit(x.data)
    return Tensor.from_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 1 (the channel axis)."""
    x = as_tensor(x)
    s = special.softmax(x.data, axis=1)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return Tensor.from_op(s, (x,), backward)


def soft_dice_loss(pred: Tensor, target, eps: float = 1.0) -> Tensor:
    """1 - (2·Σ pred·target + eps) / (Σ pred + Σ target + eps).

    Sums run over the spatial dims of each sample; the loss is averaged over
    samples and over foreground channels. A single-channel ``pred`` is the
    foreground itself; with several channels, channel 0 is background and is
    skipped.
    """
    pred = as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ShapeError(f"pred {pred.shape} and target {t.shape} differ in shape")
    if pred.ndim < 2:
        raise ShapeError("soft_dice_loss expects (N, C, ...) tensors")
    first = 0 if pred.shape[1] == 1 else 1
    p = pred.data[:, first:]
    tt = t[:, first:]
    axes = tuple(range(2, p.ndim))
    inter = (p * tt).sum(axis=axes)
    denom = p.sum(axis=axes) + tt.sum(axis=axes) + eps
    num = 2.0 * inter + eps
    count = inter.size
    loss = 1.0 - (num / denom).mean()

    def backward(g):
        shape = denom.shape + (1,) * len(axes)
        d = denom.reshape(shape)
        dp = -(2.0 * tt * d - num.reshape(shape)) / (d * d) / count
        full = np.zeros(pred.shape)
        full[:, first:] = dp * g
        return (full,)

    return Tensor.from_op(np.asarray(loss), (pred,), backward)
