"""Differentiable numeric kernels for resolution-preserving networks.

All feature maps are numpy arrays of shape (batch, channels, rows, cols).
Every forward operation keeps the spatial extents of its input: dilated
convolutions use zero "same" padding, max pooling uses stride 1 with -inf
padding. Each backward function is the exact adjoint of its forward
counterpart, derived by hand; the test suite validates all of them against
central finite differences on float64 inputs. Training runs in float32.

Convolutions are evaluated as one im2col gather followed by a single BLAS
matmul; the input gradient reuses the same core with the kernel flipped,
in/out channels swapped, and the leading/trailing pads exchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "ConvParams",
    "PoolIndices",
    "BatchStats",
    "effective_extent",
    "conv2d_dilated",
    "conv2d_dilated_backward",
    "dilated_correlation_1d",
    "maxpool_same",
    "maxpool_same_backward",
    "relu",
    "relu_backward",
    "concat_channels",
    "concat_channels_backward",
    "softmax_cross_entropy",
    "sgd_step",
    "receptive_field",
]


def effective_extent(kernel: int, rate: int) -> int:
    """Span covered by a dilated kernel: (kernel - 1) * rate + 1."""
    return (kernel - 1) * rate + 1


def _pad_split(kernel: int, rate: int) -> tuple[int, int]:
    # Total padding that keeps the output resolution equal to the input;
    # the floor goes on the leading side, the remainder on the trailing side.
    total = effective_extent(kernel, rate) - 1
    lead = total // 2
    return lead, total - lead


@dataclass
class ConvParams:
    """Parameters of one dilated convolution (stride 1, zero same padding)."""

    weights: np.ndarray  # (out_channels, in_channels, kh, kw)
    bias: np.ndarray  # (out_channels,)
    rate: int = 1

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ValueError(
                f"weights must be (out, in, kh, kw), got shape {self.weights.shape}"
            )
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match "
                f"{self.weights.shape[0]} output channels"
            )
        if self.rate < 1:
            raise ValueError(f"dilation rate must be >= 1, got {self.rate}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


def _im2col(x, kh, kw, rate, pads):
    """Gather dilated taps into a (batch*rows*cols, channels*kh*kw) matrix.

    pads = (top, bottom, left, right); output rows/cols follow from the
    padded extents minus the effective kernel span.
    """
    n, c, h, w = x.shape
    top, bottom, left, right = pads
    xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    h_out = h + top + bottom - (kh - 1) * rate
    w_out = w + left + right - (kw - 1) * rate
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, h_out, w_out, kh, kw),
        strides=(sn, sc, sh, sw, sh * rate, sw * rate),
        writeable=False,
    )
    cols = view.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_out * w_out, c * kh * kw)
    return cols, h_out, w_out


def _conv_core(x, weights, rate, pads):
    n = x.shape[0]
    o, _, kh, kw = weights.shape
    cols, h_out, w_out = _im2col(x, kh, kw, rate, pads)
    y = cols @ weights.reshape(o, -1).T
    return np.ascontiguousarray(y.reshape(n, h_out, w_out, o).transpose(0, 3, 1, 2))


def conv2d_dilated(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """Dilated convolution with stride 1 and zero same padding.

    Taps are spaced ``rate`` pixels apart; out-of-bounds taps read zero, so
    the output has the same spatial extents as the input.
    """
    if x.ndim != 4:
        raise ValueError(f"input must be (batch, channels, rows, cols), got {x.shape}")
    if x.shape[1] != params.in_channels:
        raise ValueError(
            f"input has {x.shape[1]} channels (shape {x.shape}) but weights expect "
            f"{params.in_channels} (shape {params.weights.shape})"
        )
    kh, kw = params.kernel
    pads = _pad_split(kh, params.rate) + _pad_split(kw, params.rate)
    y = _conv_core(x, params.weights, params.rate, pads)
    y += params.bias.reshape(1, -1, 1, 1)
    return y


def conv2d_dilated_backward(
    grad_out: np.ndarray, saved_input: np.ndarray, params: ConvParams
):
    """Adjoint of conv2d_dilated.

    Returns (grad_input, grad_weights, grad_bias) for the scalar
    sum(grad_out * forward(saved_input)).
    """
    if saved_input is None:
        raise ValueError("saved forward input is required for the convolution backward")
    n, c, h, w = saved_input.shape
    o = params.out_channels
    if grad_out.shape != (n, o, h, w):
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"{(n, o, h, w)}"
        )
    kh, kw = params.kernel
    top, bottom = _pad_split(kh, params.rate)
    left, right = _pad_split(kw, params.rate)

    grad_bias = grad_out.sum(axis=(0, 2, 3))

    cols, _, _ = _im2col(saved_input, kh, kw, params.rate, (top, bottom, left, right))
    g_mat = grad_out.transpose(0, 2, 3, 1).reshape(n * h * w, o)
    grad_weights = (g_mat.T @ cols).reshape(params.weights.shape)

    # Input gradient is itself a dilated convolution: flip the kernel,
    # swap in/out channels, and exchange the leading/trailing pads.
    w_adj = np.ascontiguousarray(
        params.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    )
    grad_input = _conv_core(grad_out, w_adj, params.rate, (bottom, top, right, left))
    return grad_input, grad_weights, grad_bias


def dilated_correlation_1d(x: np.ndarray, w: np.ndarray, rate: int) -> np.ndarray:
    """Unpadded 1-D dilated correlation: y[i] = sum_k x[i + rate*k] * w[k-1].

    Taps sit at offsets rate*1 .. rate*K, so the output has
    len(x) - rate*len(w) entries. Kept as a deliberately naive loop; it is
    the reference the 2-D kernel is checked against.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    k = len(w)
    n_out = len(x) - rate * k
    out = np.zeros(max(n_out, 0), dtype=np.float64)
    for i in range(max(n_out, 0)):
        acc = 0.0
        for j in range(k):
            acc += x[i + rate * (j + 1)] * w[j]
        out[i] = acc
    return out


@dataclass
class PoolIndices:
    """Backward bookkeeping for one maxpool_same call."""

    window: int
    input_shape: tuple[int, int, int, int]
    argmax: np.ndarray  # flat index into the window, row-major, shape = input_shape


def maxpool_same(x: np.ndarray, window: int):
    """Stride-1 max pooling padded with -inf; output extents equal input extents.

    Returns (output, PoolIndices). Ties inside a window resolve to the first
    maximal element in row-major window order (argmax convention), which for
    border windows is always a real pixel because padding never wins.
    """
    if x.ndim != 4:
        raise ValueError(f"input must be (batch, channels, rows, cols), got {x.shape}")
    if window < 1 or window % 2 == 0:
        raise ValueError(f"pooling window must be a positive odd integer, got {window}")
    pad = (window - 1) // 2
    xp = np.pad(
        x,
        ((0, 0), (0, 0), (pad, pad), (pad, pad)),
        constant_values=-np.inf,
    )
    windows = np.lib.stride_tricks.sliding_window_view(xp, (window, window), axis=(2, 3))
    flat = windows.reshape(windows.shape[:4] + (window * window,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), PoolIndices(window, x.shape, idx)


def maxpool_same_backward(grad_out: np.ndarray, indices: PoolIndices) -> np.ndarray:
    """Route each grad_out element back to the input position that won its window."""
    n, c, h, w = indices.input_shape
    if grad_out.shape != indices.input_shape:
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match pooled output "
            f"{indices.input_shape}; indices are stale"
        )
    m = indices.window
    pad = (m - 1) // 2
    rows = indices.argmax // m - pad + np.arange(h).reshape(1, 1, h, 1)
    cols = indices.argmax % m - pad + np.arange(w).reshape(1, 1, 1, w)
    base = (np.arange(n).reshape(n, 1, 1, 1) * c + np.arange(c).reshape(1, c, 1, 1))
    flat = (base * h + rows) * w + cols
    grad_input = np.bincount(
        flat.ravel(), weights=grad_out.ravel(), minlength=n * c * h * w
    )
    return grad_input.reshape(n, c, h, w).astype(grad_out.dtype, copy=False)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, saved_input: np.ndarray) -> np.ndarray:
    if saved_input is None:
        raise ValueError("saved forward input is required for the relu backward")
    return grad_out * (saved_input > 0)


def concat_channels(inputs: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate feature maps along the channel axis, in argument order."""
    if not inputs:
        raise ValueError("concat_channels needs at least one input")
    first = inputs[0]
    for t in inputs[1:]:
        if t.shape[0] != first.shape[0] or t.shape[2:] != first.shape[2:]:
            raise ValueError(
                f"cannot concatenate shapes {first.shape} and {t.shape}: "
                "batch and spatial extents must match"
            )
    if len(inputs) == 1:
        return inputs[0]
    return np.concatenate(inputs, axis=1)


def concat_channels_backward(
    grad_out: np.ndarray, channel_sizes: Sequence[int]
) -> list[np.ndarray]:
    """Split grad_out back into per-input slices at the original channel offsets."""
    total = sum(channel_sizes)
    if grad_out.shape[1] != total:
        raise ValueError(
            f"grad_out has {grad_out.shape[1]} channels, expected {total} "
            f"from sizes {tuple(channel_sizes)}"
        )
    splits = np.cumsum(channel_sizes)[:-1]
    return np.split(grad_out, splits, axis=1)


@dataclass
class BatchStats:
    """Loss, logit gradient, and accuracy of one batch.

    valid_count == 0 flags an all-void batch: loss 0, zero gradient, and
    accuracy reported as 1.
    """

    loss: float
    grad_logits: np.ndarray
    accuracy: float
    valid_count: int


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray, void_mask: np.ndarray
) -> BatchStats:
    """Mean cross entropy over non-void pixels, with gradient and accuracy.

    logits: (batch, classes, rows, cols); labels: (batch, rows, cols) ints in
    [0, classes) wherever void_mask is false; void_mask: (batch, rows, cols)
    booleans, true = excluded. Stabilized by per-pixel max subtraction. The
    gradient is (softmax - onehot) / valid_count, zero at void pixels.
    """
    n, num_classes, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.dtype.kind not in "iu":
        raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.shape != (n, h, w) or void_mask.shape != (n, h, w):
        raise ValueError(
            f"labels {labels.shape} / void mask {void_mask.shape} do not match "
            f"logits {logits.shape}"
        )
    valid = ~void_mask
    valid_count = int(valid.sum())
    if valid_count == 0:
        return BatchStats(0.0, np.zeros_like(logits), 1.0, 0)
    safe_labels = np.where(valid, labels, 0)
    if safe_labels.min() < 0 or safe_labels.max() >= num_classes:
        raise ValueError(
            f"labels must lie in [0, {num_classes}) at non-void pixels, found "
            f"range [{labels[valid].min()}, {labels[valid].max()}]"
        )

    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    label_idx = safe_labels[:, None, :, :]
    log_prob_at_label = (
        np.take_along_axis(shifted, label_idx, axis=1)[:, 0] - np.log(denom[:, 0])
    )
    loss = float(-(log_prob_at_label * valid).sum() / valid_count)

    grad = exp / denom
    np.put_along_axis(
        grad, label_idx, np.take_along_axis(grad, label_idx, axis=1) - 1.0, axis=1
    )
    grad *= (valid / valid_count)[:, None, :, :].astype(grad.dtype)

    predicted = logits.argmax(axis=1)
    accuracy = float(((predicted == safe_labels) & valid).sum() / valid_count)
    return BatchStats(loss, grad, accuracy, valid_count)


def sgd_step(params, grads, learning_rate: float, weight_decay: float = 0.0) -> None:
    """In-place SGD update: w -= lr * (g + wd * w); biases skip the decay term."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameter sets but {len(grads)} gradients")
    for p, (gw, gb) in zip(params, grads):
        if gw.shape != p.weights.shape or gb.shape != p.bias.shape:
            raise ValueError(
                f"gradient shapes {gw.shape}/{gb.shape} do not match parameters "
                f"{p.weights.shape}/{p.bias.shape}"
            )
        p.weights -= learning_rate * (gw + weight_decay * p.weights)
        p.bias -= learning_rate * gb


def receptive_field(layers) -> int:
    """Receptive field of a stack of dilated conv / stride-1 pool layers.

    1 + sum of (kernel - 1) * rate over convolutions plus (window - 1) per
    pooling layer; a trailing 1x1 classifier adds nothing.
    """
    rf = 1
    for layer in layers:
        if layer.kind == "conv":
            rf += effective_extent(layer.kernel, layer.rate) - 1
        elif layer.kind == "pool":
            rf += layer.kernel - 1
        else:
            raise ValueError(f"unknown layer kind {layer.kind!r}")
    return rf
