"""Layer primitives with hand-written backward passes.

Convolutions are 3x3, stride 1, zero padding 1, computed through im2col.
All functions are dtype-preserving: float32 in, float32 out.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, ShapeError
from .tensor import check_shape

KERNEL = 3
PAD = 1

# im2col buffers are built per chunk of the batch to bound memory at large inputs
_COLS_BUDGET = 1 << 24


@dataclass
class ConvLayer:
    weight: np.ndarray  # (C_out, C_in, 3, 3)
    bias: np.ndarray  # (C_out,)

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]


@dataclass
class FcLayer:
    weight: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)


def _chunks(n, per_sample):
    step = max(1, _COLS_BUDGET // max(per_sample, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def _im2col(xp, h, w):
    # xp: padded (n, c, h+2, w+2) -> (n*h*w, c*9), column order (c, di, dj)
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))  # n,c,h,w,3,3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * KERNEL * KERNEL)


def conv2d_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    if x.ndim != 4 or x.shape[1] != layer.c_in:
        raise ShapeError(f"conv input {x.shape} does not match weight {layer.weight.shape}")
    n, c, h, w = x.shape
    wmat = layer.weight.reshape(layer.c_out, -1).T
    out = np.empty((n, h, w, layer.c_out), dtype=x.dtype)
    xp = np.pad(x, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)))
    for sl in _chunks(n, h * w * c * KERNEL * KERNEL):
        cols = _im2col(xp[sl], h, w)
        out[sl] = (cols @ wmat + layer.bias).reshape(-1, h, w, layer.c_out)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(x: np.ndarray, layer: ConvLayer, grad_out: np.ndarray):
    """Return ``(grad_x, grad_w, grad_b)`` for the forward pass on ``x``."""
    if x.ndim != 4 or x.shape[1] != layer.c_in:
        raise ShapeError(f"conv input {x.shape} does not match weight {layer.weight.shape}")
    n, c, h, w = x.shape
    check_shape(grad_out, (n, layer.c_out, h, w), "conv grad_out")
    wmat = layer.weight.reshape(layer.c_out, -1)
    grad_w = np.zeros_like(wmat)
    grad_xp = np.zeros((n, c, h + 2 * PAD, w + 2 * PAD), dtype=x.dtype)
    xp = np.pad(x, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)))
    g = grad_out.transpose(0, 2, 3, 1)
    for sl in _chunks(n, h * w * c * KERNEL * KERNEL):
        cols = _im2col(xp[sl], h, w)
        gs = g[sl].reshape(-1, layer.c_out)
        grad_w += gs.T @ cols
        dcols = (gs @ wmat).reshape(-1, h, w, c, KERNEL, KERNEL)
        target = grad_xp[sl]
        for di in range(KERNEL):
            for dj in range(KERNEL):
                target[:, :, di:di + h, dj:dj + w] += dcols[..., di, dj].transpose(0, 3, 1, 2)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_x = np.ascontiguousarray(grad_xp[:, :, PAD:PAD + h, PAD:PAD + w])
    return grad_x, grad_w.reshape(layer.weight.shape), grad_b


def maxpool2x2_forward(x: np.ndarray):
    """2x2/2 max pool. ``argmax`` holds the winning index within each window
    (0..3 in row-major window order); ties go to the lowest index."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool needs even spatial extents, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    argmax = win.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(win, argmax[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(y), argmax


def maxpool2x2_backward(grad_y: np.ndarray, argmax: np.ndarray, input_shape) -> np.ndarray:
    n, c, h, w = input_shape
    check_shape(grad_y, (n, c, h // 2, w // 2), "maxpool grad_y")
    check_shape(argmax, (n, c, h // 2, w // 2), "maxpool argmax")
    win = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad_y.dtype)
    np.put_along_axis(win, argmax[..., None].astype(np.intp), grad_y[..., None], axis=-1)
    return np.ascontiguousarray(
        win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    )


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    if x.shape != grad_y.shape:
        raise ShapeError(f"relu grad shape {grad_y.shape} != input shape {x.shape}")
    return np.where(x > 0, grad_y, 0).astype(grad_y.dtype, copy=False)


def fc_forward(x: np.ndarray, layer: FcLayer) -> np.ndarray:
    n_out, n_in = layer.weight.shape
    if x.ndim != 2 or x.shape[1] != n_in:
        raise ShapeError(f"fc input {x.shape} does not match weight {layer.weight.shape}")
    return x @ layer.weight.T + layer.bias


def fc_backward(x: np.ndarray, layer: FcLayer, grad_out: np.ndarray):
    n_out, n_in = layer.weight.shape
    check_shape(x, (None, n_in), "fc input")
    check_shape(grad_out, (x.shape[0], n_out), "fc grad_out")
    return grad_out @ layer.weight, grad_out.T @ x, grad_out.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows and its gradient with respect to ``logits``."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"label out of range [0, {c}): {labels.tolist()}")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - z[rows, labels]))
    grad = np.exp(z - lse[:, None])
    grad[rows, labels] -= 1
    return loss, grad / n
