"""Forward/backward pairs for the fixed layer vocabulary.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
consumes that cache. Arrays are numpy; batch axis first.
"""
from __future__ import annotations

import numpy as np

from .exceptions import DegenerateBatchError, LabelError, ShapeError
from .tensor import conv2d, conv2d_backward, conv_output_size

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad, x):
    return np.where(x > 0, grad, 0).astype(grad.dtype, copy=False)


def maxpool2d_forward(x, k: int = 2, stride: int | None = None):
    """Window maxima over (b, c, h, w); ties go to the first row-major element."""
    stride = k if stride is None else stride
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects (c,h,w) or (b,c,h,w), got {x.shape}")
    b, c, h, w = x.shape
    oh = conv_output_size(h, k, stride, 0)
    ow = conv_output_size(w, k, stride, 0)
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :oh, :ow].reshape(b, c, oh, ow, k * k)
    # argmax returns the first occurrence, which is the row-major tie-break
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    cache = (x.shape, idx, k, stride, squeeze)
    return (out[0] if squeeze else out), cache


def maxpool2d_backward(grad, cache):
    shape, idx, k, stride, squeeze = cache
    if squeeze:
        grad = grad[None]
    b, c, oh, ow = idx.shape
    dx = np.zeros(shape, dtype=grad.dtype)
    di, dj = np.divmod(idx, k)
    rows = np.arange(oh)[None, None, :, None] * stride + di
    cols = np.arange(ow)[None, None, None, :] * stride + dj
    bi = np.arange(b)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    # windows may overlap when stride < k, so accumulate
    np.add.at(dx, (bi, ci, rows, cols), grad)
    return dx[0] if squeeze else dx


def global_avgpool_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def global_avgpool_backward(grad, shape):
    b, c, h, w = shape
    return np.broadcast_to(grad[:, :, None, None] / (h * w), shape).astype(grad.dtype)


def batchnorm2d_forward(x, gamma, beta, running_mean, running_var, training: bool,
                        eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
    """Per-channel batch normalisation over (b, h, w).

    In training mode ``running_mean``/``running_var`` are updated in place
    (unbiased variance, as is conventional).
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects (b,c,h,w), got {x.shape}")
    b, c, h, w = x.shape
    if training:
        count = b * h * w
        if count < 2:
            raise DegenerateBatchError("batch norm needs at least 2 values per channel in training")
        mean = x.mean(axis=(0, 2, 3))
        xc = x - mean[None, :, None, None]
        var = (xc * xc).mean(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (count / (count - 1))
    else:
        mean, var = running_mean, running_var
        xc = x - mean[None, :, None, None]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, inv_std, gamma, training)
    return out.astype(x.dtype, copy=False), cache


def batchnorm2d_backward(grad, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, gamma, training = cache
    dbeta = grad.sum(axis=(0, 2, 3))
    dgamma = (grad * xhat).sum(axis=(0, 2, 3))
    dxhat = grad * gamma[None, :, None, None]
    if not training:
        dx = dxhat * inv_std[None, :, None, None]
    else:
        n = grad.shape[0] * grad.shape[2] * grad.shape[3]
        dx = (inv_std / n)[None, :, None, None] * (
            n * dxhat
            - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        )
    return dx.astype(grad.dtype, copy=False), dgamma, dbeta


def dropout_forward(x, rate: float, training: bool, rng: np.random.Generator | None):
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0 <= rate < 1:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1 - rate)
    return x * mask, mask


def dropout_backward(grad, mask):
    return grad if mask is None else grad * mask


def linear_forward(x, W, bias=None):
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"linear: x {x.shape} incompatible with W {W.shape}")
    out = x @ W.T
    if bias is not None:
        if bias.shape != (W.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} vs W {W.shape}")
        out = out + bias
    return out


def linear_backward(grad, x, W):
    """Returns ``(dx, dW, dbias)``."""
    return grad @ W, grad.T @ x, grad.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of the true class and its logit gradient."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    b, n_classes = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = float(np.mean(logsum - z[rows, labels]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, labels] -= 1
    grad /= b
    return loss, grad.astype(logits.dtype, copy=False)


__all__ = [
    "BN_EPS", "BN_MOMENTUM",
    "relu", "relu_backward",
    "maxpool2d_forward", "maxpool2d_backward",
    "global_avgpool_forward", "global_avgpool_backward",
    "batchnorm2d_forward", "batchnorm2d_backward",
    "dropout_forward", "dropout_backward",
    "linear_forward", "linear_backward",
    "softmax", "softmax_cross_entropy",
    "conv2d", "conv2d_backward",
]
