"""Dense array primitives: checked reshape, replication padding and 2-D convolution.

Arrays are plain row-major :class:`numpy.ndarray` values. Convolution is
cross-correlation (no kernel flip) and accepts either a single ``(c, h, w)``
sample or a ``(b, c, h, w)`` batch.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ShapeError

__all__ = [
    "reshape",
    "pad_replicate_2d",
    "conv2d",
    "conv2d_backward",
    "conv_output_size",
]


def reshape(t: np.ndarray, new_shape) -> np.ndarray:
    """Reinterpret ``t`` with ``new_shape`` without reordering its flat data."""
    t = np.asarray(t)
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape, dtype=np.int64)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {new_shape}")
    return np.ascontiguousarray(t).reshape(new_shape)


def pad_replicate_2d(t: np.ndarray, pad: int) -> np.ndarray:
    """Pad the last two axes by repeating the nearest edge element."""
    t = np.asarray(t)
    if pad < 0:
        raise ValueError("pad must be non-negative")
    if t.ndim < 2 or t.shape[-1] < 1 or t.shape[-2] < 1:
        raise ShapeError(f"need a non-empty 2-D field, got shape {t.shape}")
    if pad == 0:
        return t.copy()
    widths = [(0, 0)] * (t.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(t, widths, mode="edge")


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - kernel
    if span < 0:
        raise ShapeError(f"kernel {kernel} does not fit input {size} with pad {pad}")
    if span % stride:
        raise ShapeError(
            f"output extent not integral: ({size} + 2*{pad} - {kernel}) / {stride}"
        )
    return span // stride + 1


def _windows(xp, kh, kw, stride):
    # (b, c, oh, ow, kh, kw) view over the padded input
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"expected (c,h,w) or (b,c,h,w) input, got {x.shape}")
    return x, False


def conv2d(input, weights, bias=None, stride: int = 1, zero_pad: int = 0) -> np.ndarray:
    """Cross-correlate ``input`` with ``weights``.

    ``out[o, y, x] = bias[o] + sum_{c,i,j} in[c, y*stride+i-pad, x*stride+j-pad] * w[o, c, i, j]``
    with out-of-range input read as zero.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    x, single = _as_batch(input)
    w = np.asarray(weights)
    if w.ndim != 4:
        raise ShapeError(f"weights must be (c_out, c_in, kh, kw), got {w.shape}")
    c_out, c_in, kh, kw = w.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {c_in}")
    oh = conv_output_size(x.shape[2], kh, stride, zero_pad)
    ow = conv_output_size(x.shape[3], kw, stride, zero_pad)

    if zero_pad:
        x = np.pad(x, ((0, 0), (0, 0), (zero_pad, zero_pad), (zero_pad, zero_pad)))
    win = _windows(x, kh, kw, stride)[:, :, :oh, :ow]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (b, oh, ow, c_out)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        b = np.asarray(bias)
        if b.shape != (c_out,):
            raise ShapeError(f"bias must have shape ({c_out},), got {b.shape}")
        out += b[None, :, None, None]
    return out[0] if single else out


def conv2d_backward(grad_out, input, weights, stride: int = 1, zero_pad: int = 0):
    """Adjoint of :func:`conv2d`.

    Returns ``(grad_input, grad_weights, grad_bias)``.
    """
    x, single = _as_batch(input)
    g = np.asarray(grad_out)
    if single:
        g = g[None]
    w = np.asarray(weights)
    c_out, c_in, kh, kw = w.shape
    b, _, h, wd = x.shape
    oh = conv_output_size(h, kh, stride, zero_pad)
    ow = conv_output_size(wd, kw, stride, zero_pad)
    if g.shape != (b, c_out, oh, ow):
        raise ShapeError(f"grad_out shape {g.shape} != forward output {(b, c_out, oh, ow)}")

    xp = x
    if zero_pad:
        xp = np.pad(x, ((0, 0), (0, 0), (zero_pad, zero_pad), (zero_pad, zero_pad)))
    win = _windows(xp, kh, kw, stride)[:, :, :oh, :ow]

    grad_w = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (c_out, c_in, kh, kw)
    grad_b = g.sum(axis=(0, 2, 3))

    cols = np.tensordot(g, w, axes=([1], [0]))  # (b, oh, ow, c_in, kh, kw)
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # (b, c_in, kh, kw, oh, ow)
    gxp = np.zeros(xp.shape, dtype=np.result_type(g, w))
    span_h = stride * (oh - 1) + 1
    span_w = stride * (ow - 1) + 1
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + span_h:stride, j:j + span_w:stride] += cols[:, :, i, j]
    if zero_pad:
        gxp = gxp[:, :, zero_pad:zero_pad + h, zero_pad:zero_pad + wd]
    gxp = np.ascontiguousarray(gxp)
    return (gxp[0] if single else gxp), grad_w.astype(w.dtype, copy=False), grad_b
