"""Pure numpy implementations of the hot loops.

All functions operate on already-padded NCHW arrays. Column layout for
``im2col``: row ``n*Ho*Wo + oh*Wo + ow``, column ``c*kh*kw + i*kw + j``, so a
weight of shape ``(F, C, kh, kw)`` reshaped to ``(F, C*kh*kw)`` lines up.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_size(size, k, stride):
    return (size - k) // stride + 1


def im2col(x, kh, kw, stride):
    n, c, h, w = x.shape
    ho, wo = _out_size(h, kh, stride), _out_size(w, kw, stride)
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def col2im(cols, shape, kh, kw, stride):
    n, c, h, w = shape
    ho, wo = _out_size(h, kh, stride), _out_size(w, kw, stride)
    blocks = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += blocks[:, :, i, j]
    return out


def maxpool_forward(x, k, stride):
    """Return the pooled array and the argmax offset (``i*k + j``) per window."""
    n, c, h, w = x.shape
    ho, wo = _out_size(h, k, stride), _out_size(w, k, stride)
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool_backward(grad, arg, shape, k, stride):
    ho, wo = grad.shape[2], grad.shape[3]
    out = np.zeros(shape, dtype=grad.dtype)
    for i in range(k):
        for j in range(k):
            hit = np.where(arg == i * k + j, grad, 0)
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += hit
    return out
