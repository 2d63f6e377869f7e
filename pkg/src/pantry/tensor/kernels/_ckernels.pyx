# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the loops in ``_pykernels``; same signatures and layouts."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - kh) // stride + 1, wo = (w - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n * ho * wo, c * kh * kw), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t b, oh, ow, ch, i, j, row, col, y0, x0
    with nogil:
        for b in range(n):
            for oh in range(ho):
                y0 = oh * stride
                for ow in range(wo):
                    x0 = ow * stride
                    row = (b * ho + oh) * wo + ow
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                out[row, col] = x[b, ch, y0 + i, x0 + j]
                                col += 1
    return out_arr


def col2im(real[:, ::1] cols, shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h - kh) // stride + 1, wo = (w - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, oh, ow, ch, i, j, row, col, y0, x0
    with nogil:
        for b in range(n):
            for oh in range(ho):
                y0 = oh * stride
                for ow in range(wo):
                    x0 = ow * stride
                    row = (b * ho + oh) * wo + ow
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                out[b, ch, y0 + i, x0 + j] += cols[row, col]
                                col += 1
    return out_arr


def maxpool_forward(real[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1, wo = (w - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, ho, wo), dtype=dtype)
    arg_arr = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ch, oh, ow, i, j, best_idx
    cdef real best, v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oh in range(ho):
                    for ow in range(wo):
                        best = x[b, ch, oh * stride, ow * stride]
                        best_idx = 0
                        for i in range(k):
                            for j in range(k):
                                v = x[b, ch, oh * stride + i, ow * stride + j]
                                if v > best:
                                    best = v
                                    best_idx = i * k + j
                        out[b, ch, oh, ow] = best
                        arg[b, ch, oh, ow] = best_idx
    return out_arr, arg_arr


def maxpool_backward(real[:, :, :, ::1] grad, cnp.int64_t[:, :, :, ::1] arg, shape,
                     Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], ho = grad.shape[2], wo = grad.shape[3]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros(tuple(shape), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, oh, ow, a
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oh in range(ho):
                    for ow in range(wo):
                        a = arg[b, ch, oh, ow]
                        out[b, ch, oh * stride + a // k, ow * stride + a % k] += grad[b, ch, oh, ow]
    return out_arr
