"""Forward functions for the layer zoo, each recording its own backward rule."""
from __future__ import annotations

import numpy as np

from pantry.errors import ArgumentError, ShapeError
from pantry.tensor import kernels
from pantry.tensor.core import Tensor, check_finite, make_output

PROB_FLOOR = 1e-12


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _check_window(op, h, w, kh, kw, stride, padding):
    if stride <= 0:
        raise ArgumentError(f"{op}: stride must be positive, got {stride}")
    if padding < 0:
        raise ArgumentError(f"{op}: padding must be non-negative, got {padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"{op}: window {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )


def _pad(x: np.ndarray, padding: int, value=0.0) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


def _unpad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return x[:, :, padding:-padding, padding:-padding]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {wc}")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {f} filters")
    _check_window("conv2d", h, w, kh, kw, stride, padding)
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)

    xp = _pad(x.data, padding)
    if kh == 1 and kw == 1:
        cols = np.ascontiguousarray(xp[:, :, ::stride, ::stride].transpose(0, 2, 3, 1)).reshape(-1, c)
    else:
        cols = kernels.im2col(xp, kh, kw, stride)
    wmat = weight.data.reshape(f, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))

    def grad_fn(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, f)
        gw = (gmat.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = gmat.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = gmat @ wmat
            if kh == 1 and kw == 1:
                gxp = np.zeros(xp.shape, dtype=g.dtype)
                gxp[:, :, ::stride, ::stride] = gcols.reshape(n, ho, wo, c).transpose(0, 3, 1, 2)
            else:
                gxp = kernels.col2im(gcols, xp.shape, kh, kw, stride)
            gx = _unpad(gxp, padding)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_output("conv2d", out, inputs, grad_fn)


def max_pool2d(x: Tensor, window: int, stride: int, padding: int = 0) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects 4-D input, got {x.shape}")
    _check_window("max_pool2d", x.shape[2], x.shape[3], window, window, stride, padding)
    if padding >= window:
        raise ArgumentError(f"max_pool2d: padding {padding} must be smaller than window {window}")
    xp = _pad(x.data, padding, value=-np.inf)
    out, arg = kernels.maxpool_forward(xp, window, stride)

    def grad_fn(g):
        return (_unpad(kernels.maxpool_backward(g, arg, xp.shape, window, stride), padding),)

    return make_output("max_pool2d", out, (x,), grad_fn)


def avg_pool2d(x: Tensor, window: int, stride: int, padding: int = 0) -> Tensor:
    """Average pooling; zero padding counts toward the window mean."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d expects 4-D input, got {x.shape}")
    _check_window("avg_pool2d", x.shape[2], x.shape[3], window, window, stride, padding)
    xp = _pad(x.data, padding)
    ho = conv_output_size(x.shape[2], window, stride, padding)
    wo = conv_output_size(x.shape[3], window, stride, padding)
    out = np.zeros(x.shape[:2] + (ho, wo), dtype=x.dtype)
    for i in range(window):
        for j in range(window):
            out += xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    out /= window * window

    def grad_fn(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        share = g / (window * window)
        for i in range(window):
            for j in range(window):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += share
        return (_unpad(gxp, padding),)

    return make_output("avg_pool2d", out, (x,), grad_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the full spatial extent, returning ``(N, C)``."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def grad_fn(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).copy(),)

    return make_output("global_avg_pool", out, (x,), grad_fn)


def flatten(x: Tensor) -> Tensor:
    shape = x.shape
    out = x.data.reshape(shape[0], -1)
    return make_output("flatten", out, (x,), lambda g: (g.reshape(shape),))


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2:
        raise ArgumentError(f"dense expects 2-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ArgumentError(f"dense: input width {x.shape[1]} does not match weight width {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ArgumentError(f"dense: bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def grad_fn(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_output("dense", out, inputs, grad_fn)


def relu(x: Tensor) -> Tensor:
    # NaN > 0 is False, so check the input or NaN would silently become 0
    check_finite(x.data, "relu input")
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    return make_output("relu", out, (x,), lambda g: (g * mask,))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the row maximum."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return make_output("softmax", p, (x,), grad_fn)


def cross_entropy(probs: Tensor, targets) -> Tensor:
    """Mean over the batch of ``-sum(target * ln(clip(prob, 1e-12, 1)))``."""
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    p = probs.data
    if p.ndim != 2 or t.shape != p.shape:
        raise ArgumentError(f"cross_entropy: probabilities {p.shape} and targets {t.shape} must be equal 2-D shapes")
    if not (np.all((t == 0) | (t == 1)) and np.all(t.sum(axis=1) == 1)):
        raise ArgumentError("cross_entropy: every target row must be one-hot")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ArgumentError("cross_entropy: probability rows must sum to 1 within 1e-6")
    n = p.shape[0]
    clipped = np.clip(p, PROB_FLOOR, 1.0)
    loss = np.asarray(-(t * np.log(clipped)).sum() / n, dtype=p.dtype)
    inside = (p >= PROB_FLOOR) & (p <= 1.0)

    def grad_fn(g):
        return (g * np.where(inside, -t / clipped, 0.0).astype(p.dtype) / n,)

    return make_output("cross_entropy", loss, (probs,), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return make_output("add", a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return make_output("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, factor: float) -> Tensor:
    return make_output("scale", x.data * factor, (x,), lambda g: (g * factor,))


def sum(x: Tensor) -> Tensor:  # noqa: A001
    return make_output("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))
