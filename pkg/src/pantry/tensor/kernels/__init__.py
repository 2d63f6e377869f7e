"""Backend selection for the convolution and pooling inner loops.

The compiled Cython module is used when it imports; otherwise, or when the
environment variable ``PANTRY_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy implementation is used. :func:`use_backend` switches at
runtime (tests and the benchmark rely on it).
"""
import os

import numpy as np

from pantry.tensor.kernels import _pykernels

try:
    from pantry.tensor.kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

BACKEND = ""
_impl = _pykernels


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def use_backend(name: str) -> None:
    global BACKEND, _impl
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    BACKEND, _impl = name, _BACKENDS[name]


def im2col(x, kh, kw, stride):
    return _impl.im2col(np.ascontiguousarray(x), kh, kw, stride)


def col2im(cols, shape, kh, kw, stride):
    return _impl.col2im(np.ascontiguousarray(cols), tuple(shape), kh, kw, stride)


def maxpool_forward(x, k, stride):
    return _impl.maxpool_forward(np.ascontiguousarray(x), k, stride)


def maxpool_backward(grad, arg, shape, k, stride):
    return _impl.maxpool_backward(np.ascontiguousarray(grad), np.ascontiguousarray(arg), tuple(shape), k, stride)


_forced = os.environ.get("PANTRY_PURE_PYTHON", "") not in ("", "0")
use_backend("python" if _forced or _ckernels is None else "cython")
