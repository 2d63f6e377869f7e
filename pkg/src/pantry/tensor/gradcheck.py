"""Central finite-difference check of taped gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from pantry.errors import ArgumentError
from pantry.tensor.core import Tape, Tensor, backward


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    results: list[GradCheckResult]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def max_rel_error(self) -> float:
        return max((r.max_rel_error for r in self.results), default=0.0)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / denom


def _scalar(out: Tensor) -> float:
    if not isinstance(out, Tensor) or out.size != 1:
        shape = getattr(out, "shape", type(out).__name__)
        raise ArgumentError(f"gradient_check needs a scalar-valued function, got {shape}")
    return float(out.data.reshape(-1)[0])


def gradient_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    analytic_override: Callable[[int, np.ndarray], np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare taped gradients of ``f()`` against central differences.

    ``f`` takes no arguments and reads the current values of ``params``. The
    perturbation for element ``x`` is ``step * max(1, |x|)``.
    ``analytic_override(i, grad)`` lets a caller tamper with the analytic
    gradient of parameter ``i`` (negative controls).
    """
    for p in params:
        if p.dtype != np.float64:
            raise ArgumentError(f"gradient_check requires float64 parameters, got {p.dtype}")
        p.requires_grad = True
        p.grad = None

    with Tape():
        out = f()
    _scalar(out)
    backward(out)

    results = []
    for i, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        if analytic_override is not None:
            analytic = analytic_override(i, analytic)
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            h = step * max(1.0, abs(orig))
            flat[k] = orig + h
            up = _scalar(f())
            flat[k] = orig - h
            down = _scalar(f())
            flat[k] = orig
            num_flat[k] = (up - down) / (2 * h)
        err = float(relative_error(analytic, numeric).max()) if p.size else 0.0
        results.append(GradCheckResult(p.name or f"param{i}", err, err <= tolerance))
    return GradCheckReport(results, tolerance)
