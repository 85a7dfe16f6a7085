"""Per-point linear layers, ReLU, initialisation and a gradient checker."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ShapeError


def linear_pointwise_forward(F: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``F @ W + b`` row by row; the 1x1 convolution over a point set."""
    if F.ndim != 2 or W.ndim != 2 or F.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"linear: F {F.shape}, W {W.shape}, b {b.shape}")
    return F @ W + b


def linear_pointwise_backward(F, W, grad_out):
    if grad_out.shape != (F.shape[0], W.shape[1]) or F.shape[1] != W.shape[0]:
        raise ShapeError(f"linear backward: F {F.shape}, W {W.shape}, grad {grad_out.shape}")
    return grad_out @ W.T, F.T @ grad_out, grad_out.sum(axis=0)


def relu(F: np.ndarray) -> np.ndarray:
    return np.maximum(F, 0)


def relu_backward(F: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(F > 0, grad_out, 0)


def init_params(shape, fan_in: int, fan_out: int, seed) -> np.ndarray:
    """Glorot-uniform draw on ``[-a, a]``, ``a = sqrt(6 / (fan_in + fan_out))``."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return np.random.default_rng(seed).uniform(-a, a, size=shape)


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4
    checked: int = 0

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} worst={self.worst:.3e} coords={self.checked}"


def rel_error(a, n) -> np.ndarray:
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(
    fn: Callable[[Mapping[str, np.ndarray]], tuple[float, Mapping[str, np.ndarray]]],
    arrays: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    max_coords: int = 200,
    seed: int = 0,
    loss_fn: Callable[[Mapping[str, np.ndarray]], float] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``fn(arrays)`` returns ``(scalar_loss, grads)`` where ``grads`` maps every
    name in ``arrays`` to an array of the same shape. Tensors larger than
    ``max_coords`` are checked on a random subset of that many coordinates.
    ``loss_fn``, if given, is a forward-only version of ``fn`` used for the
    perturbed evaluations.
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
    _, grads = fn(arrays)
    if loss_fn is None:
        loss_fn = lambda a: fn(a)[0]  # noqa: E731
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, value in arrays.items():
        analytic = np.asarray(grads[name], dtype=np.float64)
        if analytic.shape != value.shape:
            raise ShapeError(f"gradient for {name!r} has shape {analytic.shape}, expected {value.shape}")
        if value.size == 0:
            continue
        flat = value.reshape(-1)
        coords = np.arange(flat.size)
        if flat.size > max_coords:
            coords = rng.choice(flat.size, max_coords, replace=False)
        worst = 0.0
        for i in coords:
            old = flat[i]
            flat[i] = old + eps
            up = loss_fn(arrays)
            flat[i] = old - eps
            down = loss_fn(arrays)
            flat[i] = old
            numeric = (up - down) / (2 * eps)
            worst = max(worst, float(rel_error(analytic.reshape(-1)[i], numeric)))
        report.max_rel_error[name] = worst
        report.checked += len(coords)
    return report
