"""Stable log-space arithmetic and a finite-difference gradient oracle.

Everything downstream (lattice recursions, training losses) works in
64-bit log space.  Negative infinity is the canonical log-zero; the
helpers here never turn it into NaN.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import UsageError

LOG_ZERO = float("-inf")


def log_sum_exp(values: Sequence[float] | np.ndarray) -> float:
    """log(sum(exp(values))) with max subtraction.

    Returns -inf iff every input is -inf (all-zero probabilities).
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise UsageError("log_sum_exp: empty input")
    m = float(np.max(vals))
    if m == LOG_ZERO:
        return LOG_ZERO
    return m + float(np.log(np.sum(np.exp(vals - m))))


def log_softmax(logits: Sequence[float] | np.ndarray, axis: int = -1) -> np.ndarray:
    """Log of the softmax along ``axis``; shift-invariant by construction."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise UsageError("log_softmax: logits must be finite")
    m = np.max(z, axis=axis, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def finite_difference_gradient(
    loss_fn: Callable[[np.ndarray], float],
    params: np.ndarray,
    epsilon: float = 1e-5,
) -> np.ndarray:
    """Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps per coordinate.

    ``loss_fn`` must be deterministic; it is called 2 * params.size times.
    """
    if epsilon <= 0:
        raise UsageError("finite_difference_gradient: epsilon must be positive")
    theta = np.array(params, dtype=np.float64)
    flat = theta.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        up = loss_fn(theta)
        flat[i] = orig - epsilon
        down = loss_fn(theta)
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * epsilon)
    return grad.reshape(theta.shape)


def max_relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    """Largest entrywise deviation, scaled by the larger gradient magnitude.

    Both arrays are compared on the scale max(|approx|_inf, |exact|_inf) so
    that coordinates near zero do not blow up the ratio.
    """
    a = np.asarray(approx, dtype=np.float64).ravel()
    b = np.asarray(exact, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise UsageError("max_relative_error: shape mismatch")
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)), 1e-300)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale
