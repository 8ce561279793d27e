"""Transducer likelihood over the alignment lattice, early/late
end-of-speech penalties, analytic lattice gradients, and a brute-force
path-enumeration oracle.

The lattice node (t, u) holds a log-distribution over tokens + blank given
frame t and label prefix y_1..y_u.  A path moves right on blank (consume a
frame) or up on a token emission (stay on the frame), starts at (0, 0) and
ends by emitting blank at (T-1, U).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ConfigError, InfeasibleAlignmentError, TrainingError, UsageError
from .numerics import LOG_ZERO, log_sum_exp

_BRUTE_FORCE_LIMIT = 14  # T + U bound for path enumeration


@dataclass
class LogitLattice:
    """log_probs[t, u, k]: (T, U+1, V+1) float64, blank at index V.

    Each (t, u) slice exponentiates to a distribution before penalties are
    applied; the penalty deliberately sub-normalizes the end-of-speech entry.
    """

    log_probs: np.ndarray

    def __post_init__(self) -> None:
        self.log_probs = np.asarray(self.log_probs, dtype=np.float64)
        if self.log_probs.ndim != 3:
            raise UsageError("LogitLattice: log_probs must be (T, U+1, V+1)")
        if min(self.log_probs.shape) < 1 or self.log_probs.shape[2] < 2:
            raise UsageError("LogitLattice: degenerate shape")

    @property
    def num_frames(self) -> int:
        return int(self.log_probs.shape[0])

    @property
    def num_labels(self) -> int:
        return int(self.log_probs.shape[1]) - 1

    @property
    def num_symbols(self) -> int:
        return int(self.log_probs.shape[2])

    @property
    def blank(self) -> int:
        return self.num_symbols - 1

    @property
    def eos(self) -> int:
        return self.num_symbols - 2


@dataclass(frozen=True)
class PenaltyConfig:
    """Scales (per frame of earliness/lateness) and grace buffer, in frames."""

    alpha_early: float = 0.1
    alpha_late: float = 1.0
    t_buffer: int = 3

    def validate(self) -> None:
        if self.alpha_early < 0:
            raise ConfigError("PenaltyConfig: field 'alpha_early' must be >= 0")
        if self.alpha_late < 0:
            raise ConfigError("PenaltyConfig: field 'alpha_late' must be >= 0")
        if self.t_buffer < 0:
            raise ConfigError("PenaltyConfig: field 't_buffer' must be >= 0")


ZERO_PENALTY = PenaltyConfig(alpha_early=0.0, alpha_late=0.0, t_buffer=0)


def _check_labels(lattice: LogitLattice, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or len(labels) != lattice.num_labels:
        raise UsageError("labels length must match the lattice label dimension")
    if labels.size and (labels.min() < 0 or labels.max() >= lattice.num_symbols - 1):
        raise UsageError("label id out of range for the lattice")
    if len(labels) > lattice.num_frames:
        raise InfeasibleAlignmentError(
            f"no alignment: {len(labels)} labels but only {lattice.num_frames} frames"
        )
    return labels


def _forward(lp: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """alpha[t, u] = log mass of paths reaching node (t, u)."""
    T, U1, _ = lp.shape
    U = U1 - 1
    blank = lp.shape[2] - 1
    alpha = np.full((T, U + 1), LOG_ZERO)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U + 1):
            if t == 0 and u == 0:
                continue
            stay = alpha[t - 1, u] + lp[t - 1, u, blank] if t > 0 else LOG_ZERO
            emit = alpha[t, u - 1] + lp[t, u - 1, labels[u - 1]] if u > 0 else LOG_ZERO
            alpha[t, u] = np.logaddexp(stay, emit)
    return alpha


def _backward(lp: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """beta[t, u] = log mass of completing a path from node (t, u)."""
    T, U1, _ = lp.shape
    U = U1 - 1
    blank = lp.shape[2] - 1
    beta = np.full((T, U + 1), LOG_ZERO)
    beta[T - 1, U] = lp[T - 1, U, blank]
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            if t == T - 1 and u == U:
                continue
            stay = lp[t, u, blank] + beta[t + 1, u] if t < T - 1 else LOG_ZERO
            emit = lp[t, u, labels[u]] + beta[t, u + 1] if u < U else LOG_ZERO
            beta[t, u] = np.logaddexp(stay, emit)
    return beta


def forward_backward(
    lattice: LogitLattice, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    """Forward and backward log-mass matrices plus the total log-likelihood."""
    labels = _check_labels(lattice, labels)
    lp = lattice.log_probs
    alpha = _forward(lp, labels)
    beta = _backward(lp, labels)
    total = float(alpha[-1, -1] + lp[-1, -1, lattice.blank])
    return alpha, beta, total


def rnnt_loss(lattice: LogitLattice, labels: np.ndarray) -> float:
    """Negative log-likelihood summed over all monotone alignments."""
    labels = _check_labels(lattice, labels)
    lp = lattice.log_probs
    alpha = _forward(lp, labels)
    total = alpha[-1, -1] + lp[-1, -1, lattice.blank]
    if not np.isfinite(total):
        raise TrainingError("rnnt_loss: total log-likelihood is not finite")
    return float(-total)


def brute_force_loss(lattice: LogitLattice, labels: np.ndarray) -> float:
    """Enumerate every alignment path and log-sum their scores.

    Independent of the dynamic program on purpose; only feasible for
    T + U <= 14.
    """
    labels = _check_labels(lattice, labels)
    lp = lattice.log_probs
    T, U = lattice.num_frames, lattice.num_labels
    if T + U > _BRUTE_FORCE_LIMIT:
        raise UsageError(f"brute_force_loss: T + U must be <= {_BRUTE_FORCE_LIMIT}")
    blank = lattice.blank
    num_moves = (T - 1) + U
    path_scores = []
    for emit_positions in combinations(range(num_moves), U):
        emits = set(emit_positions)
        t = u = 0
        score = 0.0
        for move in range(num_moves):
            if move in emits:
                score += lp[t, u, labels[u]]
                u += 1
            else:
                score += lp[t, u, blank]
                t += 1
        score += lp[T - 1, U, blank]
        path_scores.append(score)
    return -log_sum_exp(path_scores)


def endpoint_penalty_schedule(num_frames: int, t_eos: int, cfg: PenaltyConfig) -> np.ndarray:
    """Per-frame penalty: early term before t_eos, late term past the grace buffer."""
    t = np.arange(num_frames, dtype=np.float64)
    early = np.maximum(0.0, cfg.alpha_early * (t_eos - t))
    late = np.maximum(0.0, cfg.alpha_late * (t - t_eos - cfg.t_buffer))
    return early + late


def apply_endpoint_penalty(lattice: LogitLattice, t_eos: int, cfg: PenaltyConfig) -> LogitLattice:
    """Subtract the early/late penalty from the end-of-speech log-probability.

    Only the transition emitting the final label (row U-1, end-of-speech
    symbol) is touched; nothing is renormalized.
    """
    cfg.validate()
    if lattice.num_labels < 1:
        raise UsageError("apply_endpoint_penalty: lattice has no final label row")
    if not 0 <= t_eos <= lattice.num_frames:
        raise UsageError("apply_endpoint_penalty: t_eos outside [0, T]")
    penalized = lattice.log_probs.copy()
    penalized[:, lattice.num_labels - 1, lattice.eos] -= endpoint_penalty_schedule(
        lattice.num_frames, t_eos, cfg
    )
    return LogitLattice(penalized)


def rnnt_loss_and_grad(lattice: LogitLattice, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss plus d(loss)/d(log_probs[t, u, k]) via transition occupancies."""
    labels = _check_labels(lattice, labels)
    lp = lattice.log_probs
    T, U = lattice.num_frames, lattice.num_labels
    blank = lattice.blank
    alpha = _forward(lp, labels)
    beta = _backward(lp, labels)
    total = alpha[-1, -1] + lp[-1, -1, blank]
    if not np.isfinite(total):
        raise TrainingError("rnnt_loss_and_grad: total log-likelihood is not finite")
    grad = np.zeros_like(lp)
    for t in range(T):
        for u in range(U + 1):
            # Blank transition (t, u) -> (t+1, u); the final blank leaves the lattice.
            if t < T - 1:
                grad[t, u, blank] = -np.exp(alpha[t, u] + lp[t, u, blank] + beta[t + 1, u] - total)
            elif u == U:
                grad[t, u, blank] = -np.exp(alpha[t, u] + lp[t, u, blank] - total)
            # Emit transition (t, u) -> (t, u+1).
            if u < U:
                grad[t, u, labels[u]] = -np.exp(
                    alpha[t, u] + lp[t, u, labels[u]] + beta[t, u + 1] - total
                )
    return float(-total), grad


def rnnt_grad(lattice: LogitLattice, labels: np.ndarray) -> np.ndarray:
    """Gradient of the negative log-likelihood w.r.t. every lattice entry."""
    _, grad = rnnt_loss_and_grad(lattice, labels)
    return grad


def endpoint_penalty_scale_grads(
    lattice: LogitLattice, labels: np.ndarray, t_eos: int, cfg: PenaltyConfig
) -> tuple[float, float]:
    """d(loss)/d(alpha_early) and d(loss)/d(alpha_late) at the given config.

    The penalty enters each end-of-speech entry additively, so the chain
    rule only needs the lattice gradient of the penalized lattice times the
    per-frame earliness/lateness factors.
    """
    penalized = apply_endpoint_penalty(lattice, t_eos, cfg)
    grad = rnnt_grad(penalized, labels)
    t = np.arange(lattice.num_frames, dtype=np.float64)
    early_factor = np.maximum(0.0, t_eos - t)
    late_factor = np.maximum(0.0, t - t_eos - cfg.t_buffer)
    eos_grad = grad[:, lattice.num_labels - 1, lattice.eos]
    return float(np.sum(eos_grad * -early_factor)), float(np.sum(eos_grad * -late_factor))
