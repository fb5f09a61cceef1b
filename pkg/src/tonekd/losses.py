"""Distillation and trajectory-alignment objectives plus the weighted total.

The total objective is

    l_total = l_ctc + lambda * l_distill + mu * l_coal

where l_distill is a temperature-scaled framewise KL between the softmax
distributions induced by student and teacher logits (student-first by
default; a config switch reverses it) and l_coal penalizes the squared
distance between student and teacher latent trajectories, either as a plain
mean over frames or as an exponentially down-weighted sum that prioritizes
early frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import NumericsError, ShapeError, Tensor

KL_STUDENT_FIRST = "student_first"
KL_TEACHER_FIRST = "teacher_first"

COAL_MEAN = "mean"
COAL_WEIGHTED_SUM = "weighted_sum"


@dataclass(frozen=True)
class LossWeights:
    lam: float = 1.0
    mu: float = 0.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ValueError("loss weights must be non-negative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class CoalescenceConfig:
    alpha: float = 0.0
    mode: str = COAL_WEIGHTED_SUM
    normalized: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.mode not in (COAL_MEAN, COAL_WEIGHTED_SUM):
            raise ValueError(f"unknown coalescence mode '{self.mode}'")


@dataclass(frozen=True)
class LossBreakdown:
    l_ctc: float
    l_distill: float
    l_coal: float
    l_total: float


def kl_distill(student_logits: Tensor, teacher_logits: Tensor,
               temperature: float = 1.0,
               direction: str = KL_STUDENT_FIRST) -> Tensor:
    """Mean framewise KL between temperature-softened distributions, times tau^2.

    The teacher side is expected to be a constant tensor; gradients reach the
    student logits only.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if student_logits.shape != teacher_logits.shape:
        raise ShapeError(
            f"logit shapes differ: {student_logits.shape} vs {teacher_logits.shape}")
    if direction not in (KL_STUDENT_FIRST, KL_TEACHER_FIRST):
        raise ValueError(f"unknown KL direction '{direction}'")
    n_frames = student_logits.shape[0]
    tau = float(temperature)
    ls = student_logits.mul_scalar(1.0 / tau).log_softmax()
    lt = teacher_logits.mul_scalar(1.0 / tau).log_softmax()
    if direction == KL_STUDENT_FIRST:
        p, diff = ls.exp(), ls - lt
    else:
        p, diff = lt.exp(), lt - ls
    return p.mul(diff).sum().mul_scalar(tau * tau / n_frames)


def _frame_weights(n_frames: int, alpha: float) -> np.ndarray:
    # w(t) = exp(-alpha * t), t counted from 1
    return np.exp(-alpha * np.arange(1, n_frames + 1, dtype=np.float64))


def coalescence_loss(h_student: Tensor, h_teacher: Tensor,
                     cfg: CoalescenceConfig) -> Tensor:
    """Squared trajectory distance; mean over frames or weighted sum.

    weighted_sum evaluates sum_t exp(-alpha t) * ||hS_t - hT_t||^2 with t
    starting at 1 and no normalization unless cfg.normalized divides by the
    weight total.  The teacher trajectory is a constant.
    """
    if h_student.shape != h_teacher.shape:
        raise ShapeError(
            f"trajectory shapes differ: {h_student.shape} vs {h_teacher.shape}")
    if h_student.ndim != 2:
        raise ShapeError("trajectories must be (T, d)")
    n_frames, dim = h_student.shape
    diff = h_student - h_teacher
    if cfg.mode == COAL_MEAN:
        return diff.sqnorm().mul_scalar(1.0 / n_frames)
    weights = _frame_weights(n_frames, cfg.alpha)
    w_mat = Tensor(np.repeat(weights[:, None], dim, axis=1))
    out = diff.mul(diff).mul(w_mat).sum()
    if cfg.normalized:
        out = out.mul_scalar(1.0 / float(weights.sum()))
    return out


def total_loss(l_ctc: Tensor, l_distill: Tensor, l_coal: Tensor,
               weights: LossWeights) -> tuple[Tensor, LossBreakdown]:
    """Combine components; zero-weighted terms are logged but not in the graph."""
    parts = {"l_ctc": l_ctc, "l_distill": l_distill, "l_coal": l_coal}
    for name, part in parts.items():
        if not math.isfinite(part.item()):
            raise NumericsError(f"{name} is not finite")
    total = l_ctc
    if weights.lam != 0.0:
        total = total + l_distill.mul_scalar(weights.lam)
    if weights.mu != 0.0:
        total = total + l_coal.mul_scalar(weights.mu)
    breakdown = LossBreakdown(
        l_ctc=l_ctc.item(),
        l_distill=l_distill.item(),
        l_coal=l_coal.item(),
        l_total=l_ctc.item() + weights.lam * l_distill.item()
        + weights.mu * l_coal.item(),
    )
    return total, breakdown
