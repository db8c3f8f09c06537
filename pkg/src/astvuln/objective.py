"""Focal loss and plain cross-entropy for binary classification.

Per sample the focal loss is ``-a_c * (1 - p_t)**gamma * log(p_t)`` where
``p_t`` is the probability the model gives the true class and ``a_c`` is
``alpha`` for positives and ``1 - alpha`` for negatives. Probabilities are
clamped to ``[EPS, 1]`` before the log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import InvalidInputError

EPS = 1e-7


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise InvalidInputError("alpha must lie in (0, 1]")
        if self.gamma < 0:
            raise InvalidInputError("gamma must be >= 0")


def _prepare(p, y):
    p_t = p if isinstance(p, torch.Tensor) else torch.as_tensor(np.asarray(p, dtype=np.float64))
    y_t = y if isinstance(y, torch.Tensor) else torch.as_tensor(np.asarray(y))
    if p_t.numel() == 0:
        raise InvalidInputError("empty batch")
    if p_t.shape != y_t.shape:
        raise InvalidInputError("p and y must have the same shape")
    if bool(((y_t != 0) & (y_t != 1)).any()):
        raise InvalidInputError("labels must be 0 or 1")
    return p_t, y_t.to(p_t.dtype), not isinstance(p, torch.Tensor)


def _finish(loss, as_float):
    return float(loss) if as_float else loss


def true_class_probability(p_positive, y):
    """``p`` for positives, ``1 - p`` for negatives."""
    return np.where(np.asarray(y) == 1, p_positive, 1.0 - np.asarray(p_positive))


def focal_loss(p, y, config: FocalConfig = FocalConfig()):
    """Mean focal loss given the true-class probability ``p`` of each sample."""
    p_t, y_t, as_float = _prepare(p, y)
    p_t = p_t.clamp(EPS, 1.0)
    weight = config.alpha * y_t + (1.0 - config.alpha) * (1.0 - y_t)
    loss = -weight * (1.0 - p_t) ** config.gamma * torch.log(p_t)
    return _finish(loss.mean(), as_float)


def cross_entropy(p, y):
    """Mean negative log-likelihood of the true-class probability ``p``."""
    p_t, _, as_float = _prepare(p, y)
    return _finish(-torch.log(p_t.clamp(EPS, 1.0)).mean(), as_float)


def _log_true_prob(logits, y):
    signed = torch.where(y > 0.5, logits, -logits)
    return F.logsigmoid(signed).clamp(min=float(np.log(EPS)))


def focal_loss_with_logits(logits: torch.Tensor, y: torch.Tensor, config: FocalConfig = FocalConfig()):
    """Stable focal loss on positive-class logits (used for training)."""
    if logits.numel() == 0:
        raise InvalidInputError("empty batch")
    y = y.to(logits.dtype)
    log_pt = _log_true_prob(logits, y)
    p_t = log_pt.exp()
    weight = config.alpha * y + (1.0 - config.alpha) * (1.0 - y)
    return (-weight * (1.0 - p_t) ** config.gamma * log_pt).mean()


def cross_entropy_with_logits(logits: torch.Tensor, y: torch.Tensor):
    if logits.numel() == 0:
        raise InvalidInputError("empty batch")
    return (-_log_true_prob(logits, y.to(logits.dtype))).mean()
