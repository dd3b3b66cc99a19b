"""Training objectives for the sparse multi-label retrieval problem.

All three losses return the scalar value together with analytic gradients
w.r.t. the cosine logits (and the learned sigmoid scale where it applies).
Everything is computed in numerically stable log-sum form; log(sigmoid(.))
is never evaluated naively.

Reduction conventions: per sample, BCE and focal average over the vocabulary
and the contrastive loss averages over the positive set; a batch input
averages over its samples (rows without positives are skipped by the
contrastive loss).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import UsageError

DEFAULT_TAU = 0.07
DEFAULT_FOCAL_GAMMA = 2.0
DEFAULT_FOCAL_ALPHA = 0.25


@dataclass
class LossOutput:
    value: float
    d_logits: np.ndarray  # same shape as the logits input
    d_scale: float        # 0 for the contrastive loss

    def __post_init__(self):
        if not np.isfinite(self.value) or self.value < 0:
            raise UsageError(f"loss value must be finite and nonnegative, got {self.value}")


def _as_batch(logits: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    logits = np.asarray(logits)
    single = logits.ndim == 1
    logits2 = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    target2 = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if logits2.shape != target2.shape:
        raise UsageError(f"logits shape {logits2.shape} does not match target shape {target2.shape}")
    return logits2, target2, single


def _sigmoid(s: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(s))
    return np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(s: np.ndarray) -> np.ndarray:
    # log(1 + e^s), stable for large |s|
    return np.logaddexp(0.0, s)


def _finish(value: float, d_logits: np.ndarray, d_scale: float,
            single: bool, dtype) -> LossOutput:
    if single:
        d_logits = d_logits[0]
    return LossOutput(value=float(value), d_logits=d_logits.astype(dtype, copy=False),
                      d_scale=float(d_scale))


def bce_scaled(logits: np.ndarray, scale: float, target: np.ndarray) -> LossOutput:
    """Binary cross-entropy on sigmoid(scale * logit), averaged over V.

    The learned scale sharpens the separation between active and inactive
    concepts; its gradient is returned so it can be trained jointly.
    """
    if scale <= 0:
        raise UsageError("bce_scaled requires a positive scale")
    dtype = np.asarray(logits).dtype
    y_hat, y, single = _as_batch(logits, target)
    b, v = y_hat.shape
    s = scale * y_hat
    # -(y log p + (1-y) log(1-p)) == softplus(s) - y*s
    value = (_softplus(s) - y * s).sum() / (b * v)
    residual = _sigmoid(s) - y
    d_logits = scale * residual / (b * v)
    d_scale = float((residual * y_hat).sum() / (b * v))
    return _finish(value, d_logits, d_scale, single, dtype)


def contrastive_multilabel(
    logits: np.ndarray, target: np.ndarray, tau: float = DEFAULT_TAU
) -> Optional[LossOutput]:
    """Multi-label InfoNCE: every present concept is a positive anchor
    against the full-vocabulary softmax at temperature tau.

    Returns None when no sample in the input has a positive concept (the
    skip-sample signal, distinct from a failure). The learned sigmoid scale
    plays no role here, so d_scale is 0.
    """
    if tau <= 0:
        raise UsageError("contrastive temperature must be positive")
    dtype = np.asarray(logits).dtype
    y_hat, y, single = _as_batch(logits, target)
    counts = y.sum(axis=1)
    used = counts > 0
    n_used = int(used.sum())
    if n_used == 0:
        return None
    u = y_hat / tau
    m = u.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(u - m).sum(axis=1))
    per_sample = lse - (u * y).sum(axis=1) / np.maximum(counts, 1.0)
    value = per_sample[used].sum() / n_used
    softmax = np.exp(u - lse[:, None])
    d_u = softmax - y / np.maximum(counts, 1.0)[:, None]
    d_u[~used] = 0.0
    d_logits = d_u / (tau * n_used)
    return _finish(value, d_logits, 0.0, single, dtype)


def focal(
    logits: np.ndarray,
    scale: float,
    target: np.ndarray,
    gamma: float = DEFAULT_FOCAL_GAMMA,
    alpha: float = DEFAULT_FOCAL_ALPHA,
) -> LossOutput:
    """Focal loss on sigmoid(scale * logit), averaged over V.

    p_t is the probability assigned to the true state of each concept and
    alpha_t is alpha for positives, 1 - alpha for negatives. gamma = 0 with
    alpha = 0.5 degenerates to 0.5 * bce_scaled on the same inputs.
    """
    if scale <= 0:
        raise UsageError("focal requires a positive scale")
    if gamma < 0:
        raise UsageError("focal gamma must be nonnegative")
    if not 0 < alpha < 1:
        raise UsageError("focal alpha must lie in (0, 1)")
    dtype = np.asarray(logits).dtype
    y_hat, y, single = _as_batch(logits, target)
    b, v = y_hat.shape
    sign = 2.0 * y - 1.0
    s_t = sign * (scale * y_hat)       # logit of the true state
    p_t = _sigmoid(s_t)
    one_minus = _sigmoid(-s_t)
    log_p_t = -_softplus(-s_t)
    alpha_t = np.where(y > 0, alpha, 1.0 - alpha)
    value = (alpha_t * one_minus**gamma * (-log_p_t)).sum() / (b * v)
    # d/ds_t [-alpha (1-p)^g log p] = alpha (1-p)^g (gamma p log p - (1-p))
    d_st = alpha_t * one_minus**gamma * (gamma * p_t * log_p_t - one_minus)
    d_s = d_st * sign / (b * v)
    d_logits = scale * d_s
    d_scale = float((d_s * y_hat).sum())
    return _finish(value, d_logits, d_scale, single, dtype)


LOSS_NAMES = ("bce", "contrastive", "focal")


def compute_loss(
    name: str, logits: np.ndarray, scale: float, target: np.ndarray
) -> Optional[LossOutput]:
    """Dispatch by loss-variant name with the published hyperparameters."""
    if name == "bce":
        return bce_scaled(logits, scale, target)
    if name == "contrastive":
        return contrastive_multilabel(logits, target)
    if name == "focal":
        return focal(logits, scale, target)
    raise UsageError(f"unknown loss variant {name!r}")
