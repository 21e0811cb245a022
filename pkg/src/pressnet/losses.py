"""Softmax heads, cross-entropy, the combined two-task loss, and L2 penalty."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, LabelError, ShapeError


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"softmax expects [B,K] with K>=2, got {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean over the batch of -log p(true class). Labels are 0-based indices."""
    labels = np.asarray(labels)
    k = probs.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise LabelError(f"labels must lie in [0,{k}), got range "
                         f"[{labels.min()},{labels.max()}]")
    picked = probs[np.arange(probs.shape[0]), labels]
    # clip only guards log(0) from a fully-confident wrong head
    return float(-np.log(np.maximum(picked, np.finfo(probs.dtype).tiny)).mean())


def cross_entropy_grad_logits(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of mean cross-entropy w.r.t. the logits: (probs - onehot)/B."""
    labels = np.asarray(labels)
    g = probs.copy()
    g[np.arange(probs.shape[0]), labels] -= 1.0
    return g / probs.dtype.type(probs.shape[0])


def combined_loss(l_user: float, l_posture: float, lam: float) -> float:
    """Weighted two-task loss: lam * user + (1 - lam) * posture."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must be in [0,1], got {lam}")
    return lam * l_user + (1.0 - lam) * l_posture


def l2_penalty(weights, sigma: float) -> float:
    """sigma * sum(w^2) over the given weight tensors (biases excluded
    by the caller; gradient contribution is 2*sigma*w)."""
    return float(sigma * sum(float(np.sum(np.square(w, dtype=np.float64)))
                             for w in weights))
