"""Training losses: cross-entropy, five knowledge-consistency penalties, and
their weighted combination.

Every function takes the classifier's output probability distribution P (not
logits) together with the binary consistency mask over activities, and returns
the loss value plus its gradient with respect to P. The consistency penalties
come in five flavours:

==========  =================================================================
``All``     1 minus the total probability mass on context-consistent
            activities; pushes the whole distribution onto the consistent set.
``-PP``     1 - p_max when the top activity is consistent, p_max otherwise.
``01``      0 when the top activity is consistent, 1 otherwise. Its gradient
            is identically zero (the loss is piecewise constant), so under
            plain gradient descent it cannot move the parameters; it is kept
            for completeness and implemented literally.
``-P1``     1 - p_max when the top activity is consistent, a flat 1 otherwise.
``0P``      0 when the top activity is consistent, p_max otherwise.
==========  =================================================================

The argmax is treated as locally constant when differentiating, and argmax
ties break to the lowest index. All five penalties take values in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PROB_FLOOR",
    "SEMANTIC_TYPES",
    "LossConfig",
    "cross_entropy",
    "semantic_all",
    "semantic_minusprob_prob",
    "semantic_zero_one",
    "semantic_minusprob_one",
    "semantic_zero_prob",
    "combined_loss",
    "combined_loss_batch",
]

PROB_FLOOR = 1e-12

SEMANTIC_TYPES = ("none", "All", "-PP", "01", "-P1", "0P")


@dataclass(frozen=True)
class LossConfig:
    """Which consistency penalty to add to cross-entropy, and with what weight."""

    semantic_type: str = "none"
    alpha: float = 0.0

    def __post_init__(self):
        if self.semantic_type not in SEMANTIC_TYPES:
            raise ValueError(f"semantic_type must be one of {SEMANTIC_TYPES}, "
                             f"got {self.semantic_type!r}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")


def _as_mask(consistent, k: int) -> np.ndarray:
    mask = np.asarray(consistent, dtype=bool)
    if mask.shape != (k,):
        raise ValueError(f"consistency mask has shape {mask.shape}, expected ({k},)")
    return mask


def cross_entropy(probs: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Negative log-probability of the true activity, with a 1e-12 floor."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[0]:
        raise IndexError(f"label {label} out of range for {probs.shape[0]} activities")
    value = -np.log(probs[label] + PROB_FLOOR)
    grad = np.zeros_like(probs)
    grad[label] = -1.0 / (probs[label] + PROB_FLOOR)
    return float(value), grad


def semantic_all(probs: np.ndarray, consistent) -> tuple[float, np.ndarray]:
    """1 minus the probability mass assigned to context-consistent activities."""
    probs = np.asarray(probs, dtype=np.float64)
    mask = _as_mask(consistent, probs.shape[0])
    value = 1.0 - probs[mask].sum()
    grad = np.where(mask, -1.0, 0.0)
    return float(value), grad


def _top(probs: np.ndarray) -> int:
    # np.argmax already breaks ties toward the lowest index.
    return int(np.argmax(probs))


def semantic_minusprob_prob(probs, consistent) -> tuple[float, np.ndarray]:
    """1 - p_max if the top activity is consistent, else p_max."""
    probs = np.asarray(probs, dtype=np.float64)
    mask = _as_mask(consistent, probs.shape[0])
    top = _top(probs)
    grad = np.zeros_like(probs)
    if mask[top]:
        grad[top] = -1.0
        return float(1.0 - probs[top]), grad
    grad[top] = 1.0
    return float(probs[top]), grad


def semantic_zero_one(probs, consistent) -> tuple[float, np.ndarray]:
    """0 if the top activity is consistent, else 1; gradient identically zero."""
    probs = np.asarray(probs, dtype=np.float64)
    mask = _as_mask(consistent, probs.shape[0])
    value = 0.0 if mask[_top(probs)] else 1.0
    return value, np.zeros_like(probs)


def semantic_minusprob_one(probs, consistent) -> tuple[float, np.ndarray]:
    """1 - p_max if the top activity is consistent, else a flat 1."""
    probs = np.asarray(probs, dtype=np.float64)
    mask = _as_mask(consistent, probs.shape[0])
    top = _top(probs)
    grad = np.zeros_like(probs)
    if mask[top]:
        grad[top] = -1.0
        return float(1.0 - probs[top]), grad
    return 1.0, grad


def semantic_zero_prob(probs, consistent) -> tuple[float, np.ndarray]:
    """0 if the top activity is consistent, else p_max."""
    probs = np.asarray(probs, dtype=np.float64)
    mask = _as_mask(consistent, probs.shape[0])
    top = _top(probs)
    grad = np.zeros_like(probs)
    if mask[top]:
        return 0.0, grad
    grad[top] = 1.0
    return float(probs[top]), grad


SEMANTIC_FUNCTIONS = {
    "All": semantic_all,
    "-PP": semantic_minusprob_prob,
    "01": semantic_zero_one,
    "-P1": semantic_minusprob_one,
    "0P": semantic_zero_prob,
}


def combined_loss(probs, label: int, consistent, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Cross-entropy plus alpha times the configured consistency penalty.

    With ``semantic_type="none"`` (or alpha 0) this reduces exactly to
    cross-entropy and the consistency mask may be None.
    """
    value, grad = cross_entropy(probs, label)
    if cfg.semantic_type == "none" or cfg.alpha == 0.0:
        return value, grad
    sem_value, sem_grad = SEMANTIC_FUNCTIONS[cfg.semantic_type](probs, consistent)
    return value + cfg.alpha * sem_value, grad + cfg.alpha * sem_grad


def combined_loss_batch(probs: np.ndarray, labels: np.ndarray, consistent,
                        cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Vectorized combined loss over a batch; the batch value is the mean.

    probs is (n, k), labels (n,), consistent (n, k) or None when unused.
    Returns the mean loss and its gradient with respect to probs (already
    divided by the batch size).
    """
    probs = np.asarray(probs, dtype=np.float64)
    n, k = probs.shape
    labels = np.asarray(labels)
    rows = np.arange(n)

    p_true = probs[rows, labels] + PROB_FLOOR
    value = -np.log(p_true).sum()
    grad = np.zeros_like(probs)
    grad[rows, labels] = -1.0 / p_true

    if cfg.semantic_type != "none" and cfg.alpha > 0.0:
        mask = np.asarray(consistent, dtype=bool)
        if mask.shape != (n, k):
            raise ValueError(f"consistency mask has shape {mask.shape}, expected {(n, k)}")
        kind = cfg.semantic_type
        if kind == "All":
            value += cfg.alpha * (1.0 - np.where(mask, probs, 0.0).sum(axis=1)).sum()
            grad += cfg.alpha * np.where(mask, -1.0, 0.0)
        else:
            top = probs.argmax(axis=1)
            top_ok = mask[rows, top]
            p_top = probs[rows, top]
            if kind == "-PP":
                value += cfg.alpha * np.where(top_ok, 1.0 - p_top, p_top).sum()
                grad[rows, top] += cfg.alpha * np.where(top_ok, -1.0, 1.0)
            elif kind == "01":
                value += cfg.alpha * np.where(top_ok, 0.0, 1.0).sum()
            elif kind == "-P1":
                value += cfg.alpha * np.where(top_ok, 1.0 - p_top, 1.0).sum()
                grad[rows, top] += cfg.alpha * np.where(top_ok, -1.0, 0.0)
            elif kind == "0P":
                value += cfg.alpha * np.where(top_ok, 0.0, p_top).sum()
                grad[rows, top] += cfg.alpha * np.where(top_ok, 0.0, 1.0)

    return float(value) / n, grad / n
