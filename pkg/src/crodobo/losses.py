"""Loss terms of the adaptation objective.

Each ``*_terms`` function takes softmax outputs and returns ``(value, grad)``
where ``grad`` is the gradient of the value with respect to the *logits*
that produced those probabilities, so it can be fed straight into
:func:`crodobo.net.backward`.

The thin wrappers (:func:`source_loss`, :func:`exchange_loss`, ...) run a
train-mode forward/backward on a network and return ``(value, grads)``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import xlogy

from crodobo.net import Network, backward, forward


class LossError(ValueError):
    pass


def _softmax_vjp(probs, g):
    # d/dz of sum_c g_c p_c for p = softmax(z)
    return probs * (g - (probs * g).sum(axis=1, keepdims=True))


def _check_labels(labels, num_classes):
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise LossError("labels must be a 1-D integer array")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LossError(f"label out of range [0, {num_classes})")
    return labels


def argmax_rows(probs) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    return np.argmax(probs, axis=1)


def cross_entropy_terms(probs, labels):
    """Mean cross-entropy ``-(1/B) sum_b log p[b, y_b]``."""
    probs = np.asarray(probs)
    labels = _check_labels(labels, probs.shape[1])
    b = probs.shape[0]
    rows = np.arange(b)
    value = -np.log(probs[rows, labels]).sum() / b
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return float(value), grad / b


def pseudo_labels(probs, tau: float):
    """Hard labels and confidence mask ``max_c p >= tau``."""
    if not 0 < tau <= 1:
        raise LossError(f"tau must lie in (0, 1], got {tau}")
    probs = np.asarray(probs)
    return argmax_rows(probs), probs.max(axis=1) >= tau


def exchange_terms(student_probs, teacher_probs, tau: float):
    """Masked cross-entropy of the student against the teacher's hard labels.

    The mean is over the full batch (masked rows count in the denominator).
    Teacher probabilities are treated as constants.
    """
    student_probs = np.asarray(student_probs)
    teacher_probs = np.asarray(teacher_probs)
    if student_probs.shape != teacher_probs.shape:
        raise LossError(
            f"student/teacher batch mismatch: {student_probs.shape} vs "
            f"{teacher_probs.shape}")
    b = student_probs.shape[0]
    labels, mask = pseudo_labels(teacher_probs, tau)
    grad = np.zeros_like(student_probs)
    if not mask.any():
        return 0.0, grad, mask
    rows = np.flatnonzero(mask)
    value = -np.log(student_probs[rows, labels[rows]]).sum() / b
    grad[rows] = student_probs[rows]
    grad[rows, labels[rows]] -= 1.0
    return float(value), grad / b, mask


def entropy_terms(probs):
    """Mean per-row Shannon entropy (0 log 0 taken as 0)."""
    probs = np.asarray(probs)
    b = probs.shape[0]
    plogp = xlogy(probs, probs)
    row_h = -plogp.sum(axis=1)
    # dH/dp = -(log p + 1); the constant cancels through the softmax
    logp = np.where(probs > 0, np.log(np.where(probs > 0, probs, 1.0)), 0.0)
    grad = _softmax_vjp(probs, -logp) / b
    return float(row_h.sum() / b), grad


def diversity_terms(probs):
    """Negative entropy of the batch-mean prediction, ``sum_c pbar_c log pbar_c``."""
    probs = np.asarray(probs)
    b = probs.shape[0]
    pbar = probs.mean(axis=0)
    value = xlogy(pbar, pbar).sum()
    logpbar = np.where(pbar > 0, np.log(np.where(pbar > 0, pbar, 1.0)), 0.0)
    grad = _softmax_vjp(probs, np.broadcast_to(logpbar, probs.shape)) / b
    return float(value), grad


# -- network-level wrappers ----------------------------------------------------

def source_loss(net: Network, features, labels):
    probs, cache = forward(net, features, "train")
    value, g = cross_entropy_terms(probs, labels)
    return value, backward(net, cache, g)


def exchange_loss(student: Network, teacher_probs, strong_view, tau: float):
    probs, cache = forward(student, strong_view, "train")
    value, g, _ = exchange_terms(probs, teacher_probs, tau)
    return value, backward(student, cache, g)


def entropy_loss(net: Network, features):
    probs, cache = forward(net, features, "train")
    value, g = entropy_terms(probs)
    return value, backward(net, cache, g)


def diversity_loss(net: Network, features):
    probs, cache = forward(net, features, "train")
    value, g = diversity_terms(probs)
    return value, backward(net, cache, g)
