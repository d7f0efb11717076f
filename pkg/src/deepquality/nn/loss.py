"""Softmax cross-entropy data cost and the L2 penalty on dense weights."""

import numpy as np

from ..grades import NUM_GRADES


def softmax(logits):
    """Stable softmax along the last axis (max-subtraction before exp)."""
    logits = np.asarray(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Loss and logit gradient for one sample with an integer class label.

    loss = -log softmax(logits)[label]; grad = softmax(logits) - onehot.
    """
    logits = np.asarray(logits)
    if logits.ndim != 1:
        raise ValueError(f"expected a logits vector, got shape {logits.shape}")
    if not np.isfinite(logits).all():
        raise ValueError("logits contain non-finite values")
    label = int(label)
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    shifted = logits - logits.max()
    logsumexp = np.log(np.exp(shifted).sum())
    loss = logsumexp - shifted[label]
    grad = np.exp(shifted - logsumexp)
    grad[label] -= 1
    return float(loss), grad


def softmax_cross_entropy_batch(logits, labels):
    """Mean cross-entropy over a batch (N, K) with labels (N,).

    Returns (mean_loss, grad) where grad is d(mean_loss)/d(logits), i.e. the
    per-sample softmax-minus-onehot already divided by N.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels outside [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    losses = logsumexp - shifted[np.arange(n), labels]
    grad = np.exp(shifted - logsumexp[:, None])
    grad[np.arange(n), labels] -= 1
    grad /= n
    return float(losses.mean()), grad


def l2_penalty(dense_layers, lam):
    """lam * sum of squared dense weights (biases excluded).

    Returns (value, grads) with one gradient array (2*lam*W) per layer.
    """
    if lam < 0:
        raise ValueError(f"l2 lambda must be >= 0, got {lam}")
    value = 0.0
    grads = []
    for layer in dense_layers:
        w = layer.weights
        value += lam * float((w.astype(np.float64) ** 2).sum())
        grads.append(2 * lam * w)
    return value, grads


def predicted_grades(logits):
    """Argmax class per row; ties resolve to the lowest (best) grade index."""
    logits = np.asarray(logits)
    if logits.shape[-1] != NUM_GRADES:
        raise ValueError(f"expected {NUM_GRADES} logits per sample, got {logits.shape[-1]}")
    return np.argmax(logits, axis=-1)
