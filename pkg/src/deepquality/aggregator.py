"""Image-level grading: pool each image's patch score vectors into a fixed
feature (mean probabilities, optionally plus per-class spread) and classify
with a small linear softmax model. Weights are shared across patch positions
because the number of selected patches varies per image.

The aggregator is fitted after the patch network is frozen; the two stages
are optimized separately.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .grades import NUM_GRADES, QualityGrade
from .imgio import ImageReadError, load_luminance
from .network import predict_batch
from .nn.loss import softmax
from .parallel import map_ordered
from .pooling import select_patches

log = logging.getLogger(__name__)

FEATURE_DIMS = (5, 10)


class LinearAggregator:
    def __init__(self, weights, bias):
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[0] != NUM_GRADES:
            raise ValueError(f"aggregator weights must be ({NUM_GRADES}, d), got {weights.shape}")
        if weights.shape[1] not in FEATURE_DIMS:
            raise ValueError(f"feature_dim must be one of {FEATURE_DIMS}, got {weights.shape[1]}")
        if bias.shape != (NUM_GRADES,):
            raise ValueError(f"aggregator bias must be ({NUM_GRADES},), got {bias.shape}")
        if not (np.isfinite(weights).all() and np.isfinite(bias).all()):
            raise ValueError("aggregator parameters contain non-finite values")
        self.weights = weights
        self.bias = bias

    @property
    def feature_dim(self):
        return self.weights.shape[1]


def image_features(patch_probs, include_std=False):
    """Symmetric pooling of patch score vectors.

    Mean of the per-patch probability vectors; with include_std, the
    per-class population standard deviation is appended (feature_dim 10).
    """
    probs = np.asarray(patch_probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != NUM_GRADES:
        raise ValueError(f"expected patch scores of shape (n, {NUM_GRADES}), got {probs.shape}")
    if probs.shape[0] == 0:
        raise ValueError("no patch scores to pool")
    mean = probs.mean(axis=0)
    if include_std:
        return np.concatenate([mean, probs.std(axis=0)])
    return mean


@dataclass
class AggregatorFit:
    aggregator: LinearAggregator
    converged: bool
    iterations: int
    grad_norm: float


def fit_aggregator(features, labels, learning_rate=0.5, max_iter=10_000,
                   tol=1e-6, l2=1e-6):
    """Multinomial logistic regression by full-batch gradient descent.

    Starts from zeros and iterates until the gradient norm drops under tol or
    the iteration cap is hit (reported via the converged flag). A small L2
    term keeps the optimum unique.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] not in FEATURE_DIMS:
        raise ValueError(f"features must be (M, d) with d in {FEATURE_DIMS}, got {x.shape}")
    if len(np.unique(y)) < 2:
        raise ValueError("aggregator fitting needs at least two distinct labels")
    m, d = x.shape
    onehot = np.zeros((m, NUM_GRADES))
    onehot[np.arange(m), y] = 1.0
    w = np.zeros((NUM_GRADES, d))
    b = np.zeros(NUM_GRADES)
    grad_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        residual = softmax(x @ w.T + b) - onehot
        gw = residual.T @ x / m + 2 * l2 * w
        gb = residual.mean(axis=0)
        grad_norm = float(np.sqrt((gw ** 2).sum() + (gb ** 2).sum()))
        if grad_norm < tol:
            break
        w -= learning_rate * gw
        b -= learning_rate * gb
    converged = grad_norm < tol
    if not converged:
        log.warning("aggregator fit hit the %d-iteration cap (grad norm %.2e)",
                    max_iter, grad_norm)
    return AggregatorFit(LinearAggregator(w, b), converged, it, grad_norm)


def predict_image(aggregator, patch_probs, include_std=None):
    """Image grade and probability vector from patch scores."""
    include_std = (aggregator.feature_dim == 10) if include_std is None else include_std
    feats = image_features(patch_probs, include_std)
    if feats.shape[0] != aggregator.feature_dim:
        raise ValueError(f"feature length {feats.shape[0]} does not match "
                         f"aggregator feature_dim {aggregator.feature_dim}")
    probs = softmax(aggregator.weights @ feats + aggregator.bias)
    return QualityGrade(int(np.argmax(probs))), probs


@dataclass
class ImageScore:
    record: object
    patch_probs: np.ndarray  # (n_patches, 5)
    shortfall: bool


def collect_image_scores(net, records, pooling_config, workers=None, ws=None):
    """Run the patch pipeline per record: load, pool, classify.

    Returns (scores, errors); unreadable images land in errors as
    (record, message) and are skipped. Image loading and patch selection fan
    out across workers; classification runs sequentially, so results do not
    depend on the worker count.
    """
    def pull(record):
        try:
            image = load_luminance(record.path)
            return select_patches(image, pooling_config)
        except (ImageReadError, ValueError, OSError) as e:
            return e

    pulled = map_ordered(pull, records, workers)
    scores, errors = [], []
    for record, selection in zip(records, pulled):
        if isinstance(selection, Exception):
            errors.append((record, str(selection)))
            continue
        patches = np.stack([s.patch for s in selection.patches])[:, None, :, :]
        probs, _ = predict_batch(net, patches, ws)
        scores.append(ImageScore(record, probs, selection.shortfall))
    return scores, errors


@dataclass
class ImageReportRow:
    image_id: str
    kind: str
    level: Optional[int]
    true_grade: int
    predicted_grade: int
    probabilities: np.ndarray
    expected_grade: float  # probability-weighted mean grade
    patch_count: int


@dataclass
class ImageEvalResult:
    accuracy: float
    confusion: np.ndarray
    rows: List[ImageReportRow]
    errors: list


def evaluate_images(aggregator, net, records, pooling_config, workers=None, ws=None):
    """Full per-image pipeline against graded records."""
    if any(r.grade is None for r in records):
        raise ValueError("records must be graded before image evaluation")
    scores, errors = collect_image_scores(net, records, pooling_config, workers, ws)
    if errors:
        log.warning("%d image(s) could not be evaluated", len(errors))
    confusion = np.zeros((NUM_GRADES, NUM_GRADES), dtype=np.int64)
    rows = []
    for s in scores:
        grade, probs = predict_image(aggregator, s.patch_probs)
        expected = float(np.arange(NUM_GRADES) @ probs)
        true = int(s.record.grade)
        confusion[true, int(grade)] += 1
        rows.append(ImageReportRow(
            image_id=s.record.image_id, kind=s.record.kind, level=s.record.level,
            true_grade=true, predicted_grade=int(grade), probabilities=probs,
            expected_grade=expected, patch_count=s.patch_probs.shape[0]))
    if not rows:
        raise ValueError("no images could be evaluated")
    accuracy = float(np.trace(confusion)) / len(rows)
    return ImageEvalResult(accuracy, confusion, rows, errors)
