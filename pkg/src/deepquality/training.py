"""Mini-batch SGD on the patch classifier: softmax cross-entropy data cost
plus an L2 penalty on the two dense layers' weights. Shuffling is seeded per
epoch, so a (seed, config, data, precision) tuple pins the whole metric
trace.
"""

import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .grades import NUM_GRADES
from .network import DeepQualityNet
from .nn.gradcheck import (DEFAULT_EPS, DEFAULT_TOLERANCE, GradcheckReport,
                           check_gradients)
from .nn.layers import Workspace
from .nn.loss import l2_penalty, softmax_cross_entropy_batch
from .nn.optim import sgd_step

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-2
    lr_decay: float = 0.5
    lr_decay_every: int = 30
    l2_lambda: float = 1e-4
    momentum: float = 0.0
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.l2_lambda < 0:
            raise ValueError(f"l2_lambda must be >= 0, got {self.l2_lambda}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")

    def lr_at(self, epoch):
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_decay_every)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_accuracy: float
    wall_seconds: float

    def as_dict(self):
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "train_accuracy": self.train_accuracy,
                "test_accuracy": self.test_accuracy,
                "wall_seconds": self.wall_seconds}


@dataclass
class TrainResult:
    net: DeepQualityNet
    best_net: DeepQualityNet
    best_epoch: int
    metrics: List[EpochMetrics] = field(default_factory=list)


@dataclass
class PatchEvalResult:
    accuracy: float
    confusion: np.ndarray  # rows = true grade, cols = predicted


class TrainingDivergedError(Exception):
    def __init__(self, epoch, batch, last_good):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.last_good = last_good


def total_loss(net, patches, labels, l2_lambda, ws=None, return_logits=False):
    """Mean cross-entropy plus dense-weight L2; returns (loss, named grads).

    The penalty term touches only fc1/fc2 weight gradients; conv parameters
    and biases receive nothing from it.
    """
    patches = np.asarray(patches)
    labels = np.asarray(labels)
    if patches.shape[0] == 0:
        raise ValueError("empty batch")
    ws = ws or Workspace()
    logits, cache = net.forward_batch(patches, ws, keep=True)
    data_loss, grad_logits = softmax_cross_entropy_batch(logits, labels)
    grads = net.backward_batch(cache, grad_logits, ws)
    reg_value, reg_grads = l2_penalty((net.fc1, net.fc2), l2_lambda)
    grads["fc1.weights"] = grads["fc1.weights"] + reg_grads[0]
    grads["fc2.weights"] = grads["fc2.weights"] + reg_grads[1]
    loss = data_loss + reg_value
    if return_logits:
        return loss, grads, logits
    return loss, grads


def loss_value(net, patches, labels, l2_lambda, ws=None):
    """Forward-only loss (no gradients); used by finite differencing."""
    if patches.shape[0] == 0:
        raise ValueError("empty batch")
    logits = net.forward_batch(patches, ws)
    data_loss, _ = softmax_cross_entropy_batch(logits, labels)
    reg_value, _ = l2_penalty((net.fc1, net.fc2), l2_lambda)
    return data_loss + reg_value


def train(net, train_set, test_set, config, on_epoch=None):
    """Run the SGD schedule; returns the final net, the best-test checkpoint,
    and per-epoch metrics. Raises TrainingDivergedError (carrying the last
    epoch-start checkpoint) if the loss goes non-finite."""
    if len(train_set) == 0 or len(test_set) == 0:
        raise ValueError("train and test sets must be non-empty")
    dtype = PRECISIONS[config.precision]
    net = net.astype(dtype)
    params = net.parameters()
    velocity = None
    if config.momentum > 0:
        velocity = {k: np.zeros_like(v) for k, v in params.items()}
    ws = Workspace()
    metrics = []
    best_net, best_acc, best_epoch = net.copy(), -1.0, -1
    n = len(train_set)

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        last_good = net.copy()
        lr = config.lr_at(epoch)
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch]))
        perm = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            x = train_set.patches[idx].astype(dtype, copy=False)
            y = train_set.labels[idx]
            loss, grads, logits = total_loss(net, x, y, config.l2_lambda, ws,
                                             return_logits=True)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, bi, last_good)
            sgd_step(params, grads, lr, velocity, config.momentum)
            loss_sum += loss * len(idx)
            correct += int((np.argmax(logits, axis=1) == y).sum())
        test_acc = evaluate_patches(net, test_set, ws=ws).accuracy
        m = EpochMetrics(epoch=epoch + 1,
                         train_loss=loss_sum / n,
                         train_accuracy=correct / n,
                         test_accuracy=test_acc,
                         wall_seconds=time.perf_counter() - t0)
        metrics.append(m)
        if on_epoch:
            on_epoch(m)
        if test_acc > best_acc:
            best_net, best_acc, best_epoch = net.copy(), test_acc, epoch + 1
    return TrainResult(net=net, best_net=best_net, best_epoch=best_epoch,
                       metrics=metrics)


def evaluate_patches(net, dataset, batch_size=256, ws=None):
    """Accuracy and 5x5 confusion matrix (row = true, column = predicted)."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    ws = ws or Workspace()
    dtype = net.dtype
    confusion = np.zeros((NUM_GRADES, NUM_GRADES), dtype=np.int64)
    for start in range(0, len(dataset), batch_size):
        x = dataset.patches[start:start + batch_size].astype(dtype, copy=False)
        y = dataset.labels[start:start + batch_size]
        pred = np.argmax(net.forward_batch(x, ws), axis=1)
        np.add.at(confusion, (y, pred), 1)
    accuracy = float(np.trace(confusion)) / len(dataset)
    return PatchEvalResult(accuracy=accuracy, confusion=confusion)


def make_gradcheck_net(seed, config):
    """A float64 net posed at a generic point for finite differencing.

    Freshly initialized networks have zero biases, which parks ReLU
    pre-activations of dead regions exactly on the kink where one-sided
    numeric derivatives disagree with the subgradient convention. Small
    random bias offsets move the check to a differentiable neighborhood
    without touching what is being verified (the backward implementation).
    """
    from .network import init_network

    net = init_network(seed, config, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB1A5]))
    for name, p in net.parameters().items():
        if name.endswith("bias"):
            p += rng.uniform(-0.05, 0.05, size=p.shape)
    return net


def gradcheck_network(net, patches, labels, l2_lambda=1e-4, eps=DEFAULT_EPS,
                      tolerance=DEFAULT_TOLERANCE) -> GradcheckReport:
    """Verify every parameter group's analytic gradient of the training loss
    against central finite differences. Requires a float64 network and a
    small batch (finite differences evaluate the loss twice per parameter)."""
    if net.dtype != np.float64:
        raise ValueError("gradient checking requires a float64 network (use net.astype)")
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape[0] > 4:
        raise ValueError(f"gradcheck batch too large ({patches.shape[0]} > 4 patches)")
    ws = Workspace()
    _, analytic = total_loss(net, patches, labels, l2_lambda, ws)
    loss_fn = lambda: loss_value(net, patches, labels, l2_lambda, ws)
    return check_gradients(loss_fn, analytic, net.parameters(), eps, tolerance)
