"""Minibatch SGD for the toy classifier."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .model import Model, _as_f32, cross_entropy, softmax

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 0.3
    batch: int = 8
    seed: int = 0
    clip_norm: float | None = 1.0


@dataclass
class TrainReport:
    train_accuracy: float
    test_accuracy: float
    epoch_losses: list[float] = field(default_factory=list)


def accuracy(model: Model, x: np.ndarray, y: np.ndarray, batch: int = 256) -> float:
    if len(y) == 0:
        return float("nan")
    preds = np.concatenate([model.predict(x[i:i + batch]) for i in range(0, len(y), batch)])
    return float(np.mean(preds == y))


def train(model: Model, dataset: Dataset, config: TrainConfig = TrainConfig()) -> TrainReport:
    """Train ``model`` in place; identical seeds give identical parameters."""
    n = len(dataset.y_train)
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    params = {(i, name): arr for i, name, arr in model.parameters()}
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch):
            idx = order[start:start + config.batch]
            xb, yb = dataset.x_train[idx], dataset.y_train[idx]
            logits, caches = model.forward_cached(xb)
            p = softmax(logits)
            total += float(cross_entropy(p, yb).sum())
            dlogits = p
            dlogits[np.arange(len(yb)), yb] -= 1.0
            dlogits /= len(yb)
            _, grads = model.backward(caches, dlogits)
            scale = config.lr
            if config.clip_norm is not None:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > config.clip_norm:
                    scale *= config.clip_norm / norm
            for key, g in grads.items():
                params[key] -= scale * g
        losses.append(total / n)
        log.debug("epoch %d loss %.4f", epoch, losses[-1])
    for arr in params.values():
        arr[...] = _as_f32(arr)
    return TrainReport(
        accuracy(model, dataset.x_train, dataset.y_train),
        accuracy(model, dataset.x_test, dataset.y_test),
        losses,
    )
