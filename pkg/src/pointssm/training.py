"""Training loop pieces: loss, optimizer, schedule, datasets, fit/evaluate.

Everything is deterministic under a fixed seed: dataset generation, batch
shuffling, parameter init and branch dropping all draw from generators
derived from the run seed, so two runs with the same configuration produce
byte-identical metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, backward
from .geometry import PointCloud
from .model import (ModelConfig, PointCloudClassifier, PreparedBatch,
                    prepare_clouds, collate_prepared)
from .data_io import generate_synthetic, SYNTHETIC_CLASSES


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log likelihood from raw logits, shape (B, num_classes)."""
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    log_z = T.log(T.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return T.neg((log_probs * Tensor(onehot)).sum()) / len(labels)


class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 5e-4,
                 weight_decay: float = 0.05, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params}
        self.v = {name: np.zeros_like(t.data) for name, t in params}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            # decoupled decay: applied to the raw parameter, not the gradient
            p.data = p.data - lr * (update + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def cosine_lr(epoch: int, base_lr: float, warmup_epochs: int, total_epochs: int,
              min_lr: float = 1e-6) -> float:
    """Linear warmup to base_lr, then a cosine decay toward min_lr."""
    if warmup_epochs > 0 and epoch < warmup_epochs:
        return base_lr * (epoch + 1) / warmup_epochs
    span = max(total_epochs - warmup_epochs, 1)
    progress = min((epoch - warmup_epochs) / span, 1.0)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + np.cos(np.pi * progress))


def train_step(model: PointCloudClassifier, optimizer: AdamW,
               prepared: PreparedBatch, labels: np.ndarray, lr: float,
               rng: np.random.Generator | None = None) -> tuple[float, np.ndarray]:
    """One gradient step; returns (loss value, predicted labels)."""
    optimizer.zero_grad()
    logits = model.forward_batch(prepared, training=True, rng=rng)
    loss = cross_entropy(logits, labels)
    backward(loss)
    optimizer.step(lr)
    return loss.item(), logits.data.argmax(axis=1)


# ---- datasets ------------------------------------------------------------------------


@dataclass
class PreparedDataset:
    """Clouds plus per-cloud geometry, computed lazily once; the geometry
    carries no parameters, so it never changes across epochs."""

    clouds: list[PointCloud]
    labels: np.ndarray
    _prepared: list[PreparedBatch] | None = None

    def __len__(self) -> int:
        return len(self.clouds)

    def prepared(self, config: ModelConfig) -> list[PreparedBatch]:
        if self._prepared is None:
            self._prepared = [prepare_clouds([c], config) for c in self.clouds]
        return self._prepared


def synthetic_dataset(per_class: int, n_points: int, seed: int,
                      augment: bool) -> PreparedDataset:
    clouds = []
    labels = []
    for class_id in range(len(SYNTHETIC_CLASSES)):
        for index in range(per_class):
            sample_seed = np.random.SeedSequence((seed, class_id, index)
                                                 ).generate_state(1)[0]
            clouds.append(generate_synthetic(class_id, n_points, int(sample_seed),
                                             augment=augment))
            labels.append(class_id)
    return PreparedDataset(clouds=clouds, labels=np.asarray(labels, dtype=np.int64))


def prepare_batches(dataset: PreparedDataset, order: np.ndarray, batch_size: int,
                    config: ModelConfig) -> list[tuple[PreparedBatch, np.ndarray]]:
    singles = dataset.prepared(config)
    out = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        prepared = collate_prepared([singles[i] for i in idx])
        out.append((prepared, dataset.labels[idx]))
    return out


def evaluate(model: PointCloudClassifier, batches) -> tuple[float, np.ndarray]:
    """Overall accuracy and the confusion matrix (rows true, cols predicted)."""
    n_cls = model.config.num_classes
    confusion = np.zeros((n_cls, n_cls), dtype=np.int64)
    for prepared, labels in batches:
        with T.no_grad():
            logits = model.forward_batch(prepared)
        pred = logits.data.argmax(axis=1)
        for t_label, p_label in zip(labels, pred):
            confusion[t_label, p_label] += 1
    total = confusion.sum()
    return float(np.trace(confusion)) / float(total), confusion


@dataclass
class FitResult:
    rows: list[dict]
    final_test_acc: float


def fit(model: PointCloudClassifier, train_set: PreparedDataset,
        test_set: PreparedDataset, epochs: int, batch_size: int, lr: float,
        weight_decay: float, warmup_epochs: int, seed: int,
        log=None) -> FitResult:
    """Full training run; returns one metrics row per epoch."""
    optimizer = AdamW(model.named_params(), lr=lr, weight_decay=weight_decay)
    shuffle_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((seed, 0xBA7C)).generate_state(1)[0]))
    drop_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((seed, 0xD209)).generate_state(1)[0]))
    test_batches = prepare_batches(test_set, np.arange(len(test_set)), batch_size,
                                   model.config)
    rows = []
    test_acc = 0.0
    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(train_set))
        batches = prepare_batches(train_set, order, batch_size, model.config)
        epoch_lr = cosine_lr(epoch, lr, warmup_epochs, epochs)
        losses = []
        correct = 0
        for prepared, labels in batches:
            loss, pred = train_step(model, optimizer, prepared, labels, epoch_lr,
                                    drop_rng)
            losses.append(loss * len(labels))
            correct += int((pred == labels).sum())
        train_loss = float(np.sum(losses)) / len(train_set)
        train_acc = correct / len(train_set)
        test_acc, _ = evaluate(model, test_batches)
        row = {"epoch": epoch, "train_loss": train_loss, "train_acc": train_acc,
               "test_acc": test_acc, "lr": epoch_lr}
        rows.append(row)
        if log is not None:
            log(row)
    return FitResult(rows=rows, final_test_acc=test_acc)
