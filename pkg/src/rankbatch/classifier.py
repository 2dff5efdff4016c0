"""The downstream MLP classifier: training, validation utility, margins.

A classifier is always trained from a fresh random initialization; the init
seed is derived from (run seed, hash of the labeled index set) so repeated
utility evaluations of the same set agree while different sets decorrelate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .datasets import Dataset, LabelGate
from .rng import Rng, _mix64


def index_set_hash(indices: np.ndarray) -> int:
    """Order-independent 64-bit hash of an index set."""
    h = np.uint64(0x243F6A8885A308D3)
    for i in np.sort(np.asarray(indices, dtype=np.uint64)):
        with np.errstate(over="ignore"):
            h = _mix64(np.uint64([h ^ (i + np.uint64(1))]))[0]
    return int(h)


@dataclass
class TrainReport:
    epochs_run: int
    final_train_accuracy: float
    val_accuracy: float
    seed: int


class MlpClassifier:
    """Two-hidden-layer MLP (64, 64) with softmax output."""

    def __init__(self, in_dim: int, num_classes: int, seed: int, hidden: tuple[int, int] = (64, 64)):
        rng = Rng(seed)
        h1, h2 = hidden
        self.num_classes = num_classes
        self.w1 = ad.Tensor(rng.normal((in_dim, h1)) * np.sqrt(2.0 / in_dim), requires_grad=True)
        self.b1 = ad.Tensor(np.zeros(h1), requires_grad=True)
        self.w2 = ad.Tensor(rng.normal((h1, h2)) * np.sqrt(2.0 / h1), requires_grad=True)
        self.b2 = ad.Tensor(np.zeros(h2), requires_grad=True)
        self.w3 = ad.Tensor(rng.normal((h2, num_classes)) * np.sqrt(2.0 / h2), requires_grad=True)
        self.b3 = ad.Tensor(np.zeros(num_classes), requires_grad=True)

    @property
    def params(self) -> list[ad.Tensor]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def logits(self, x: np.ndarray) -> ad.Tensor:
        h = ad.relu(ad.add(ad.matmul(ad.Tensor(x), self.w1), self.b1))
        h = ad.relu(ad.add(ad.matmul(h, self.w2), self.b2))
        return ad.add(ad.matmul(h, self.w3), self.b3)

    def penultimate(self, x: np.ndarray) -> np.ndarray:
        """Last hidden activation, used by CoreSet and BADGE."""
        h = np.maximum(x @ self.w1.data + self.b1.data, 0.0)
        return np.maximum(h @ self.w2.data + self.b2.data, 0.0)

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        z = self.penultimate(x) @ self.w3.data + self.b3.data
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.probabilities(x).argmax(axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(x) == y))


def _labels_for(indices: np.ndarray, dataset: Dataset, gate: LabelGate | None) -> np.ndarray:
    if gate is not None:
        return gate.labels(indices)
    return dataset.labels[np.asarray(indices, dtype=np.int64)]


def train(
    labeled_indices: np.ndarray,
    dataset: Dataset,
    seed: int,
    gate: LabelGate | None = None,
    val_indices: np.ndarray | None = None,
    max_epochs: int = 100,
    target_train_acc: float = 0.99,
    lr: float = 1e-3,
    batch_size: int = 32,
) -> tuple[MlpClassifier, TrainReport]:
    """Train until train accuracy exceeds 99% or 100 epochs, Adam lr 0.001."""
    labeled_indices = np.asarray(labeled_indices, dtype=np.int64)
    if len(labeled_indices) == 0:
        raise ValueError("cannot train on an empty labeled set")
    x = dataset.features[labeled_indices]
    y = _labels_for(labeled_indices, dataset, gate)

    init_seed = index_set_hash(labeled_indices) ^ int(_mix64(np.uint64([seed + 1]))[0])
    clf = MlpClassifier(dataset.feature_dim, dataset.num_classes, seed=init_seed)
    opt = ad.AdamState.for_params(clf.params, lr=lr)
    order_rng = Rng(init_seed ^ 0x5DEECE66D)

    n = len(x)
    epochs_run = 0
    train_acc = 0.0
    for epoch in range(max_epochs):
        perm = order_rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = perm[start : start + batch_size]
            loss = ad.cross_entropy(clf.logits(x[batch]), y[batch])
            ad.adam_step(clf.params, ad.grads_for(loss, clf.params), opt)
        epochs_run = epoch + 1
        train_acc = clf.accuracy(x, y)
        if train_acc > target_train_acc:
            break

    val_acc = 0.0
    if val_indices is not None:
        val_acc = clf.accuracy(
            dataset.features[val_indices], _labels_for(val_indices, dataset, gate)
        )
    return clf, TrainReport(epochs_run, train_acc, val_acc, seed)


def utility(labeled_indices: np.ndarray, dataset: Dataset, split, seed: int, gate: LabelGate | None = None) -> float:
    """Validation accuracy of a classifier trained on the labeled set."""
    _, report = train(labeled_indices, dataset, seed, gate=gate, val_indices=split.val_idx)
    return report.val_accuracy


def margin_scores(classifier: MlpClassifier, indices: np.ndarray, dataset: Dataset) -> np.ndarray:
    """Top-1 minus top-2 predicted probability per point; small = uncertain."""
    probs = classifier.probabilities(dataset.features[np.asarray(indices, dtype=np.int64)])
    part = np.sort(probs, axis=1)
    return part[:, -1] - part[:, -2]
