"""Classical batch acquisition baselines: Random, Margin, CoreSet, BADGE-lite.

Every strategy consumes a frozen classifier and the unlabeled pool and
returns exactly B distinct pool indices, never touching labels.
"""

from __future__ import annotations

import numpy as np

from .classifier import MlpClassifier, margin_scores
from .datasets import Dataset
from .rng import Rng


def select_random(pool: np.ndarray, budget: int, rng: Rng) -> np.ndarray:
    pool = np.asarray(pool, dtype=np.int64)
    if len(pool) < budget:
        raise ValueError(f"pool of {len(pool)} cannot supply {budget} picks")
    return np.sort(rng.choice(pool, budget))


def select_margin(classifier: MlpClassifier, pool: np.ndarray, budget: int, dataset: Dataset) -> np.ndarray:
    """B lowest-margin pool points; ties broken by ascending index."""
    pool = np.asarray(pool, dtype=np.int64)
    if len(pool) < budget:
        raise ValueError(f"pool of {len(pool)} cannot supply {budget} picks")
    order = np.sort(pool)
    margins = margin_scores(classifier, order, dataset)
    return np.sort(order[np.argsort(margins, kind="stable")[:budget]])


def select_coreset(classifier: MlpClassifier, pool: np.ndarray, labeled: np.ndarray, budget: int, dataset: Dataset) -> np.ndarray:
    """Greedy k-center in penultimate-layer space, seeded by the labeled set."""
    pool = np.asarray(pool, dtype=np.int64)
    if len(pool) < budget:
        raise ValueError(f"pool of {len(pool)} cannot supply {budget} picks")
    pool_repr = classifier.penultimate(dataset.features[pool])
    labeled_repr = classifier.penultimate(dataset.features[np.asarray(labeled, dtype=np.int64)])

    min_dist = np.min(
        np.linalg.norm(pool_repr[:, None, :] - labeled_repr[None, :, :], axis=2), axis=1
    )
    chosen: list[int] = []
    for _ in range(budget):
        far = int(np.argmax(min_dist))
        chosen.append(far)
        d_new = np.linalg.norm(pool_repr - pool_repr[far], axis=1)
        min_dist = np.minimum(min_dist, d_new)
        min_dist[far] = -1.0  # never re-pick
    return np.sort(pool[chosen])


def gradient_embeddings(classifier: MlpClassifier, pool: np.ndarray, dataset: Dataset) -> np.ndarray:
    """Hallucinated-label gradient embedding per pool point:
    (softmax probs - one-hot pseudo-label) outer penultimate activations."""
    pool = np.asarray(pool, dtype=np.int64)
    x = dataset.features[pool]
    probs = classifier.probabilities(x)
    h = classifier.penultimate(x)
    pseudo = probs.argmax(axis=1)
    delta = probs.copy()
    delta[np.arange(len(pool)), pseudo] -= 1.0
    return (delta[:, :, None] * h[:, None, :]).reshape(len(pool), -1)


def kmeans_pp_seeding(points: np.ndarray, budget: int, rng: Rng) -> np.ndarray:
    """k-means++ D^2 seeding: first pick uniform, then proportional to the
    squared distance to the nearest already-chosen point."""
    n = len(points)
    chosen = [int(rng.integers(0, n)[0])]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(budget - 1):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a center: fall back to uniform
            remaining = np.setdiff1d(np.arange(n), np.array(chosen))
            pick = int(rng.choice(remaining, 1)[0])
        else:
            target = rng.uniform() * total
            pick = int(np.searchsorted(np.cumsum(d2), target))
            pick = min(pick, n - 1)
            if pick in chosen:  # boundary tie onto a zero-mass point
                remaining = np.setdiff1d(np.arange(n), np.array(chosen))
                pick = int(rng.choice(remaining, 1)[0])
        chosen.append(pick)
        d2 = np.minimum(d2, np.sum((points - points[pick]) ** 2, axis=1))
    return np.array(chosen, dtype=np.int64)


def select_badge_lite(classifier: MlpClassifier, pool: np.ndarray, budget: int, dataset: Dataset, rng: Rng) -> np.ndarray:
    """BADGE selection rule: k-means++ seeding in gradient-embedding space."""
    pool = np.asarray(pool, dtype=np.int64)
    if len(pool) < budget:
        raise ValueError(f"pool of {len(pool)} cannot supply {budget} picks")
    emb = gradient_embeddings(classifier, pool, dataset)
    picks = kmeans_pp_seeding(emb, budget, rng)
    return np.sort(pool[picks])
