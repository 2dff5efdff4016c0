"""Pretraining stage: prefix retraining, sample augmentation, bilevel fit.

The initial labeled pool is split into a seed set and tau1 chunks of size
b. Each iteration grows the prefix by one chunk, retrains the classifier to
get a fresh validation accuracy, manufactures interpolated utility samples
from the two consecutive accuracies, and refits the set model on the
accumulated store with the regularizer strength chosen by a small bilevel
grid search: fit on short samples, select on long ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import classifier as clf
from .config import ExperimentConfig
from .datasets import Dataset, LabelGate, PoolSplit
from .ot import median_pairwise_cost, ot_target, squared_cost
from .rng import Rng
from .setmodel import (
    RankPair,
    SetEncoder,
    UtilitySample,
    load_checkpoint,
    preference_target,
    total_loss,
    regression_loss,
    train_epoch,
    train_epoch_regression,
)


@dataclass
class PretrainTrace:
    prefixes: list[np.ndarray] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    embeddings: list[np.ndarray] = field(default_factory=list)  # set-model embedding per prefix
    chosen_lambdas: list[float] = field(default_factory=list)
    interpolation_audit: list[tuple[float, float]] = field(default_factory=list)


class SampleStore:
    """Accumulated utility samples with the median-length train/val split."""

    def __init__(self):
        self.samples: list[UtilitySample] = []

    def __len__(self) -> int:
        return len(self.samples)

    def add(self, sample: UtilitySample) -> None:
        self.samples.append(sample)

    def partition(self) -> tuple[list[UtilitySample], list[UtilitySample]]:
        """Short samples (length <= median) train; long ones validate."""
        if not self.samples:
            return [], []
        lengths = sorted(s.length for s in self.samples)
        median = lengths[(len(lengths) - 1) // 2]
        train = [s for s in self.samples if s.length <= median]
        val = [s for s in self.samples if s.length > median]
        return train, val

    def save_jsonl(self, path: str) -> None:
        with open(path, "w") as f:
            for s in self.samples:
                f.write(
                    json.dumps(
                        {
                            "indices": s.indices.tolist(),
                            "utility": s.utility,
                            "ot_target": s.ot_target,
                            "provenance": s.provenance,
                            "iteration": s.iteration,
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load_jsonl(cls, path: str) -> "SampleStore":
        store = cls()
        with open(path) as f:
            for line in f:
                rec = json.loads(line)
                store.add(UtilitySample(**rec))
        return store


@dataclass
class BilevelState:
    grid: list[float]
    inner_epochs: int = 20
    chosen_lambda: float = 0.0
    outer_losses: dict[float, float] = field(default_factory=dict)


# -- sampling and augmentation ---------------------------------------------


def sample_pair(labeled: np.ndarray, b: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Two independent equal-size uniform subsets of the labeled prefix."""
    labeled = np.asarray(labeled, dtype=np.int64)
    if len(labeled) < 2:
        raise ValueError("need at least 2 labeled points to sample a pair")
    lo = min(max(2, b), len(labeled))
    hi = len(labeled)
    size = lo if lo == hi else int(rng.integers(lo, hi + 1)[0])
    xi1 = np.sort(rng.choice(labeled, size))
    xi2 = np.sort(rng.choice(labeled, size))
    return xi1, xi2


def interpolate_utility(d_prev: float, d_next: float, acc_prev: float, acc_next: float) -> tuple[float, float]:
    """Distance-weighted blend of consecutive accuracies; returns (alpha, u).

    alpha = d_next / (d_next + d_prev); the 0/0 case is defined as 0.5.
    """
    denom = d_next + d_prev
    alpha = 0.5 if denom == 0.0 else d_next / denom
    return alpha, alpha * acc_prev + (1.0 - alpha) * acc_next


def _embedding_distance(encoder: SetEncoder, subset: np.ndarray, prefix_embedding: np.ndarray, dataset: Dataset) -> float:
    e = encoder.embed(dataset.features[subset])
    return float(np.linalg.norm(e - prefix_embedding))


def augment_samples(
    prev_prefix: np.ndarray,
    next_prefix: np.ndarray,
    n: int,
    acc_prev: float,
    acc_next: float,
    store: SampleStore,
    encoder: SetEncoder,
    dataset: Dataset,
    ot_val_features: np.ndarray,
    ot_normalizer: float,
    b: int,
    rng: Rng,
    iteration: int,
    ot_epsilon: float = 0.0,
    ot_max_iterations: int = 1000,
) -> SampleStore:
    """Append n interpolated sample pairs drawn from the previous prefix."""
    if n < 1:
        raise ValueError("n must be at least 1")
    emb_prev = encoder.embed(dataset.features[np.asarray(prev_prefix, dtype=np.int64)])
    emb_next = encoder.embed(dataset.features[np.asarray(next_prefix, dtype=np.int64)])
    for _ in range(n):
        xi1, xi2 = sample_pair(prev_prefix, b, rng)
        for xi in (xi1, xi2):
            d_prev = _embedding_distance(encoder, xi, emb_prev, dataset)
            d_next = _embedding_distance(encoder, xi, emb_next, dataset)
            _, u = interpolate_utility(d_prev, d_next, acc_prev, acc_next)
            target = ot_target(
                dataset.features[xi],
                ot_val_features,
                ot_normalizer,
                epsilon=ot_epsilon,
                max_iterations=ot_max_iterations,
            )
            store.add(
                UtilitySample(
                    indices=xi,
                    utility=min(max(u, 0.0), 1.0),
                    ot_target=target,
                    provenance="interpolated",
                    iteration=iteration,
                )
            )
    return store


def build_rank_pairs(samples: list[UtilitySample], num_pairs: int, rng: Rng) -> list[RankPair]:
    """Uniform draws from the set of equal-length sample pairs."""
    by_length: dict[int, list[UtilitySample]] = {}
    for s in samples:
        by_length.setdefault(s.length, []).append(s)
    groups = [g for g in by_length.values() if len(g) >= 2]
    if not groups:
        raise ValueError(f"no equal-length pair exists; available lengths: {sorted(by_length)}")
    counts = np.array([len(g) * (len(g) - 1) // 2 for g in groups], dtype=np.float64)
    probs = np.cumsum(counts / counts.sum())
    pairs = []
    for _ in range(num_pairs):
        g = groups[int(np.searchsorted(probs, rng.uniform()))]
        i, j = rng.permutation(len(g))[:2]
        a, b_ = g[int(i)], g[int(j)]
        pairs.append(RankPair(a, b_, preference_target(a.utility, b_.utility)))
    return pairs


# -- bilevel fitting -------------------------------------------------------


def fit_encoder(
    encoder: SetEncoder,
    samples: list[UtilitySample],
    dataset: Dataset,
    epochs: int,
    seed: int,
    lambda_ot: float,
    l2: float = 0.0,
    use_ranknet: bool = True,
) -> SetEncoder:
    """Train a clone of the encoder on the given samples; the shared inner
    routine of both single-level and bilevel training."""
    out = encoder.clone()
    opt = ad.AdamState.for_params(out.params, lr=1e-3)
    rng = Rng(seed)
    if use_ranknet:
        pairs = build_rank_pairs(samples, num_pairs=max(2 * len(samples), 8), rng=rng.split(1))
        for _ in range(epochs):
            train_epoch(out, pairs, dataset, opt, rng.split(2), lambda_ot=lambda_ot, l2=l2)
    else:
        for _ in range(epochs):
            train_epoch_regression(out, samples, dataset, opt, rng.split(2), lambda_ot=lambda_ot, l2=l2)
    return out


def outer_loss(
    encoder: SetEncoder,
    samples: list[UtilitySample],
    dataset: Dataset,
    seed: int,
    lambda_ot: float,
    use_ranknet: bool = True,
) -> float:
    """Total loss summed over held-out (longer) samples; no gradients."""
    if use_ranknet:
        pairs = build_rank_pairs(samples, num_pairs=max(2 * len(samples), 8), rng=Rng(seed))
        return float(sum(total_loss(p, encoder, dataset, lambda_ot).item() for p in pairs))
    return float(sum(regression_loss(s, encoder, dataset, lambda_ot).item() for s in samples))


def bilevel_train(
    store: SampleStore,
    encoder: SetEncoder,
    state: BilevelState,
    dataset: Dataset,
    seed: int,
    lambda_ot: float,
    use_ranknet: bool = True,
) -> tuple[SetEncoder, float]:
    """Grid search over regularizer strength: refit on short samples per
    candidate, keep the candidate with the lowest loss on long samples."""
    if len(store) == 0:
        raise ValueError("cannot train on an empty sample store")
    d_tr, d_val = store.partition()

    def trainable(samples):
        if not samples:
            return False
        if not use_ranknet:
            return True
        lengths = [s.length for s in samples]
        return any(lengths.count(l) >= 2 for l in set(lengths))

    if not trainable(d_tr) or not trainable(d_val):
        # degenerate partition: single-level training on the whole store
        best = fit_encoder(encoder, store.samples, dataset, state.inner_epochs, seed, lambda_ot, l2=0.0, use_ranknet=use_ranknet)
        state.chosen_lambda = 0.0
        state.outer_losses = {}
        return best, 0.0

    best_encoder = None
    best_lambda = 0.0
    best_outer = math.inf
    state.outer_losses = {}
    for lam in state.grid:
        candidate = fit_encoder(encoder, d_tr, dataset, state.inner_epochs, seed, lambda_ot, l2=lam, use_ranknet=use_ranknet)
        e = outer_loss(candidate, d_val, dataset, seed ^ 0xBEEF, lambda_ot, use_ranknet=use_ranknet)
        state.outer_losses[lam] = e
        if e < best_outer:
            best_outer, best_encoder, best_lambda = e, candidate, lam
    assert all(best_outer <= v for v in state.outer_losses.values())
    state.chosen_lambda = best_lambda
    return best_encoder, best_lambda


# -- the full pretraining stage --------------------------------------------


def run_pretraining(
    dataset: Dataset,
    split: PoolSplit,
    config: ExperimentConfig,
    seed: int,
    gate: LabelGate | None = None,
) -> tuple[PretrainTrace, SampleStore, SetEncoder]:
    """Iterate prefix growth, augmentation, and set-model refits."""
    k = len(split.pretrain_idx)
    if config.k1 + config.tau1 * config.b != k:
        raise ValueError(f"k1 + tau1*b = {config.k1 + config.tau1 * config.b} != |pretrain| = {k}")
    rng = Rng(seed)
    perm = rng.split(1).permutation(k)
    shuffled = split.pretrain_idx[perm]
    seed_set = np.sort(shuffled[: config.k1])
    chunks = [
        np.sort(shuffled[config.k1 + i * config.b : config.k1 + (i + 1) * config.b])
        for i in range(config.tau1)
    ]

    if config.init_mode == "random":
        encoder = SetEncoder(dataset.feature_dim, seed=int(rng.split(2).uniform() * 2**31))
    else:
        encoder = load_checkpoint(config.init_mode)
    encoder.weights.lambda1 = config.lambda1
    encoder.weights.lambda2 = config.lambda2
    encoder.weights.lambda3 = config.lambda3
    encoder.weights.lambda_ot = config.effective_lambda_ot

    val_features = dataset.features[split.val_idx]
    if config.ot_val_subsample and config.ot_val_subsample < len(val_features):
        sub = rng.split(3).choice(np.arange(len(val_features)), config.ot_val_subsample)
        val_features = val_features[np.sort(sub)]
    ot_normalizer = median_pairwise_cost(val_features)
    ot_eps = config.ot_epsilon_scale * float(np.median(squared_cost(val_features, val_features)))

    trace = PretrainTrace()
    store = SampleStore()
    state = BilevelState(grid=config.effective_grid, inner_epochs=config.inner_epochs)

    prefix = seed_set
    _, report = clf.train(prefix, dataset, seed, gate=gate, val_indices=split.val_idx)
    trace.prefixes.append(prefix)
    trace.accuracies.append(report.val_accuracy)
    trace.embeddings.append(encoder.embed(dataset.features[prefix]))
    _add_ground_truth(store, prefix, report.val_accuracy, dataset, val_features, ot_normalizer, ot_eps, config, 0)

    aug_rng = rng.split(4)
    for i in range(config.tau1):
        next_prefix = np.sort(np.concatenate([prefix, chunks[i]]))
        _, report = clf.train(next_prefix, dataset, seed, gate=gate, val_indices=split.val_idx)
        acc_prev, acc_next = trace.accuracies[-1], report.val_accuracy
        augment_samples(
            prefix, next_prefix, config.n, acc_prev, acc_next, store, encoder, dataset,
            val_features, ot_normalizer, config.b, aug_rng, iteration=i + 1,
            ot_epsilon=ot_eps, ot_max_iterations=config.ot_max_iterations,
        )
        _add_ground_truth(store, next_prefix, acc_next, dataset, val_features, ot_normalizer, ot_eps, config, i + 1)
        if config.audit_fraction > 0:
            _audit_interpolation(store, dataset, split, seed, gate, config, trace, aug_rng)
        encoder, lam = bilevel_train(
            store, encoder, state, dataset, seed=seed + i, lambda_ot=config.effective_lambda_ot,
            use_ranknet=config.use_ranknet,
        )
        trace.chosen_lambdas.append(lam)
        trace.prefixes.append(next_prefix)
        trace.accuracies.append(acc_next)
        trace.embeddings.append(encoder.embed(dataset.features[next_prefix]))
        prefix = next_prefix

    return trace, store, encoder


def _add_ground_truth(store, indices, accuracy, dataset, val_features, normalizer, eps, config, iteration):
    store.add(
        UtilitySample(
            indices=np.asarray(indices, dtype=np.int64),
            utility=accuracy,
            ot_target=ot_target(
                dataset.features[np.asarray(indices, dtype=np.int64)],
                val_features,
                normalizer,
                epsilon=eps,
                max_iterations=config.ot_max_iterations,
            ),
            provenance="ground_truth",
            iteration=iteration,
        )
    )


def _audit_interpolation(store, dataset, split, seed, gate, config, trace, rng):
    """Re-evaluate a few interpolated utilities by real retraining; diagnostics only."""
    interpolated = [s for s in store.samples if s.provenance == "interpolated" and s.iteration == max(x.iteration for x in store.samples)]
    n_audit = max(1, int(config.audit_fraction * len(interpolated)))
    for s in interpolated[:n_audit]:
        true_u = clf.utility(s.indices, dataset, split, seed, gate=gate)
        trace.interpolation_audit.append((s.utility, true_u))
