"""Acquisition stage: margin-filtered, utility-scored batch selection.

Each step keeps the M most uncertain unlabeled points, partitions them at
random into size-b candidate batches, scores every candidate by the set
model applied to (current labeled set + batch), and queries the labels of
the winning batch. The set model is frozen throughout the stage; only the
margin-scoring classifier may be refreshed between steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import classifier as clf
from .config import ExperimentConfig
from .datasets import Dataset, LabelGate, PoolSplit
from .pretraining import PretrainTrace
from .rng import Rng
from .setmodel import SetEncoder


@dataclass
class PoolState:
    labeled: np.ndarray
    unlabeled: np.ndarray
    b: int
    M: int
    budget_used: int = 0


@dataclass
class StepRecord:
    iteration: int
    candidate_scores: list[float]
    chosen_indices: list[int]
    margin_threshold: float


def set_score_fn(encoder: SetEncoder, dataset: Dataset, use_ranknet: bool = True) -> Callable[[np.ndarray], float]:
    """Score a candidate labeled set by the frozen set model."""
    if use_ranknet:
        return lambda indices: encoder.score_set(dataset.features[indices])
    return lambda indices: encoder.predict_utility(dataset.features[indices])


def greedy_margin_step(
    score_fn: Callable[[np.ndarray], float],
    margin_classifier: clf.MlpClassifier,
    dataset: Dataset,
    state: PoolState,
    rng: Rng,
    gate: LabelGate | None = None,
    iteration: int = 0,
) -> tuple[PoolState, StepRecord]:
    """One filter-partition-argmax-query step; grows the labeled set by b."""
    pool = np.setdiff1d(state.unlabeled, state.labeled)
    if len(pool) < state.b:
        raise ValueError(f"pool exhausted: {len(pool)} points left, batch size {state.b}")
    if state.M < state.b:
        raise ValueError(f"M = {state.M} must be at least b = {state.b}")

    margins = clf.margin_scores(margin_classifier, pool, dataset)
    m = min(state.M, len(pool))
    keep = np.argsort(margins, kind="stable")[:m]
    filtered = pool[keep]
    threshold = float(margins[keep].max())

    num_batches = m // state.b
    perm = rng.permutation(m)
    candidates = [
        np.sort(filtered[perm[j * state.b : (j + 1) * state.b]]) for j in range(num_batches)
    ]
    scores = [score_fn(np.concatenate([state.labeled, batch])) for batch in candidates]
    best = int(np.argmax(scores))
    assert all(scores[best] >= s for s in scores)
    chosen = candidates[best]

    if gate is not None:
        gate.query(chosen)
    new_state = PoolState(
        labeled=np.sort(np.concatenate([state.labeled, chosen])),
        unlabeled=np.setdiff1d(state.unlabeled, chosen),
        b=state.b,
        M=state.M,
        budget_used=state.budget_used + len(chosen),
    )
    record = StepRecord(iteration, [float(s) for s in scores], chosen.tolist(), threshold)
    return new_state, record


def run_acquisition(
    encoder: SetEncoder,
    dataset: Dataset,
    split: PoolSplit,
    pretrain_trace: PretrainTrace | None,
    config: ExperimentConfig,
    budget: int,
    seed: int,
    gate: LabelGate | None = None,
    log_path: str | None = None,
) -> np.ndarray:
    """Run tau2 = B/b sequential steps; returns the final labeled set."""
    state = PoolState(
        labeled=np.sort(np.asarray(split.pretrain_idx, dtype=np.int64)),
        unlabeled=np.sort(np.asarray(split.unlabeled_idx, dtype=np.int64)),
        b=config.b,
        M=config.M,
    )
    score_fn = set_score_fn(encoder, dataset, use_ranknet=config.use_ranknet)
    rng = Rng(seed).split(0xAC01)
    records: list[StepRecord] = []

    margin_clf = None
    if config.margin_refresh == "frozen":
        margin_clf, _ = clf.train(state.labeled, dataset, seed, gate=gate)

    steps = config.tau2(budget)
    remaining = budget
    for j in range(steps):
        if config.margin_refresh != "frozen":
            margin_clf, _ = clf.train(state.labeled, dataset, seed, gate=gate)
        step_b = min(config.b, remaining)
        if step_b != state.b:
            state = PoolState(state.labeled, state.unlabeled, step_b, state.M, state.budget_used)
        state, record = greedy_margin_step(score_fn, margin_clf, dataset, state, rng, gate=gate, iteration=j)
        records.append(record)
        remaining -= step_b

    if log_path:
        with open(log_path, "w") as f:
            for r in records:
                f.write(json.dumps(vars(r)) + "\n")
    return state.labeled
