"""The multitask set-based surrogate utility model.

A permutation-invariant encoder maps an index set to a latent embedding
(per-element MLP, mean pool, post-pool MLP ending in a sigmoid), from which
three scalar heads branch: a linear ranking score, an OT-distance regression
head, and a direct utility-regression head (used when the pairwise ranking
objective is ablated in favor of plain regression).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .datasets import Dataset
from .rng import Rng


@dataclass
class UtilitySample:
    indices: np.ndarray
    utility: float
    ot_target: float
    provenance: str = "ground_truth"  # or "interpolated"
    iteration: int = 0

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if len(self.indices) == 0:
            raise ValueError("utility sample needs a non-empty index set")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("utility sample contains duplicate indices")
        if not 0.0 <= self.utility <= 1.0:
            raise ValueError(f"utility {self.utility} outside [0, 1]")

    @property
    def length(self) -> int:
        return len(self.indices)


@dataclass
class RankPair:
    first: UtilitySample
    second: UtilitySample
    target: float  # desired preference probability, in {0, 0.5, 1}

    def __post_init__(self):
        if self.first.length != self.second.length:
            raise ValueError(
                f"rank pair sides must have equal size, got {self.first.length} and {self.second.length}"
            )


def preference_target(u1: float, u2: float) -> float:
    """1 if the first utility is larger, 0 if smaller, 0.5 on ties."""
    if u1 > u2:
        return 1.0
    if u1 < u2:
        return 0.0
    return 0.5


@dataclass
class LossWeights:
    lambda1: float = 0.5
    lambda2: float = 0.5
    lambda3: float = 1.0
    lambda_ot: float = 1.0


class SetEncoder:
    """All learnable parameters of the multitask set network."""

    PHI_HIDDEN = 64
    PHI_OUT = 64
    RHO_HIDDEN = 64
    EMBED_DIM = 32
    HEAD_HIDDEN = 16

    def __init__(self, in_dim: int, seed: int, weights: LossWeights | None = None):
        self.in_dim = in_dim
        self.weights = weights or LossWeights()
        rng = Rng(seed)

        def layer(fan_in, fan_out):
            w = ad.Tensor(rng.normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in), requires_grad=True)
            b = ad.Tensor(np.zeros(fan_out), requires_grad=True)
            return w, b

        self.phi_w1, self.phi_b1 = layer(in_dim, self.PHI_HIDDEN)
        self.phi_w2, self.phi_b2 = layer(self.PHI_HIDDEN, self.PHI_OUT)
        self.rho_w1, self.rho_b1 = layer(self.PHI_OUT, self.RHO_HIDDEN)
        self.rho_w2, self.rho_b2 = layer(self.RHO_HIDDEN, self.EMBED_DIM)
        self.rank_w, self.rank_b = layer(self.EMBED_DIM, 1)
        self.ot_w1, self.ot_b1 = layer(self.EMBED_DIM, self.HEAD_HIDDEN)
        self.ot_w2, self.ot_b2 = layer(self.HEAD_HIDDEN, 1)
        self.reg_w1, self.reg_b1 = layer(self.EMBED_DIM, self.HEAD_HIDDEN)
        self.reg_w2, self.reg_b2 = layer(self.HEAD_HIDDEN, 1)

    @property
    def params(self) -> list[ad.Tensor]:
        return [
            self.phi_w1, self.phi_b1, self.phi_w2, self.phi_b2,
            self.rho_w1, self.rho_b1, self.rho_w2, self.rho_b2,
            self.rank_w, self.rank_b,
            self.ot_w1, self.ot_b1, self.ot_w2, self.ot_b2,
            self.reg_w1, self.reg_b1, self.reg_w2, self.reg_b2,
        ]

    def clone(self) -> "SetEncoder":
        other = SetEncoder.__new__(SetEncoder)
        other.in_dim = self.in_dim
        other.weights = LossWeights(**vars(self.weights))
        for name in vars(self):
            value = getattr(self, name)
            if isinstance(value, ad.Tensor):
                setattr(other, name, ad.Tensor(value.data.copy(), requires_grad=True))
        return other

    # -- forward -----------------------------------------------------------

    def encode(self, features: np.ndarray) -> "EncodeResult":
        """Full differentiable forward pass on a (set_size, in_dim) matrix."""
        x = ad.Tensor(features)
        h = ad.relu(ad.add(ad.matmul(x, self.phi_w1), self.phi_b1))
        h = ad.relu(ad.add(ad.matmul(h, self.phi_w2), self.phi_b2))
        pooled = ad.reshape(ad.mean_pool(h), (1, self.PHI_OUT))
        r = ad.relu(ad.add(ad.matmul(pooled, self.rho_w1), self.rho_b1))
        embedding = ad.sigmoid(ad.add(ad.matmul(r, self.rho_w2), self.rho_b2))
        score = ad.add(ad.matmul(embedding, self.rank_w), self.rank_b)
        oh = ad.relu(ad.add(ad.matmul(embedding, self.ot_w1), self.ot_b1))
        ot_pred = ad.add(ad.matmul(oh, self.ot_w2), self.ot_b2)
        rh = ad.relu(ad.add(ad.matmul(embedding, self.reg_w1), self.reg_b1))
        reg_pred = ad.add(ad.matmul(rh, self.reg_w2), self.reg_b2)
        return EncodeResult(embedding, score, ot_pred, reg_pred)

    def embed(self, features: np.ndarray) -> np.ndarray:
        """Inference-only pooled embedding (no graph), for distances/scores."""
        h = np.maximum(features @ self.phi_w1.data + self.phi_b1.data, 0.0)
        h = np.maximum(h @ self.phi_w2.data + self.phi_b2.data, 0.0)
        pooled = h.mean(axis=0)
        r = np.maximum(pooled @ self.rho_w1.data + self.rho_b1.data, 0.0)
        z = r @ self.rho_w2.data + self.rho_b2.data
        return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def score_set(self, features: np.ndarray) -> float:
        e = self.embed(features)
        return float(e @ self.rank_w.data[:, 0] + self.rank_b.data[0])

    def predict_utility(self, features: np.ndarray) -> float:
        """Regression-head utility estimate, used when ranking is ablated."""
        e = self.embed(features)
        h = np.maximum(e @ self.reg_w1.data + self.reg_b1.data, 0.0)
        return float(h @ self.reg_w2.data[:, 0] + self.reg_b2.data[0])


@dataclass
class EncodeResult:
    embedding: ad.Tensor  # (1, EMBED_DIM)
    score: ad.Tensor  # (1, 1)
    ot_pred: ad.Tensor  # (1, 1)
    reg_pred: ad.Tensor  # (1, 1)


def encode_set(encoder: SetEncoder, indices: np.ndarray, dataset: Dataset) -> EncodeResult:
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        raise ValueError("cannot encode an empty set")
    return encoder.encode(dataset.features[indices])


# -- losses ----------------------------------------------------------------


def rank_probability(score1: float, score2: float) -> float:
    """P(first set ranks above second) = sigmoid of the score difference.

    Computed so that rank_probability(a, b) + rank_probability(b, a) == 1.0
    holds exactly in floating point.
    """
    if score1 < score2:
        return 1.0 - rank_probability(score2, score1)
    if score1 == score2:
        return 0.5
    return 1.0 / (1.0 + np.exp(score2 - score1))


def rank_loss_from_scores(score1: ad.Tensor, score2: ad.Tensor, target: float) -> ad.Tensor:
    diff = ad.sub(score1, score2)
    return ad.bce_logits(diff, ad.Tensor(np.full(diff.shape, target)))


def rank_loss(pair: RankPair, encoder: SetEncoder, dataset: Dataset) -> ad.Tensor:
    r1 = encode_set(encoder, pair.first.indices, dataset)
    r2 = encode_set(encoder, pair.second.indices, dataset)
    return rank_loss_from_scores(r1.score, r2.score, pair.target)


def ot_loss(
    ot_pred1: ad.Tensor,
    ot_pred2: ad.Tensor,
    ot_target1: float,
    ot_target2: float,
    lambda1: float,
    lambda2: float,
    lambda3: float,
) -> ad.Tensor:
    """Weighted squared errors on both predictions plus a positivity penalty."""
    if min(lambda1, lambda2, lambda3) < 0:
        raise ValueError("loss weights must be nonnegative")
    e1 = ad.mse(ot_pred1, ad.Tensor(np.full(ot_pred1.shape, ot_target1)))
    e2 = ad.mse(ot_pred2, ad.Tensor(np.full(ot_pred2.shape, ot_target2)))
    neg = ad.add(ad.tsum(ad.min_zero(ot_pred1)), ad.tsum(ad.min_zero(ot_pred2)))
    return ad.sub(ad.add(lambda1 * e1, lambda2 * e2), lambda3 * neg)


def total_loss(pair: RankPair, encoder: SetEncoder, dataset: Dataset, lambda_ot: float | None = None) -> ad.Tensor:
    """Ranking loss plus lambda_ot times the OT loss; OT skipped at 0."""
    w = encoder.weights
    if lambda_ot is None:
        lambda_ot = w.lambda_ot
    if lambda_ot < 0:
        raise ValueError("lambda_ot must be nonnegative")
    r1 = encode_set(encoder, pair.first.indices, dataset)
    r2 = encode_set(encoder, pair.second.indices, dataset)
    rank = rank_loss_from_scores(r1.score, r2.score, pair.target)
    if lambda_ot == 0.0:
        return rank
    ot = ot_loss(r1.ot_pred, r2.ot_pred, pair.first.ot_target, pair.second.ot_target, w.lambda1, w.lambda2, w.lambda3)
    return ad.add(rank, lambda_ot * ot)


def regression_loss(sample: UtilitySample, encoder: SetEncoder, dataset: Dataset, lambda_ot: float | None = None) -> ad.Tensor:
    """MSE of predicted vs true utility on a single sample (ranking ablated).

    The OT head stays multitask: its single-sample squared error and
    positivity penalty are added with the same weights as in the pair loss.
    """
    w = encoder.weights
    if lambda_ot is None:
        lambda_ot = w.lambda_ot
    r = encode_set(encoder, sample.indices, dataset)
    loss = ad.mse(r.reg_pred, ad.Tensor(np.full(r.reg_pred.shape, sample.utility)))
    if lambda_ot == 0.0:
        return loss
    e = ad.mse(r.ot_pred, ad.Tensor(np.full(r.ot_pred.shape, sample.ot_target)))
    neg = ad.tsum(ad.min_zero(r.ot_pred))
    return ad.add(loss, lambda_ot * ad.sub(w.lambda1 * e, w.lambda3 * neg))


def train_epoch(
    encoder: SetEncoder,
    pairs: list[RankPair],
    dataset: Dataset,
    optimizer: ad.AdamState,
    rng: Rng,
    lambda_ot: float | None = None,
    l2: float = 0.0,
    batch_size: int = 8,
) -> float:
    """One minibatched Adam pass over the rank pairs; returns the mean loss."""
    if not pairs:
        raise ValueError("no pairs to train on")
    order = rng.permutation(len(pairs))
    total = 0.0
    for start in range(0, len(pairs), batch_size):
        batch = order[start : start + batch_size]
        losses = [total_loss(pairs[i], encoder, dataset, lambda_ot) for i in batch]
        loss = losses[0] if len(losses) == 1 else (1.0 / len(losses)) * _sum_tensors(losses)
        if l2 > 0.0:
            loss = ad.add(loss, l2 * _param_norm_sq(encoder))
        ad.adam_step(encoder.params, ad.grads_for(loss, encoder.params), optimizer)
        total += float(np.mean([l.data for l in losses]))
    return total / ((len(pairs) + batch_size - 1) // batch_size)


def train_epoch_regression(
    encoder: SetEncoder,
    samples: list[UtilitySample],
    dataset: Dataset,
    optimizer: ad.AdamState,
    rng: Rng,
    lambda_ot: float | None = None,
    l2: float = 0.0,
    batch_size: int = 8,
) -> float:
    if not samples:
        raise ValueError("no samples to train on")
    order = rng.permutation(len(samples))
    total = 0.0
    for start in range(0, len(samples), batch_size):
        batch = order[start : start + batch_size]
        losses = [regression_loss(samples[i], encoder, dataset, lambda_ot) for i in batch]
        loss = losses[0] if len(losses) == 1 else (1.0 / len(losses)) * _sum_tensors(losses)
        if l2 > 0.0:
            loss = ad.add(loss, l2 * _param_norm_sq(encoder))
        ad.adam_step(encoder.params, ad.grads_for(loss, encoder.params), optimizer)
        total += float(np.mean([l.data for l in losses]))
    return total / ((len(samples) + batch_size - 1) // batch_size)


def _sum_tensors(ts: list[ad.Tensor]) -> ad.Tensor:
    acc = ts[0]
    for t in ts[1:]:
        acc = ad.add(acc, t)
    return acc


def _param_norm_sq(encoder: SetEncoder) -> ad.Tensor:
    return _sum_tensors([ad.tsum(ad.mul(p, p)) for p in encoder.params])


# -- checkpointing ---------------------------------------------------------

_CHECKPOINT_VERSION = 1


def save_checkpoint(encoder: SetEncoder, path: str) -> None:
    payload = {
        "version": _CHECKPOINT_VERSION,
        "in_dim": encoder.in_dim,
        "weights": vars(encoder.weights),
        "params": {
            name: value.data.tolist()
            for name, value in vars(encoder).items()
            if isinstance(value, ad.Tensor)
        },
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_checkpoint(path: str) -> SetEncoder:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("version") != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    encoder = SetEncoder(payload["in_dim"], seed=0, weights=LossWeights(**payload["weights"]))
    for name, values in payload["params"].items():
        getattr(encoder, name).data[...] = np.asarray(values, dtype=np.float64)
    return encoder
