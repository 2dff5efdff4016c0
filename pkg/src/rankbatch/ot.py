"""Entropic optimal transport between point clouds, plus an exact oracle.

Used to produce the scalar regression targets for the utility model's OT
head: the distance between a candidate subset's features and the validation
set. Ground cost is squared Euclidean; the Sinkhorn solver runs in the log
domain and reports the sharp cost <P, C> (entropy term excluded).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp


@dataclass
class OtProblem:
    source: np.ndarray  # (n, d)
    target: np.ndarray  # (m, d)
    epsilon: float = 0.0  # 0 means "use default_epsilon"
    max_iterations: int = 1000
    tolerance: float = 1e-6  # L1 marginal violation

    def __post_init__(self):
        self.source = np.atleast_2d(np.asarray(self.source, dtype=np.float64))
        self.target = np.atleast_2d(np.asarray(self.target, dtype=np.float64))
        if len(self.source) == 0 or len(self.target) == 0:
            raise ValueError("both point sets must be non-empty")


@dataclass
class SinkhornResult:
    cost: float
    converged: bool
    iterations: int


def squared_cost(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def median_pairwise_cost(points: np.ndarray) -> float:
    """Median squared pairwise distance; the O(1) normalization scale."""
    c = squared_cost(points, points)
    off_diag = c[~np.eye(len(points), dtype=bool)]
    return float(np.median(off_diag)) if off_diag.size else 1.0


def default_epsilon(problem: OtProblem) -> float:
    c = squared_cost(problem.source, problem.target)
    med = float(np.median(c))
    return 0.01 * med if med > 0 else 1e-6


def sinkhorn_distance(problem: OtProblem) -> SinkhornResult:
    """Log-domain Sinkhorn with uniform weights; returns the sharp cost."""
    x, y = problem.source, problem.target
    n, m = len(x), len(y)
    eps = problem.epsilon if problem.epsilon > 0 else default_epsilon(problem)
    c = squared_cost(x, y)
    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    converged = False
    it = 0
    for it in range(1, problem.max_iterations + 1):
        f = eps * (log_a - logsumexp((g[None, :] - c) / eps, axis=1))
        g = eps * (log_b - logsumexp((f[:, None] - c) / eps, axis=0))
        if it % 10 == 0 or it == problem.max_iterations:
            log_p = (f[:, None] + g[None, :] - c) / eps
            p = np.exp(log_p)
            violation = np.abs(p.sum(axis=1) - np.exp(log_a)).sum() + np.abs(
                p.sum(axis=0) - np.exp(log_b)
            ).sum()
            if violation < problem.tolerance:
                converged = True
                break
    p = np.exp((f[:, None] + g[None, :] - c) / eps)
    return SinkhornResult(cost=float((p * c).sum()), converged=converged, iterations=it)


def exact_small_ot(problem: OtProblem) -> float:
    """Exact OT for uniform equal-size problems via optimal assignment."""
    n, m = len(problem.source), len(problem.target)
    if n != m:
        raise ValueError(f"exact solver requires equal sizes, got {n} and {m}")
    if n * m > 64:
        raise ValueError(f"instance too large for the exact solver ({n}x{m} > 64)")
    c = squared_cost(problem.source, problem.target)
    rows, cols = linear_sum_assignment(c)
    return float(c[rows, cols].sum() / n)


def ot_target(subset_features: np.ndarray, val_features: np.ndarray, normalizer: float, epsilon: float = 0.0, max_iterations: int = 1000) -> float:
    """Normalized Sinkhorn distance used as the OT-head regression target."""
    result = sinkhorn_distance(
        OtProblem(subset_features, val_features, epsilon=epsilon, max_iterations=max_iterations)
    )
    return result.cost / normalizer
