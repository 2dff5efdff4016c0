import itertools

import numpy as np
import pytest

from rankbatch.ot import (
    OtProblem,
    default_epsilon,
    exact_small_ot,
    median_pairwise_cost,
    ot_target,
    sinkhorn_distance,
    squared_cost,
)
from rankbatch.rng import Rng


# -- cost matrix -------------------------------------------------------------


def test_squared_cost_by_hand():
    c = squared_cost(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[0.0, 3.0]]))
    assert np.array_equal(c, [[9.0], [10.0]])


def test_median_pairwise_cost_single_point_is_one():
    assert median_pairwise_cost(np.array([[2.0, 2.0]])) == 1.0


# -- exact oracle ------------------------------------------------------------


def test_exact_ot_identical_clouds_is_zero():
    x = Rng(0).normal((6, 3))
    assert exact_small_ot(OtProblem(x, x.copy())) == 0.0


def test_exact_ot_two_by_two_enumeration():
    x = np.array([[0.0, 0.0], [1.0, 0.0]])
    y = np.array([[0.0, 1.0], [1.0, 1.0]])
    # assignments: identity costs (1+1)/2, swap costs (2+2)/2
    assert exact_small_ot(OtProblem(x, y)) == pytest.approx(1.0, abs=0)


@pytest.mark.parametrize("seed", range(10))
def test_exact_ot_matches_permutation_bruteforce(seed):
    rng = Rng(seed)
    x, y = rng.normal((5, 2)), rng.normal((5, 2))
    c = squared_cost(x, y)
    brute = min(
        sum(c[i, p[i]] for i in range(5)) / 5 for p in itertools.permutations(range(5))
    )
    assert exact_small_ot(OtProblem(x, y)) == pytest.approx(brute, rel=1e-12)


def test_exact_ot_rejects_unequal_or_large():
    with pytest.raises(ValueError):
        exact_small_ot(OtProblem(np.zeros((3, 2)), np.zeros((4, 2))))
    with pytest.raises(ValueError):
        exact_small_ot(OtProblem(np.zeros((9, 2)), np.zeros((9, 2))))


# -- Sinkhorn ----------------------------------------------------------------


def test_sinkhorn_symmetry_at_convergence():
    rng = Rng(3)
    x, y = rng.normal((8, 3)), rng.normal((8, 3))
    kw = dict(epsilon=0.5, tolerance=1e-10, max_iterations=100000)
    fwd = sinkhorn_distance(OtProblem(x, y, **kw))
    bwd = sinkhorn_distance(OtProblem(y, x, **kw))
    assert fwd.converged and bwd.converged
    assert abs(fwd.cost - bwd.cost) < 1e-9


def test_sinkhorn_translation_invariance():
    rng = Rng(3)
    x, y = rng.normal((8, 3)), rng.normal((8, 3))
    shift = np.array([5.0, -2.0, 1.0])
    fwd = sinkhorn_distance(OtProblem(x, y, epsilon=0.05)).cost
    shifted = sinkhorn_distance(OtProblem(x + shift, y + shift, epsilon=0.05)).cost
    assert abs(fwd - shifted) < 1e-9


def test_sinkhorn_approaches_exact_as_epsilon_shrinks():
    rng = Rng(4)
    x, y = rng.normal((6, 2)), rng.normal((6, 2))
    exact = exact_small_ot(OtProblem(x, y))
    errors = []
    for eps in (1e-1, 1e-2, 1e-3):
        cost = sinkhorn_distance(OtProblem(x, y, epsilon=eps, max_iterations=50000)).cost
        errors.append(abs(cost - exact))
    assert errors[0] >= errors[1] >= errors[2]
    assert errors[2] < 1e-3


@pytest.mark.parametrize("seed", range(20))
def test_sinkhorn_agrees_with_assignment_oracle(seed):
    rng = Rng(seed)
    x, y = rng.normal((5, 2)), rng.normal((5, 2))
    exact = exact_small_ot(OtProblem(x, y))
    approx = sinkhorn_distance(OtProblem(x, y, epsilon=2e-3, max_iterations=20000)).cost
    assert abs(approx - exact) < 1e-3


def test_sinkhorn_converges_at_moderate_epsilon():
    rng = Rng(7)
    x, y = rng.normal((20, 4)), rng.normal((30, 4))
    result = sinkhorn_distance(OtProblem(x, y, epsilon=0.5))
    assert result.converged
    assert result.iterations <= 1000


def test_sinkhorn_uneven_sizes_identical_support_near_zero():
    x = Rng(1).normal((4, 2))
    doubled = np.concatenate([x, x])
    cost = sinkhorn_distance(OtProblem(x, doubled, epsilon=1e-3, max_iterations=50000)).cost
    assert cost < 1e-3


def test_default_epsilon_scales_with_median_cost():
    x = Rng(2).normal((10, 3))
    y = Rng(3).normal((12, 3))
    base = default_epsilon(OtProblem(x, y))
    scaled = default_epsilon(OtProblem(3.0 * x, 3.0 * y))
    assert scaled == pytest.approx(9.0 * base, rel=1e-12)
    assert base == pytest.approx(0.01 * np.median(squared_cost(x, y)), rel=1e-12)


def test_empty_cloud_rejected():
    with pytest.raises(ValueError):
        OtProblem(np.zeros((0, 2)), np.zeros((3, 2)))


def test_ot_target_normalization():
    rng = Rng(9)
    x, y = rng.normal((6, 2)), rng.normal((9, 2))
    raw = sinkhorn_distance(OtProblem(x, y, epsilon=0.05)).cost
    assert ot_target(x, y, normalizer=2.0, epsilon=0.05) == pytest.approx(raw / 2.0, rel=1e-12)
