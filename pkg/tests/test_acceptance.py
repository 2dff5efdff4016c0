"""Acceptance suite: one test per release criterion, at stated tolerances.

Run with `pytest -v tests/test_acceptance.py` to get one pass/fail line per
criterion. The end-to-end trend check (criterion 8) and the Sinkhorn oracle
comparison (criterion 4) dominate the runtime (several minutes together).
"""

from dataclasses import replace

import numpy as np
import pytest

from rankbatch import autodiff as ad
from rankbatch import classifier as clf
from rankbatch.acquisition import greedy_margin_step, PoolState
from rankbatch.bench import records_to_csv, run_experiment, run_single
from rankbatch.config import ExperimentConfig, build_dataset
from rankbatch.datasets import LabelGate, gen_gaussian_blobs, make_split
from rankbatch.ot import OtProblem, exact_small_ot, sinkhorn_distance
from rankbatch.pretraining import (
    BilevelState,
    SampleStore,
    bilevel_train,
    fit_encoder,
    interpolate_utility,
)
from rankbatch.rng import Rng
from rankbatch.setmodel import (
    RankPair,
    SetEncoder,
    UtilitySample,
    encode_set,
    ot_loss,
    preference_target,
    rank_loss,
    rank_loss_from_scores,
    rank_probability,
    total_loss,
)

LN2 = 0.6931471805599453


def _report(num, text):
    print(f"criterion {num}: PASS - {text}")


def _finite_difference(loss_fn, params, h=1e-5):
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p.data[idx]
            p.data[idx] = orig + h
            f_plus = loss_fn().item()
            p.data[idx] = orig - h
            f_minus = loss_fn().item()
            p.data[idx] = orig
            g[idx] = (f_plus - f_minus) / (2 * h)
        grads.append(g)
    return grads


def _max_rel_error(loss_fn, params, floor=1e-6):
    # `floor` caps the relative error on near-zero gradient entries, where
    # central differences bottom out at machine-epsilon * |loss| / h
    analytic = ad.grads_for(loss_fn(), params)
    numeric = _finite_difference(loss_fn, params)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(n), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def test_criterion_01_gradient_correctness():
    """Every differentiable op and both loss heads vs finite differences."""
    worst = 0.0
    def away_from_zero(x):
        # keep ReLU/min_zero inputs off the kink, where central differences
        # with step h are invalid
        return np.where(x >= 0, x + 0.01, x - 0.01)

    for seed in range(100):
        rng = Rng(seed)
        a = ad.Tensor(away_from_zero(rng.uniform((3, 4)) * 2 - 1), requires_grad=True)
        b = ad.Tensor(away_from_zero(rng.uniform((3, 4)) * 2 - 1), requires_grad=True)
        m = ad.Tensor(rng.uniform((4, 3)) * 2 - 1, requires_grad=True)
        target = ad.Tensor(rng.uniform((3, 4)))
        ops = [
            lambda: ad.tsum(ad.sigmoid(ad.add(a, b))),
            lambda: ad.tsum(ad.sigmoid(ad.sub(a, b))),
            lambda: ad.tsum(ad.sigmoid(ad.mul(a, b))),
            lambda: ad.tsum(ad.sigmoid(ad.matmul(a, m))),
            lambda: ad.tsum(ad.mul(ad.relu(a), ad.relu(a))),
            lambda: ad.tsum(ad.sigmoid(a)),
            lambda: ad.tsum(ad.mul(ad.softmax(a), b)),
            lambda: ad.tsum(ad.sigmoid(ad.mean_pool(a))),
            lambda: ad.tsum(ad.sigmoid(ad.concat([a, b]))),
            lambda: ad.tmean(ad.mul(a, a)),
            lambda: ad.tsum(ad.mul(ad.min_zero(a), b)),
            lambda: ad.tsum(ad.sigmoid(ad.reshape(a, (4, 3)))),
            lambda: ad.mse(a, target),
            lambda: ad.bce(ad.sigmoid(a), target),
            lambda: ad.bce_logits(a, target),
            lambda: ad.cross_entropy(a, np.array([0, 3, 1])),
        ]
        for fn in ops:
            worst = max(worst, _max_rel_error(fn, [a, b, m]))
    assert worst < 1e-4

    ds = gen_gaussian_blobs(2, 30, 4, 1.0, seed=0)
    head_worst = 0.0
    for seed in range(100):
        enc = SetEncoder(ds.feature_dim, seed=seed)
        rng = Rng(seed ^ 0x11)
        s1 = UtilitySample(rng.choice(np.arange(30), 4), 0.7, 0.3)
        s2 = UtilitySample(rng.choice(np.arange(30), 4), 0.4, 0.6)
        pair = RankPair(s1, s2, 1.0)
        checked = [enc.rank_w, enc.ot_w2]
        head_worst = max(head_worst, _max_rel_error(lambda: rank_loss(pair, enc, ds), checked, floor=1e-5))
        head_worst = max(head_worst, _max_rel_error(lambda: total_loss(pair, enc, ds, lambda_ot=1.0), checked, floor=1e-5))
    assert head_worst < 1e-4
    _report(1, f"max rel error ops {worst:.2e}, loss heads {head_worst:.2e} over 100 seeds")


def test_criterion_02_loss_formula_exactness():
    zero = ad.Tensor(np.zeros((1, 1)))
    equal_scores = rank_loss_from_scores(zero, zero, 1.0).item()
    assert equal_scores == pytest.approx(0.693147, abs=1e-6)

    hand = ot_loss(
        ad.Tensor(np.array([[-1.0]])), ad.Tensor(np.array([[0.5]])),
        0.0, 0.5, lambda1=0.5, lambda2=0.5, lambda3=1.0,
    ).item()
    assert hand == 1.5

    ds = gen_gaussian_blobs(2, 20, 4, 1.0, seed=1)
    enc = SetEncoder(ds.feature_dim, seed=2)
    pair = RankPair(
        UtilitySample(np.array([0, 1, 2]), 0.8, 0.2),
        UtilitySample(np.array([3, 4, 5]), 0.3, 0.7),
        1.0,
    )
    assert total_loss(pair, enc, ds, lambda_ot=0.0).item() == rank_loss(pair, enc, ds).item()
    _report(2, f"rank loss at equal scores {equal_scores:.6f}; hand-computed OT loss {hand}; lambda_ot=0 bitwise")


def test_criterion_03_set_symmetry():
    ds = gen_gaussian_blobs(3, 60, 5, 1.0, seed=3)
    enc = SetEncoder(ds.feature_dim, seed=4)
    idx = np.arange(40)
    base = encode_set(enc, idx, ds)
    rng = Rng(5)
    worst = 0.0
    for _ in range(1000):
        perm = rng.permutation(len(idx))
        r = encode_set(enc, idx[perm], ds)
        worst = max(worst, float(np.abs(r.embedding.data - base.embedding.data).max()))
        worst = max(worst, abs(r.score.item() - base.score.item()))
    assert worst < 1e-12

    for s1, s2 in Rng(6).normal((500, 2)) * 10:
        assert rank_probability(s1, s2) + rank_probability(s2, s1) == 1.0
    _report(3, f"1000 permutations within {worst:.1e}; antisymmetry exact over 500 score pairs")


def test_criterion_04_ot_correctness():
    worst = 0.0
    for seed in range(50):
        rng = Rng(seed)
        n = 5 + seed % 4  # sizes 5..8
        x, y = rng.normal((n, 2)), rng.normal((n, 2))
        exact = exact_small_ot(OtProblem(x, y))
        approx = sinkhorn_distance(OtProblem(x, y, epsilon=1e-3, max_iterations=20000)).cost
        worst = max(worst, abs(approx - exact))
    assert worst < 1e-3

    rng = Rng(50)
    x, y = rng.normal((8, 3)), rng.normal((8, 3))
    kw = dict(epsilon=0.5, tolerance=1e-10, max_iterations=100000)
    sym = abs(sinkhorn_distance(OtProblem(x, y, **kw)).cost - sinkhorn_distance(OtProblem(y, x, **kw)).cost)
    shift = np.array([5.0, -2.0, 1.0])
    trans = abs(
        sinkhorn_distance(OtProblem(x, y, epsilon=0.05)).cost
        - sinkhorn_distance(OtProblem(x + shift, y + shift, epsilon=0.05)).cost
    )
    assert sym < 1e-9 and trans < 1e-9
    _report(4, f"50-instance oracle agreement {worst:.1e}; symmetry {sym:.1e}; translation {trans:.1e}")


def test_criterion_05_interpolation():
    assert interpolate_utility(0.0, 2.0, 0.6, 0.9) == (1.0, 0.6)
    assert interpolate_utility(3.0, 0.0, 0.6, 0.9) == (0.0, 0.9)
    rng = Rng(7)
    draws = rng.uniform((10000, 4))
    for d_prev, d_next, a1, a2 in draws:
        lo, hi = min(a1, a2), max(a1, a2)
        alpha, u = interpolate_utility(float(d_prev) * 5, float(d_next) * 5, float(a1), float(a2))
        assert 0.0 <= alpha <= 1.0
        assert lo - 1e-15 <= u <= hi + 1e-15
    _report(5, "endpoints exact; alpha and blended utility in range over 10^4 draws")


def test_criterion_06_greedy_margin_oracle_equivalence():
    checked = 0
    for ds_seed in range(10):
        ds = gen_gaussian_blobs(3, 60, 4, 1.0, seed=ds_seed)
        split = make_split(ds, 30, 30, 30, seed=ds_seed)
        margin_clf, _ = clf.train(split.pretrain_idx, ds, seed=ds_seed)
        for variant in range(10):
            rng_cfg = Rng(ds_seed * 100 + variant)
            b = int(rng_cfg.integers(2, 11)[0])
            m_cap = int(rng_cfg.integers(b, 41)[0])
            additive = Rng(ds_seed * 100 + variant + 7919).normal((ds.num_points,))

            def score(indices):
                return float(additive[indices].sum())

            state = PoolState(
                labeled=np.sort(split.pretrain_idx.copy()),
                unlabeled=np.sort(split.unlabeled_idx.copy()),
                b=b, M=m_cap,
            )
            step_rng = Rng(ds_seed * 1000 + variant)
            replay = Rng(ds_seed * 1000 + variant)
            new_state, record = greedy_margin_step(score, margin_clf, ds, state, step_rng)

            pool = np.setdiff1d(state.unlabeled, state.labeled)
            margins = clf.margin_scores(margin_clf, pool, ds)
            m = min(m_cap, len(pool))
            filtered = pool[np.argsort(margins, kind="stable")[:m]]
            perm = replay.permutation(m)
            batches = [np.sort(filtered[perm[j * b : (j + 1) * b]]) for j in range(m // b)]
            best = max(batches, key=lambda batch: score(np.concatenate([state.labeled, batch])))
            assert sorted(record.chosen_indices) == sorted(best.tolist())
            checked += 1
    assert checked == 100
    _report(6, "selected batch equals brute-force argmax on 100 random instances")


def test_criterion_07_bilevel_ablation_equivalence():
    # (a) grid {0} is bit-identical to single-level training
    ds = gen_gaussian_blobs(2, 30, 4, 1.0, seed=0)
    rng = Rng(8)
    store = SampleStore()
    for i in range(10):
        size = 3 if i % 2 == 0 else 6
        store.add(UtilitySample(rng.choice(np.arange(30), size), 0.2 + 0.06 * i, 0.1))
    enc = SetEncoder(ds.feature_dim, seed=9)
    d_tr, _ = store.partition()
    trained, lam = bilevel_train(store, enc, BilevelState(grid=[0.0], inner_epochs=3), ds, seed=10, lambda_ot=1.0)
    reference = fit_encoder(enc, d_tr, ds, epochs=3, seed=10, lambda_ot=1.0, l2=0.0)
    assert lam == 0.0
    for a, b in zip(trained.params, reference.params):
        assert np.array_equal(a.data, b.data)

    # (b) adversarially-labelled short samples, clean long samples: the grid
    # search should prefer a nonzero regularizer in at least 8 of 10 seeds
    def signal(dataset, idx):
        m = dataset.features[idx, 0].mean()
        return float(1.0 / (1.0 + np.exp(-m)))

    wins = 0
    for seed in range(10):
        dsb = gen_gaussian_blobs(3, 60, 4, 1.5, seed=seed)
        rng = Rng(seed)
        store = SampleStore()
        for _ in range(12):
            idx = rng.choice(np.arange(dsb.num_points), 4)
            store.add(UtilitySample(idx, 1.0 - signal(dsb, idx), 0.1))
        for _ in range(12):
            idx = rng.choice(np.arange(dsb.num_points), 8)
            store.add(UtilitySample(idx, signal(dsb, idx), 0.1))
        encoder = SetEncoder(dsb.feature_dim, seed=seed + 100)
        state = BilevelState(grid=[0.0, 1e-4, 1e-3, 1e-2, 1e-1], inner_epochs=10)
        _, lam = bilevel_train(store, encoder, state, dsb, seed=seed, lambda_ot=0.0)
        wins += lam > 0
    assert wins >= 8
    _report(7, f"grid {{0}} bit-identical; lambda > 0 chosen in {wins}/10 seeds")


def _trend_config():
    return ExperimentConfig(
        dataset={
            "kind": "blobs", "num_classes": 10,
            "points_per_class": [500] * 9 + [100],  # one rare class
            "dim": 12, "spread": 2.5, "seed": 0,
        },
        k=200, k1=50, b=50, budgets=[500], n=20, M=200,
        val_size=1000, test_size=1000,
        bilevel_grid=[0.0, 1e-3, 1e-2], inner_epochs=8,
        ot_val_subsample=200, ot_epsilon_scale=0.05,
        seeds=list(range(10)), methods=["rambo"],
    )


def test_criterion_08_end_to_end_trend():
    config = _trend_config()
    off = replace(config, use_bilevel=False, use_ot=False, use_ranknet=False)
    ds = build_dataset(config.dataset)
    full, rand, ablate = [], [], []
    for seed in config.seeds:
        full.append(run_single(config, ds, "rambo", 500, seed).val_accuracy)
        rand.append(run_single(config, ds, "random", 500, seed).val_accuracy)
        ablate.append(run_single(off, ds, "rambo", 500, seed).val_accuracy)
    full, rand, ablate = map(np.asarray, (full, rand, ablate))
    paired_wins = int((full >= ablate).sum())
    assert full.mean() >= rand.mean()
    assert paired_wins >= 7
    _report(8, f"mean val acc {full.mean():.4f} (learned) vs {rand.mean():.4f} (random); "
               f"{paired_wins}/10 paired wins vs all-toggles-off ({ablate.mean():.4f})")


def test_criterion_09_determinism():
    config = ExperimentConfig(
        dataset={"kind": "blobs", "num_classes": 3, "points_per_class": 100, "dim": 4, "spread": 1.5, "seed": 0},
        k=40, k1=20, b=10, budgets=[20], n=3, M=20, val_size=80, test_size=80,
        bilevel_grid=[0.0, 1e-3], inner_epochs=2, ot_val_subsample=40, ot_epsilon_scale=0.05,
        seeds=[0, 1], methods=["rambo", "random", "margin"],
        record_wall_time=False,  # timings are the one legitimately varying column
    )
    first, _, errors_a = run_experiment(config)
    second, _, errors_b = run_experiment(config)
    assert errors_a == [] and errors_b == []
    csv_a, csv_b = records_to_csv(first), records_to_csv(second)
    assert csv_a == csv_b
    _report(9, f"two identical runs produced byte-identical CSV ({len(csv_a)} bytes, {len(first)} records)")


def test_criterion_10_budget_accounting():
    config = ExperimentConfig(
        dataset={"kind": "blobs", "num_classes": 3, "points_per_class": 100, "dim": 4, "spread": 1.5, "seed": 0},
        k=40, k1=20, b=10, budgets=[20], n=3, M=20, val_size=80, test_size=80,
        bilevel_grid=[0.0], inner_epochs=2, ot_val_subsample=40, ot_epsilon_scale=0.05,
        seeds=[0], methods=["rambo", "random", "margin", "coreset", "badge"],
    )
    ds = build_dataset(config.dataset)
    budget = 20
    for method in config.methods:
        # run_single raises if the gate count deviates from the budget
        rec = run_single(config, ds, method, budget, seed=0)
        assert rec.B == budget

    # direct check that the gate actually blocks over-budget access
    split = make_split(ds, config.k, config.val_size, config.test_size, seed=0)
    gate = LabelGate(ds, split)
    gate.query(split.unlabeled_idx[:budget])
    assert gate.queries_used == budget
    from rankbatch.datasets import BudgetError

    with pytest.raises(BudgetError):
        gate.labels(split.unlabeled_idx[budget : budget + 5])
    _report(10, "label queries equal B exactly for all methods; gate blocks unqueried access")
