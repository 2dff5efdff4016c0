"""Benchmark orchestration: multi-seed runs, CSV persistence, summaries.

A run = (seed, method, budget) executed end to end on a fresh split and
label gate; results land in RunRecords with a stable, versioned CSV schema.
"""

from __future__ import annotations

import csv
import io
import time
import traceback
from dataclasses import dataclass

import numpy as np

from . import classifier as clf
from .acquisition import run_acquisition
from .baselines import select_badge_lite, select_coreset, select_margin, select_random
from .config import SCHEMA_VERSION, ExperimentConfig, build_dataset
from .datasets import Dataset, LabelGate, make_split
from .pretraining import run_pretraining
from .rng import Rng

CSV_COLUMNS = [
    "schema_version", "seed", "method", "dataset", "k", "B", "lambda_ot",
    "bilevel", "ot", "ranknet", "val_accuracy", "test_accuracy",
    "pretrain_seconds", "acquire_seconds",
]

BASELINE_METHODS = {"random", "margin", "coreset", "badge"}


@dataclass
class RunRecord:
    seed: int
    method: str
    dataset: str
    k: int
    B: int
    lambda_ot: float
    bilevel: bool
    ot: bool
    ranknet: bool
    val_accuracy: float
    test_accuracy: float
    pretrain_seconds: float
    acquire_seconds: float

    def csv_row(self) -> list:
        return [
            SCHEMA_VERSION, self.seed, self.method, self.dataset, self.k, self.B,
            repr(self.lambda_ot), int(self.bilevel), int(self.ot), int(self.ranknet),
            repr(self.val_accuracy), repr(self.test_accuracy),
            repr(round(self.pretrain_seconds, 3)), repr(round(self.acquire_seconds, 3)),
        ]


def run_single(config: ExperimentConfig, dataset: Dataset, method: str, budget: int, seed: int) -> RunRecord:
    """Execute one full pipeline run and evaluate the final labeled set."""
    split = make_split(dataset, config.k, config.val_size, config.test_size, seed)
    gate = LabelGate(dataset, split)
    clock = time.perf_counter if config.record_wall_time else (lambda: 0.0)

    pretrain_seconds = 0.0
    t0 = clock()
    if method == "rambo":
        _, _, encoder = run_pretraining(dataset, split, config, seed, gate=gate)
        pretrain_seconds = clock() - t0
        t0 = clock()
        final = run_acquisition(encoder, dataset, split, None, config, budget, seed, gate=gate)
    elif method in BASELINE_METHODS:
        pool = split.unlabeled_idx
        if method == "random":
            chosen = select_random(pool, budget, Rng(seed).split(101))
        else:
            margin_clf, _ = clf.train(split.pretrain_idx, dataset, seed, gate=gate)
            if method == "margin":
                chosen = select_margin(margin_clf, pool, budget, dataset)
            elif method == "coreset":
                chosen = select_coreset(margin_clf, pool, split.pretrain_idx, budget, dataset)
            else:
                chosen = select_badge_lite(margin_clf, pool, budget, dataset, Rng(seed).split(102))
        gate.query(chosen)
        final = np.sort(np.concatenate([split.pretrain_idx, chosen]))
    else:
        raise ValueError(f"unknown method '{method}'")
    acquire_seconds = clock() - t0

    if gate.queries_used != budget:
        raise RuntimeError(f"budget violation: {gate.queries_used} labels queried, budget {budget}")
    if len(final) != config.k + budget:
        raise RuntimeError(f"final labeled set has {len(final)} points, expected {config.k + budget}")

    model, report = clf.train(final, dataset, seed, gate=gate, val_indices=split.val_idx)
    test_acc = model.accuracy(dataset.features[split.test_idx], gate.labels(split.test_idx))
    return RunRecord(
        seed=seed, method=method, dataset=dataset.name, k=config.k, B=budget,
        lambda_ot=config.effective_lambda_ot, bilevel=config.use_bilevel,
        ot=config.use_ot, ranknet=config.use_ranknet,
        val_accuracy=report.val_accuracy, test_accuracy=test_acc,
        pretrain_seconds=pretrain_seconds, acquire_seconds=acquire_seconds,
    )


def run_experiment(config: ExperimentConfig, dataset: Dataset | None = None):
    """All seed x method x budget runs; per-run failures are recorded and
    do not abort the experiment. Returns (records, summary, errors)."""
    if dataset is None:
        dataset = build_dataset(config.dataset)
    records: list[RunRecord] = []
    errors: list[dict] = []
    for seed in config.seeds:
        for method in config.methods:
            for budget in config.budgets:
                try:
                    records.append(run_single(config, dataset, method, budget, seed))
                except Exception as exc:  # noqa: BLE001 - keep the sweep alive
                    errors.append(
                        {"seed": seed, "method": method, "B": budget,
                         "error": f"{type(exc).__name__}: {exc}",
                         "traceback": traceback.format_exc()}
                    )
    return records, summarize(records), errors


def summarize(records: list[RunRecord]) -> dict[tuple[str, int], tuple[float, float]]:
    """Mean and standard error of val accuracy per (method, budget)."""
    groups: dict[tuple[str, int], list[float]] = {}
    for r in records:
        groups.setdefault((r.method, r.B), []).append(r.val_accuracy)
    out = {}
    for key, vals in groups.items():
        arr = np.asarray(vals)
        se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        out[key] = (float(arr.mean()), se)
    return out


def records_to_csv(records: list[RunRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def write_csv(records: list[RunRecord], path: str) -> None:
    with open(path, "w", newline="") as f:
        f.write(records_to_csv(records))


ABLATION_TOGGLES = [
    (True, True, True),
    (True, True, False),
    (True, False, True),
    (True, False, False),
    (False, True, True),
    (False, True, False),
    (False, False, True),
    (False, False, False),
]


def run_ablation(config: ExperimentConfig, dataset: Dataset | None = None):
    """All 8 toggle combinations plus the random baseline row."""
    if dataset is None:
        dataset = build_dataset(config.dataset)
    rows = []
    all_records: list[RunRecord] = []
    all_errors: list[dict] = []
    from dataclasses import replace

    for bilevel, ot, ranknet in ABLATION_TOGGLES:
        variant = replace(config, use_bilevel=bilevel, use_ot=ot, use_ranknet=ranknet, methods=["rambo"])
        records, summary, errors = run_experiment(variant, dataset)
        all_records += records
        all_errors += errors
        for (method, budget), (mean, se) in sorted(summary.items()):
            rows.append({"bilevel": bilevel, "ot": ot, "ranknet": ranknet, "B": budget, "mean": mean, "se": se})
    random_cfg = replace(config, methods=["random"])
    records, summary, errors = run_experiment(random_cfg, dataset)
    all_records += records
    all_errors += errors
    for (method, budget), (mean, se) in sorted(summary.items()):
        rows.append({"bilevel": None, "ot": None, "ranknet": None, "B": budget, "mean": mean, "se": se})
    return rows, all_records, all_errors


def sweep_lambda_ot(config: ExperimentConfig, values: list[float] | None = None, dataset: Dataset | None = None):
    """Rerun the learned method across OT loss weights (0 disables the head)."""
    from dataclasses import replace

    values = values if values is not None else [0.0, 0.1, 1.0, 10.0]
    if dataset is None:
        dataset = build_dataset(config.dataset)
    all_records = []
    rows = []
    for lam in values:
        variant = replace(config, lambda_ot=lam, use_ot=lam > 0, methods=["rambo"])
        records, summary, _ = run_experiment(variant, dataset)
        all_records += records
        for (method, budget), (mean, se) in sorted(summary.items()):
            rows.append({"lambda_ot": lam, "B": budget, "mean": mean, "se": se})
    return rows, all_records


def sweep_k(config: ExperimentConfig, k_values: list[int], dataset: Dataset | None = None):
    """Rerun all methods across pretraining pool sizes; k1 scales with k."""
    from dataclasses import replace

    if dataset is None:
        dataset = build_dataset(config.dataset)
    rows = []
    all_records = []
    for k in k_values:
        valid = 0 < config.k1 <= k and (k - config.k1) % config.b == 0
        k1 = config.k1 if valid else (k % config.b or config.b)
        variant = replace(config, k=k, k1=k1)
        records, summary, _ = run_experiment(variant, dataset)
        all_records += records
        for (method, budget), (mean, se) in sorted(summary.items()):
            rows.append({"k": k, "method": method, "B": budget, "mean": mean, "se": se})
    return rows, all_records
