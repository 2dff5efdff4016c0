"""Experiment configuration: every scalar knob of a benchmark run.

Configs load from JSON (with a schema_version field) and validate the
budget arithmetic up front: the initial pool of size k splits into a seed
set of size k1 plus tau1 chunks of size b, and the acquisition budget B is
consumed in tau2 = B / b steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

from .datasets import Dataset, feature_map, gen_gaussian_blobs, gen_two_moons, load_idx

SCHEMA_VERSION = 1


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "blobs", "num_classes": 4, "points_per_class": 500, "dim": 8, "spread": 2.0, "seed": 0})
    k: int = 200
    k1: int = 50
    b: int = 50
    budgets: list[int] = field(default_factory=lambda: [500])
    n: int = 50  # interpolated sample pairs collected per pretraining iteration
    M: int = 200  # margin filter size; default 4*b
    val_size: int = 1000
    test_size: int = 1000
    lambda1: float = 0.5
    lambda2: float = 0.5
    lambda3: float = 1.0
    lambda_ot: float = 1.0
    bilevel_grid: list[float] = field(default_factory=lambda: [0.0, 1e-4, 1e-3, 1e-2, 1e-1])
    inner_epochs: int = 20
    use_bilevel: bool = True
    use_ot: bool = True
    use_ranknet: bool = True
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    methods: list[str] = field(default_factory=lambda: ["rambo", "random", "margin", "coreset", "badge"])
    output_dir: str = "results"
    # pipeline knobs
    margin_refresh: str = "per_step"  # or "frozen"
    init_mode: str = "random"  # or a checkpoint path
    ot_epsilon_scale: float = 0.01  # epsilon = scale * median pairwise cost
    ot_max_iterations: int = 1000
    ot_val_subsample: int = 0  # 0 = use the full validation set for OT targets
    audit_fraction: float = 0.0  # fraction of interpolated samples re-evaluated for diagnostics
    record_wall_time: bool = True

    def __post_init__(self):
        if self.k <= 0 or self.b <= 0 or self.k1 < 0:
            raise ValueError("k, b must be positive and k1 nonnegative")
        if (self.k - self.k1) % self.b != 0:
            raise ValueError(f"k - k1 = {self.k - self.k1} must be divisible by b = {self.b} (k1 + tau1*b = k)")
        if not self.seeds:
            raise ValueError("seeds list must be non-empty")
        if self.M < self.b:
            raise ValueError(f"M = {self.M} must be at least b = {self.b}")

    @property
    def tau1(self) -> int:
        return (self.k - self.k1) // self.b

    def tau2(self, budget: int) -> int:
        return (budget + self.b - 1) // self.b

    @property
    def effective_lambda_ot(self) -> float:
        return self.lambda_ot if self.use_ot else 0.0

    @property
    def effective_grid(self) -> list[float]:
        return list(self.bilevel_grid) if self.use_bilevel else [0.0]

    def to_json(self) -> str:
        payload = {"schema_version": SCHEMA_VERSION, **asdict(self)}
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        payload = json.loads(text)
        version = payload.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {version}")
        return cls(**payload)

    def config_hash(self) -> str:
        import hashlib

        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]


def build_dataset(spec: dict) -> Dataset:
    """Construct the dataset named by a config's dataset spec."""
    spec = dict(spec)
    kind = spec.pop("kind")
    fmap = spec.pop("feature_map", None)
    if kind == "blobs":
        ds = gen_gaussian_blobs(**spec)
    elif kind == "two_moons":
        ds = gen_two_moons(**spec)
    elif kind == "idx":
        ds = load_idx(spec["images_path"], spec["labels_path"])
    else:
        raise ValueError(f"unknown dataset kind '{kind}'")
    if fmap:
        ds = feature_map(ds, **fmap)
    return ds
