"""Data sources, pool splits, feature maps, and the label query gate.

Acquisition code never touches raw labels: it goes through :class:`LabelGate`,
which only reveals labels for indices that are part of the initial labeled
pool, the validation/test sets, or that have been explicitly queried. Every
query is counted, so budget accounting is enforced structurally rather than
by convention.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# Stream labels for Rng.split. Generators and the splitter are routinely
# called with the same seed; without domain separation their raw counter
# streams would coincide and the split permutation would argsort the very
# draws that produced the data, correlating split membership with geometry.
_STREAM_BLOBS = 0x01
_STREAM_MOONS = 0x02
_STREAM_SPLIT = 0x03
_STREAM_FOURIER = 0x04


class IdxFormatError(ValueError):
    """Malformed IDX file (bad magic, truncation, or count mismatch)."""


class BudgetError(RuntimeError):
    """A label was requested for an index outside the visible set."""


@dataclass
class Dataset:
    features: np.ndarray  # (num_points, feature_dim) float64
    labels: np.ndarray  # (num_points,) int64 class ids in [0, C)
    name: str

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ValueError(f"{len(self.features)} feature rows but {len(self.labels)} labels")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("dataset features contain non-finite values")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def num_points(self) -> int:
        return len(self.labels)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


@dataclass
class PoolSplit:
    pretrain_idx: np.ndarray  # the initial labeled pool
    unlabeled_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray


class LabelGate:
    """Access control for labels plus the label-budget counter."""

    def __init__(self, dataset: Dataset, split: PoolSplit):
        self.__labels = dataset.labels
        self._visible = set(int(i) for i in split.pretrain_idx)
        self._visible |= set(int(i) for i in split.val_idx)
        self._visible |= set(int(i) for i in split.test_idx)
        self.queries_used = 0

    def labels(self, indices: np.ndarray) -> np.ndarray:
        hidden = [int(i) for i in indices if int(i) not in self._visible]
        if hidden:
            raise BudgetError(f"labels requested for unqueried indices {hidden[:5]}")
        return self.__labels[np.asarray(indices, dtype=np.int64)]

    def query(self, indices: np.ndarray) -> np.ndarray:
        """Reveal labels for new indices, charging them to the budget."""
        new = [int(i) for i in indices if int(i) not in self._visible]
        self.queries_used += len(new)
        self._visible.update(new)
        return self.__labels[np.asarray(indices, dtype=np.int64)]


# -- generators -------------------------------------------------------------


def gen_gaussian_blobs(
    num_classes: int,
    points_per_class,
    dim: int,
    spread: float,
    seed: int,
    center_scale: float = 4.0,
) -> Dataset:
    """Isotropic Gaussian clusters at seed-determined centers.

    points_per_class may be an int or a per-class sequence (for imbalance).
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if spread <= 0:
        raise ValueError("spread must be positive")
    counts = (
        [int(points_per_class)] * num_classes
        if np.isscalar(points_per_class)
        else [int(c) for c in points_per_class]
    )
    if len(counts) != num_classes:
        raise ValueError(f"{len(counts)} class sizes for {num_classes} classes")
    rng = Rng(seed).split(_STREAM_BLOBS)
    centers = rng.normal((num_classes, dim)) * center_scale
    feats, labels = [], []
    for c, n in enumerate(counts):
        feats.append(centers[c] + spread * rng.normal((n, dim)))
        labels.append(np.full(n, c, dtype=np.int64))
    return Dataset(np.concatenate(feats), np.concatenate(labels), name="blobs")


def gen_two_moons(points: int, noise: float, seed: int) -> Dataset:
    """Two interleaved half circles; unit radii around (0,0) and (1,0.5)."""
    rng = Rng(seed).split(_STREAM_MOONS)
    n0 = points // 2
    n1 = points - n0
    t0 = np.pi * rng.uniform((n0,))
    t1 = np.pi * rng.uniform((n1,))
    x0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    x1 = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    feats = np.concatenate([x0, x1])
    if noise > 0:
        feats = feats + noise * rng.normal(feats.shape)
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    return Dataset(feats, labels, name="two_moons")


# -- IDX ingestion ----------------------------------------------------------


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Read an IDX image/label file pair; pixels scaled to [0, 1]."""
    with open(images_path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise IdxFormatError(f"truncated image header in {images_path}")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"bad image magic 0x{magic:08X}, expected 0x{IDX_IMAGES_MAGIC:08X}")
    if len(raw) != 16 + n * rows * cols:
        raise IdxFormatError(f"image payload is {len(raw) - 16} bytes, expected {n * rows * cols}")
    images = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows * cols)

    with open(labels_path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise IdxFormatError(f"truncated label header in {labels_path}")
    magic, m = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"bad label magic 0x{magic:08X}, expected 0x{IDX_LABELS_MAGIC:08X}")
    if len(raw) != 8 + m:
        raise IdxFormatError(f"label payload is {len(raw) - 8} bytes, expected {m}")
    if m != n:
        raise IdxFormatError(f"{n} images but {m} labels")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    return Dataset(images.astype(np.float64) / 255.0, labels, name="idx")


def write_idx(dataset: Dataset, images_path: str, labels_path: str, rows: int = 28, cols: int = 28) -> None:
    """Inverse of load_idx for square [0,1]-scaled pixel data."""
    if dataset.feature_dim != rows * cols:
        raise IdxFormatError(f"feature dim {dataset.feature_dim} != {rows}x{cols}")
    pixels = np.round(dataset.features * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, dataset.num_points, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, dataset.num_points))
        f.write(dataset.labels.astype(np.uint8).tobytes())


# -- splits and feature maps -----------------------------------------------


def make_split(dataset: Dataset, k: int, val_size: int, test_size: int, seed: int) -> PoolSplit:
    """Uniform random disjoint pretrain/val/test/unlabeled index split."""
    total = k + val_size + test_size
    if total > dataset.num_points:
        raise ValueError(f"split needs {total} points, dataset has {dataset.num_points}")
    perm = Rng(seed).split(_STREAM_SPLIT).permutation(dataset.num_points)
    return PoolSplit(
        pretrain_idx=np.sort(perm[:k]),
        val_idx=np.sort(perm[k : k + val_size]),
        test_idx=np.sort(perm[k + val_size : total]),
        unlabeled_idx=np.sort(perm[total:]),
    )


def feature_map(dataset: Dataset, kind: str = "raw", dim_out: int = 64, bandwidth: float = 1.0, seed: int = 0) -> Dataset:
    """raw = identity; random_fourier = cos(Wx + b) with seed-fixed W, b."""
    if kind == "raw":
        return dataset
    if kind != "random_fourier":
        raise ValueError(f"unknown feature map kind '{kind}'")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    rng = Rng(seed).split(_STREAM_FOURIER)
    w = rng.normal((dataset.feature_dim, dim_out)) / bandwidth
    b = 2.0 * np.pi * rng.uniform((dim_out,))
    feats = np.cos(dataset.features @ w + b)
    return Dataset(feats, dataset.labels, name=f"{dataset.name}_rff{dim_out}")
