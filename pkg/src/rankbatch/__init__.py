"""Single-round batch active learning with a learned set-ranking utility model."""

from .config import ExperimentConfig, build_dataset
from .datasets import Dataset, LabelGate, PoolSplit, make_split

__all__ = [
    "Dataset",
    "ExperimentConfig",
    "LabelGate",
    "PoolSplit",
    "build_dataset",
    "make_split",
]

__version__ = "0.1.0"
