"""Multi-view customer lifetime value prediction with contrastive losses, on numpy."""

from .data import Dataset, GeneratorConfig, SplitSpec, generate, read_csv, split, write_csv
from .metrics import MetricsReport, evaluate
from .model import BackboneConfig, CMLTVModel, HeadConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, predict, sweep, train

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "CMLTVModel",
    "Dataset",
    "GeneratorConfig",
    "HeadConfig",
    "MetricsReport",
    "SplitSpec",
    "TrainConfig",
    "evaluate",
    "generate",
    "load_checkpoint",
    "predict",
    "read_csv",
    "save_checkpoint",
    "split",
    "sweep",
    "train",
    "write_csv",
]
