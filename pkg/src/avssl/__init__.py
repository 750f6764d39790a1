"""Semi-supervised audio-visual action recognition on synthetic data, built
around localization-guided token mixup, confidence-gated consistency training,
and audio-visual contrastive alignment."""

__version__ = "0.1.0"

from .config import RunConfig
from .synthdata import DatasetBundle, GenConfig, generate_dataset, read_bundle, write_bundle
from .train import Trainer

__all__ = [
    "DatasetBundle",
    "GenConfig",
    "RunConfig",
    "Trainer",
    "generate_dataset",
    "read_bundle",
    "write_bundle",
    "__version__",
]
