"""TimeFormer forecasting with modulated (decaying, causal) self-attention."""

__version__ = "0.1.0"

from .attention import MoSABlock, MoSAConfig, hawkes_modulation
from .data import SeriesDataset, load_csv, normalize, synthetic
from .model import ModelConfig, TimeFormer, VanillaTransformer, build_variant
from .tensor import Tensor, no_grad
from .train_eval import TrainConfig, evaluate, train

__all__ = [
    "MoSABlock", "MoSAConfig", "hawkes_modulation", "SeriesDataset", "load_csv", "normalize", "synthetic",
    "ModelConfig", "TimeFormer", "VanillaTransformer", "build_variant", "Tensor", "no_grad", "TrainConfig",
    "evaluate", "train",
]
