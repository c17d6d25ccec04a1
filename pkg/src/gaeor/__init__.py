"""Fine-grained recognition with saliency amplification and polar pattern supervision."""

from .backbone import Backbone, BackboneConfig
from .data import AugmentConfig, Benchmark, generate_synthetic, load_image_folder, save_benchmark
from .estimator import GAEorClassifier
from .exceptions import ConfigurationError, DataError, GAEorError, NumericError
from .model import Components, GAEorNet, LossWeights, forward_step
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "Backbone",
    "BackboneConfig",
    "Benchmark",
    "Components",
    "ConfigurationError",
    "DataError",
    "GAEorClassifier",
    "GAEorError",
    "GAEorNet",
    "LossWeights",
    "NumericError",
    "TrainConfig",
    "evaluate",
    "forward_step",
    "generate_synthetic",
    "load_image_folder",
    "save_benchmark",
    "train",
]
