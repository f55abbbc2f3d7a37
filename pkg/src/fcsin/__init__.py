"""Sketch inbetweening with pixel, sketch and region guidance."""

from .config import Config, GuidanceConfig, LossWeights, NetConfig, OptimConfig, TrainConfig
from .model import FCSIN
from .pipeline import extract_guidance, fcsin_forward

__all__ = [
    "Config",
    "FCSIN",
    "GuidanceConfig",
    "LossWeights",
    "NetConfig",
    "OptimConfig",
    "TrainConfig",
    "extract_guidance",
    "fcsin_forward",
]
__version__ = "0.1.0"
