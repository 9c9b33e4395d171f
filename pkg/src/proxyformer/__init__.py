"""Proxy-query referring video object segmentation at desk scale."""

__version__ = "0.1.0"

from .config import RunConfig, load_config
from .estimator import ProxyFormer
from .metrics import EvalReport, evaluate
from .model import ModelConfig, ProxyFormerNet
from .synthdata import DataConfig, build_dataset, generate_scene, load_split, render

__all__ = [
    "DataConfig", "EvalReport", "ModelConfig", "ProxyFormer", "ProxyFormerNet", "RunConfig",
    "build_dataset", "evaluate", "generate_scene", "load_config", "load_split", "render",
]
