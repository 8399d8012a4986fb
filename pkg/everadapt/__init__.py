import os
from typing import TYPE_CHECKING

from monkay import Monkay

from .__about__ import __version__
from .exceptions import ConfigError, EverAdaptError, MissingArtifactError

if TYPE_CHECKING:
    from .data import DomainDataset, DomainSpec, generate_domain, segment_signal
    from .evaluation import ResultMatrix, acc_metric, adapt_metric, bwt_metric
    from .losses import KernelConfig, LossWeights
    from .models import Model, ModelSpec, build_model
    from .replay import ReplayBuffer
    from .settings import EverAdaptSettings
    from .tensor import Graph, Tensor, backward
    from .trainer import AdaptationRun, TrainConfig, run_sequence

__all__ = [
    "AdaptationRun",
    "ConfigError",
    "DomainDataset",
    "DomainSpec",
    "EverAdaptError",
    "EverAdaptSettings",
    "Graph",
    "KernelConfig",
    "LossWeights",
    "MissingArtifactError",
    "Model",
    "ModelSpec",
    "ReplayBuffer",
    "ResultMatrix",
    "Tensor",
    "TrainConfig",
    "__version__",
    "acc_metric",
    "adapt_metric",
    "backward",
    "build_model",
    "bwt_metric",
    "generate_domain",
    "run_sequence",
    "segment_signal",
    "settings",
]

monkay: Monkay[None, "EverAdaptSettings"] = Monkay(
    globals(),
    settings_path=lambda: os.environ.get(
        "EVERADAPT_SETTINGS_MODULE", "everadapt.settings:EverAdaptSettings"
    ),
    uncached_imports=["settings"],
    lazy_imports={
        "AdaptationRun": ".trainer:AdaptationRun",
        "DomainDataset": ".data:DomainDataset",
        "DomainSpec": ".data:DomainSpec",
        "EverAdaptSettings": ".settings:EverAdaptSettings",
        "Graph": ".tensor:Graph",
        "KernelConfig": ".losses:KernelConfig",
        "LossWeights": ".losses:LossWeights",
        "Model": ".models:Model",
        "ModelSpec": ".models:ModelSpec",
        "ReplayBuffer": ".replay:ReplayBuffer",
        "ResultMatrix": ".evaluation:ResultMatrix",
        "Tensor": ".tensor:Tensor",
        "TrainConfig": ".trainer:TrainConfig",
        "acc_metric": ".evaluation:acc_metric",
        "adapt_metric": ".evaluation:adapt_metric",
        "backward": ".tensor:backward",
        "build_model": ".models:build_model",
        "bwt_metric": ".evaluation:bwt_metric",
        "generate_domain": ".data:generate_domain",
        "run_sequence": ".trainer:run_sequence",
        "segment_signal": ".data:segment_signal",
        "settings": lambda: monkay.settings,
    },
)
