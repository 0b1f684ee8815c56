"""Info-aware simultaneous translation on a small numpy autodiff core."""

from .latency import LatencyReport, average_lagging, average_proportion, consecutive_wait, differentiable_average_lagging
from .model import InfoTransformer, ModelConfig, ModelTranslator
from .policy import CatchUp, Schedule, WaitInfo, WaitK, simulate
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "LatencyReport", "average_lagging", "average_proportion", "consecutive_wait",
    "differentiable_average_lagging", "InfoTransformer", "ModelConfig", "ModelTranslator",
    "CatchUp", "Schedule", "WaitInfo", "WaitK", "simulate", "TrainConfig", "train",
]
