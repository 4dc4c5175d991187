"""Scene-aware class attention on a small numpy autodiff core."""

from sacanet.pipeline import SacaConfig, SacaModel, predict, saca_forward
from sacanet.profiler import profile
from sacanet.tensor import GradTape, Tensor

__version__ = "0.1.0"

__all__ = ["GradTape", "SacaConfig", "SacaModel", "Tensor", "predict", "profile", "saca_forward"]
