from .backend import available_backends, backend_name, get_backend
from .model import OdeNetModel
from .training import Trace, TrainConfig, adjoint_gradient, loss, rollout, train

__all__ = [
    "OdeNetModel",
    "Trace",
    "TrainConfig",
    "adjoint_gradient",
    "available_backends",
    "backend_name",
    "get_backend",
    "loss",
    "rollout",
    "train",
]
