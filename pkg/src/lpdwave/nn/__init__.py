from . import checkpoint, engine, layers, models, optim
from .engine import (NotOnTape, SecondOrderUnsupportedOp, ShapeMismatch,
                     Tensor, grad, no_grad)
from .models import Critic, Detector, Generator, Topology, build

__all__ = [
    "Tensor", "grad", "no_grad", "Topology", "build",
    "Generator", "Critic", "Detector",
    "NotOnTape", "ShapeMismatch", "SecondOrderUnsupportedOp",
    "engine", "layers", "models", "optim", "checkpoint",
]
