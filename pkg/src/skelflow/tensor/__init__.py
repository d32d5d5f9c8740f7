"""Small dense-tensor engine with reverse-mode differentiation."""

from . import ops
from .core import Tensor, as_tensor
from .gradcheck import GradCheckResult, grad_check, relative_error
from .kernels import BACKEND
from .nn import BatchNorm, Conv1d, Conv3d, Linear, Module, Parameter
from .optim import OptimizerState, PlateauDecay, StepDecay, sgd_step

__all__ = [
    "BACKEND",
    "BatchNorm",
    "Conv1d",
    "Conv3d",
    "GradCheckResult",
    "Linear",
    "Module",
    "OptimizerState",
    "Parameter",
    "PlateauDecay",
    "StepDecay",
    "Tensor",
    "as_tensor",
    "grad_check",
    "ops",
    "relative_error",
    "sgd_step",
]
