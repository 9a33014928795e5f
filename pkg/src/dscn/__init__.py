"""Spectral-convolution abundance estimation for hyperspectral pixels.

Library layout: layers (differentiable primitives), model (encoder/decoder
assembly), losses (spectral-angle objective and RMSE), optim (Adam and the
training loop), scene (synthetic data), fcls (constrained least-squares
oracle/baseline), hsio (file formats), gradcheck (finite-difference audit),
cli (command-line harness).
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ContractViolation, DomainError, DscnError,
                     FormatError, InputError, NumericalError, UsageError)
from .fcls import FclsConfig, StepRule, fcls_solve, fcls_unmix_cube, simplex_project
from .gradcheck import GradCheckReport, grad_check, run_all_checks
from .layers import MomentAxes, softmax
from .losses import (LossBreakdown, LossWeights, kl_term, loss_total,
                     rmse_per_material, sad, similarity)
from .model import (DscnModel, Fusion, ModelConfig, build_model,
                    decoder_forward, model_gradients)
from .optim import AdamState, TrainConfig, adam_step, train, unmix
from .scene import SceneSpec, linear_mix, make_endmembers, synth_scene

__all__ = [
    "AdamState", "ConfigError", "ContractViolation", "DomainError",
    "DscnError", "DscnModel", "FclsConfig", "FormatError", "Fusion",
    "GradCheckReport", "InputError", "LossBreakdown", "LossWeights",
    "ModelConfig", "MomentAxes", "NumericalError", "SceneSpec", "StepRule",
    "TrainConfig", "UsageError", "adam_step", "build_model", "decoder_forward",
    "fcls_solve", "fcls_unmix_cube", "grad_check", "kl_term", "linear_mix",
    "loss_total", "make_endmembers", "model_gradients", "rmse_per_material",
    "run_all_checks", "sad", "similarity", "simplex_project", "softmax",
    "synth_scene", "train", "unmix",
]
