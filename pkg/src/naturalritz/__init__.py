"""Penalty-free deep Ritz solver for essential boundary and interface
problems, with penalty deep Ritz and strong-form baselines and an
independent finite-difference oracle."""

from .network import NetworkSpec, ParamSet, init_params, forward, forward_grad
from .problems import ProblemSpec, make_example
from .quadrature import QuadratureSet, build_quadrature
from .losses import (
    NetPack,
    SolutionTriplet,
    natural_loss,
    loss_stage1,
    loss_stage2,
    loss_stage3,
    loss_drm,
    loss_pinn,
    constant_correction,
    predict,
)
from .runner import ExperimentConfig, parse_config, run_experiment

__version__ = "0.1.0"

__all__ = [
    "NetworkSpec",
    "ParamSet",
    "init_params",
    "forward",
    "forward_grad",
    "ProblemSpec",
    "make_example",
    "QuadratureSet",
    "build_quadrature",
    "NetPack",
    "SolutionTriplet",
    "natural_loss",
    "loss_stage1",
    "loss_stage2",
    "loss_stage3",
    "loss_drm",
    "loss_pinn",
    "constant_correction",
    "predict",
    "ExperimentConfig",
    "parse_config",
    "run_experiment",
    "__version__",
]
