"""Diffusion schedules, first-order ODE sampling, rectification and distillation at toy scale."""

from .oracle import ConstantEps, GaussianMixture, GMMOracle, mixture_preset
from .schedule import DomainError, Schedule, convert_prediction, forward_diffuse, make_schedule
from .solver import first_order_step, make_grid, sample

__version__ = "0.1.0"

__all__ = [
    "ConstantEps",
    "DomainError",
    "GMMOracle",
    "GaussianMixture",
    "Schedule",
    "convert_prediction",
    "first_order_step",
    "forward_diffuse",
    "make_grid",
    "make_schedule",
    "mixture_preset",
    "sample",
]
