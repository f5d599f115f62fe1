"""Objective-Bayesian inference for sequential age-structured population models."""

from .model import (
    DomainError,
    Dynamics,
    ModelConfig,
    ModelError,
    NuisanceParams,
    ObservationModel,
    ObservedData,
    PopulationState,
    default_model,
    log_likelihood,
    observe_catch,
    observe_survey,
    simulate_dynamics,
)
from .priors import PriorKind, PriorSpec, log_prior

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "Dynamics",
    "ModelConfig",
    "ModelError",
    "NuisanceParams",
    "ObservationModel",
    "ObservedData",
    "PopulationState",
    "PriorKind",
    "PriorSpec",
    "default_model",
    "log_likelihood",
    "log_prior",
    "observe_catch",
    "observe_survey",
    "simulate_dynamics",
]
