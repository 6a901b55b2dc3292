"""Stability conditions and scheduler/controller co-design for wireless networked control."""
from .capacity_idle import check_stability_general, check_stability_perfect, check_stability_symmetric
from .capacity_mdp import CoDesign, NotStabilizableError, SufficientConditionNotMet, synthesize
from .control import max_dropout_rate, solve_dare
from .model import ConfigError, ContinuousPlant, SystemConfig, load_config, symmetric_config
from .simulator import empirical_dropout, simulate, stability_diagnostic

__all__ = [
    "CoDesign", "ConfigError", "ContinuousPlant", "NotStabilizableError",
    "SufficientConditionNotMet", "SystemConfig", "check_stability_general",
    "check_stability_perfect", "check_stability_symmetric", "empirical_dropout",
    "load_config", "max_dropout_rate", "simulate", "solve_dare", "stability_diagnostic",
    "symmetric_config", "synthesize",
]
