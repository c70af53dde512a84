"""Broad critic deep actor (BCDA) reinforcement learning.

The critic is a broad learning system fit by ridge regression and grown
incrementally; the actor is a small feedforward network trained by the
deterministic policy gradient. A DDPG agent is included as the baseline.
"""

from .agents import AgentConfig, BcdaAgent, DdpgAgent, make_agent
from .bls import BlsGrowthPlan, BlsNet, bls_forward, bls_init, fit_output_weights
from .envs import InvertedPendulum, Reacher, make_env
from .errors import (
    BcdaError, ConfigError, DimensionMismatch, InsufficientData, MisalignedTrials,
    NumericalFailure, StaleCache,
)
from .harness import ExperimentConfig, load_config, run_experiment, run_trial

__version__ = "0.1.0"

__all__ = [
    "AgentConfig", "BcdaAgent", "DdpgAgent", "make_agent",
    "BlsGrowthPlan", "BlsNet", "bls_forward", "bls_init", "fit_output_weights",
    "InvertedPendulum", "Reacher", "make_env",
    "BcdaError", "ConfigError", "DimensionMismatch", "InsufficientData", "MisalignedTrials",
    "NumericalFailure", "StaleCache",
    "ExperimentConfig", "load_config", "run_experiment", "run_trial",
]
