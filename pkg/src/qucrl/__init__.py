"""Optimistic average-reward reinforcement learning with a simulated quantum
transition oracle, plus a classical baseline and regret tooling."""

from .agent import AgentConfig, run
from .mdp import Mdp, Policy, gain_bias, make_environment, stationary_distribution
from .planner import solve_known_model, solve_optimistic
from .quantum import EstimatorConfig

__all__ = [
    "AgentConfig",
    "EstimatorConfig",
    "Mdp",
    "Policy",
    "gain_bias",
    "make_environment",
    "run",
    "solve_known_model",
    "solve_optimistic",
    "stationary_distribution",
]
