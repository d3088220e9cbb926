"""Safe Bayesian-optimization tuning of a neural-cost MPC on a double pendulum."""

from . import dynamics, gp, harness, mpc, neural_cost, safe_bo, stability

__all__ = [
    "dynamics",
    "gp",
    "harness",
    "mpc",
    "neural_cost",
    "safe_bo",
    "stability",
]
