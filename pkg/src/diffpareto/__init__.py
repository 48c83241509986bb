"""Diffusion adaptation for distributed Pareto optimization.

Modules
-------
topology   graphs and combination matrices
operators  combination / gradient-descent / power operators and fixed points
costs      cost families with exact gradients, Hessians and gradient noise
strategies ATC, CTA, general diffusion, consensus and centralized recursions
analysis   step-size limits, bias, MSP bounds and steady-state MSE
config     YAML experiment documents
cli        command-line entry point
"""

from .analysis import (
    bias_fixed_point,
    check_zero_bias_condition,
    msp_bound_trajectory,
    performance_report,
    steady_state_mse,
    steady_state_operators,
)
from .config import ExperimentConfig, load_config
from .costs import FinanceCost, QuadraticCost, Role, SoftplusBarrier
from .operators import GradientDescentSpec, combine, diffuse, find_fixed_point, power
from .strategies import LearningCurve, StrategyConfig, run_monte_carlo, solve_reference_optimum
from .topology import NetworkTopology, build_random_geometric, metropolis_matrix

__version__ = "0.1.0"
