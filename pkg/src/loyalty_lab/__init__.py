"""Steady-state analytics, simulation and threshold learning for buy-N-get-one-free loyalty programs."""

from .model import Instance, LinkKind, TypeSpec, validate_instance
from .steady_state import (
    INFINITY,
    long_run_revenue_type,
    mixture_revenue,
    optimal_personalized,
    optimal_threshold,
    price_of_fairness,
    stationary_distribution,
)

__version__ = "0.1.0"
