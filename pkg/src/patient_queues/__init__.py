"""Aging rates, Nash equilibria and price-of-anarchy checks for patient queuing games."""

from .instances import Instance, random_feasible, scale, symmetric_instance, uniform_profile
from .rates import RatePartition, compute_rates, f_ratio

__version__ = "0.1.0"

__all__ = [
    "Instance",
    "RatePartition",
    "compute_rates",
    "f_ratio",
    "random_feasible",
    "scale",
    "symmetric_instance",
    "uniform_profile",
]
