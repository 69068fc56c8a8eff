"""Utility-driven social network generation: social optimum, inverse recovery, agent-based simulation."""

from netforge.graph import CompatibilityList, MetricsReport, WeightList, compute_metrics
from netforge.utility import Alky, AlkyParams, UtilityModel

__version__ = "0.1.0"

__all__ = [
    "Alky", "AlkyParams", "CompatibilityList", "MetricsReport", "UtilityModel",
    "WeightList", "compute_metrics", "__version__",
]
