"""Extreme conditional quantile regression.

Bivariate extreme-value regression lines, Bernstein angular densities fitted
by MCMC, and a neural GPD tail model on top of forest intermediate quantiles.
"""

__version__ = "0.1.0"

from .bev_models import ColesTawn, HuslerReiss, Logistic, conditional_cdf, conditional_quantile
from .gpd_tail import GpdParams, OrthoGpdParams, extrapolate_quantile
from .scenario_sim import SeriesDataset, simulate_scenario

__all__ = [
    "ColesTawn", "HuslerReiss", "Logistic", "conditional_cdf", "conditional_quantile",
    "GpdParams", "OrthoGpdParams", "extrapolate_quantile", "SeriesDataset", "simulate_scenario",
    "__version__",
]
