"""
Particle filters and particle-marginal Metropolis-Hastings for nonlinear
state space models.

Bootstrap, fully adapted, unscented, data-driven and unscented data-driven
particle filters for the linear Gaussian, stochastic conditional duration
and stochastic volatility models, with PMMH estimation, particle count
calibration and one-step-ahead density forecasts.
"""

__version__ = "0.1.0"
