"""
Exact Kalman filter for the linear Gaussian model.

Used as ground truth: the particle filters' likelihood estimates are
checked against kalman_loglik, and PMMH chains can be run with the exact
likelihood to separate sampler bugs from estimator noise.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .errors import DataError
from .models import LOG_2PI, LgParams


@dataclass(frozen=True)
class KalmanState:
    """Filtered moments of x_t given y_{1:t}, and log p(y_{1:t})."""

    mean: float
    variance: float
    loglik: float


# ============================================================================
# Recursions
# ============================================================================


def _check_observations(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 1:
        raise DataError("Kalman filter needs at least one observation")
    if not np.all(np.isfinite(y)):
        bad = int(np.flatnonzero(~np.isfinite(y))[0])
        raise DataError(f"Non-finite observation at index {bad}")
    return y


def initial_state(params: LgParams) -> KalmanState:
    """x_0 ~ N(0, sigma_v^2 / (1 - rho^2)) with an empty likelihood."""
    return KalmanState(mean=0.0, variance=params.sigma_v**2 / (1.0 - params.rho**2), loglik=0.0)


def kalman_step(state: KalmanState, params: LgParams, y: float) -> KalmanState:
    """
    One predict/update cycle in innovation form.

    Args:
        state: Filtered state at t.
        params: LG parameters.
        y: Observation y_{t+1}.

    Returns:
        Filtered state at t+1 with the log predictive density of y added.
    """
    pred_mean = params.rho * state.mean
    pred_var = params.rho**2 * state.variance + params.sigma_v**2

    innov = y - pred_mean
    innov_var = pred_var + params.sigma_eta**2
    gain = pred_var / innov_var

    loglik = state.loglik - 0.5 * (LOG_2PI + math.log(innov_var) + innov**2 / innov_var)
    return KalmanState(
        mean=pred_mean + gain * innov,
        variance=max((1.0 - gain) * pred_var, 0.0),
        loglik=loglik,
    )


def kalman_filter(params: LgParams, y: np.ndarray) -> list[KalmanState]:
    """
    Run the filter over y_{1:T}.

    Returns:
        One KalmanState per observation; the last one carries log p(y_{1:T}).

    Raises:
        DataError: If y is empty or contains a non-finite value.
    """
    y = _check_observations(y)
    state = initial_state(params)
    path = []
    for value in y:
        state = kalman_step(state, params, float(value))
        path.append(state)
    return path


def kalman_loglik(params: LgParams, y: np.ndarray) -> float:
    """Exact log p(y_{1:T} | theta) for the LG model."""
    return kalman_filter(params, y)[-1].loglik


def steady_state_variance(params: LgParams) -> float:
    """
    Positive fixed point of the predicted-variance Riccati recursion,
    mapped to the filtered variance it implies.
    """
    rho2, q, r = params.rho**2, params.sigma_v**2, params.sigma_eta**2
    # P = rho^2 * P * r / (P + r) + q  <=>  P^2 + (r - rho^2 r - q) P - q r = 0
    b = r * (1.0 - rho2) - q
    pred = 0.5 * (-b + math.sqrt(b * b + 4.0 * q * r))
    return pred * r / (pred + r)


# ============================================================================
# Brute-Force Oracle
# ============================================================================


def joint_gaussian_loglik(params: LgParams, y: np.ndarray) -> float:
    """
    log p(y_{1:T}) from the full T-dimensional Gaussian.

    With a stationary x_0 every x_t is stationary, so
    cov(y_s, y_t) = sigma_x^2 rho^|s-t| + sigma_eta^2 [s == t].
    """
    y = _check_observations(y)
    state_var = params.sigma_v**2 / (1.0 - params.rho**2)
    cov = linalg.toeplitz(state_var * params.rho ** np.arange(y.size))
    cov[np.diag_indices_from(cov)] += params.sigma_eta**2
    return float(stats.multivariate_normal(mean=np.zeros(y.size), cov=cov).logpdf(y))
