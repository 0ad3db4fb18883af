"""
Sigma points and unscented moments.

Two constructions live here:

- Moment-matched 1-D sigma points for a measurement error law. Points
  span the support of eta and the weights solve the linear system that
  matches the first M-1 central moments. These drive the UDPF's Gaussian
  approximation of the measurement density in x.
- The scaled symmetric sigma-point set for an n-dimensional Gaussian,
  used by the UPF over the (state, measurement error) pair.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateMomentsError, SigmaPointError
from .models import ErrorLaw, ModelSpec

logger = logging.getLogger(__name__)

# Offsets (in error sds) of the sigma points before support shrinking
_BASE_SPREAD = {3: math.sqrt(3.0)}
# Lowest point on a bounded support sits at this fraction of the mean's distance to the bound
_SUPPORT_MARGIN = 0.05


# ============================================================================
# Domain Types
# ============================================================================


@dataclass(frozen=True)
class SigmaPointSet:
    """Weighted 1-D sigma points matching the first M-1 moments of an error law."""

    points: np.ndarray
    weights: np.ndarray
    law: ErrorLaw | None = None

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def size(self) -> int:
        return int(self.points.size)

    @property
    def mean(self) -> float:
        return float(self.weights @ self.points)

    @property
    def variance(self) -> float:
        return float(self.weights @ (self.points - self.mean) ** 2)

    def central_moment(self, k: int) -> float:
        return float(self.weights @ (self.points - self.mean) ** k)


@dataclass(frozen=True)
class GaussianMoments:
    """Mean and variance of a Gaussian approximation (scalars or per-particle arrays)."""

    mean: float | np.ndarray
    variance: float | np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.variance) <= 0) or np.any(np.isnan(self.variance)):
            raise DegenerateMomentsError(f"Gaussian variance must be positive, got {self.variance}")


# ============================================================================
# Moment-Matched Sigma Points
# ============================================================================


def default_order(law: ErrorLaw) -> int:
    """Default number of sigma points: 3 for symmetric laws, 5 otherwise."""
    return 3 if law.is_symmetric else 5


def _unit_offsets(M: int) -> np.ndarray:
    offsets = np.arange(M, dtype=float) - (M - 1) / 2.0
    return offsets * _BASE_SPREAD.get(M, 1.0)


@lru_cache(maxsize=64)
def build_sigma_points(law: ErrorLaw, M: int | None = None) -> SigmaPointSet:
    """
    Construct sigma points and moment-matching weights for an error law.

    Points sit at mu + sigma * u_k for evenly spaced offsets u_k (with
    spread sqrt(3) when M = 3). On a support bounded below, the points
    under the mean are pulled towards the mean until they are inside the
    support. Weights solve sum_k Q_k (eta_k - mu)^i = E[(eta - mu)^i] for
    i = 0..M-1. Results are cached per (law, M).

    Args:
        law: Measurement error law.
        M: Number of points (>= 2). Defaults to default_order(law).

    Returns:
        The sigma point set.

    Raises:
        SigmaPointError: If M < 2, the moments are not finite, or the
            moment system is singular.
    """
    if M is None:
        M = default_order(law)
    if M < 2:
        raise SigmaPointError(f"Need at least 2 sigma points, got {M}")

    dist = law.frozen()
    mu, sigma = float(dist.mean()), float(dist.std())
    moments = law.central_moments(M - 1)
    if not (np.all(np.isfinite(moments)) and math.isfinite(mu) and sigma > 0):
        raise SigmaPointError(f"Moments of {law} up to order {M - 1} are not finite")

    offsets = _unit_offsets(M)
    lowest = mu + sigma * offsets.min()
    if lowest <= law.lower_bound:
        shrink = (1.0 - _SUPPORT_MARGIN) * (mu - law.lower_bound) / (mu - lowest)
        offsets = np.where(offsets < 0, offsets * shrink, offsets)

    # Solve on the standardized scale for conditioning
    powers = np.arange(M)
    design = offsets[np.newaxis, :] ** powers[:, np.newaxis]
    target = moments / sigma**powers

    weights, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < M:
        raise SigmaPointError(f"Sigma-point moment system for {law} is singular (rank {rank} < {M})")

    points = mu + sigma * offsets
    logger.debug("Sigma points for %s: points=%s weights=%s", law, points, weights)
    return SigmaPointSet(points=points, weights=weights, law=law)


def model_sigma_points(model: ModelSpec, M: int | None = None) -> SigmaPointSet:
    """Sigma points for a model's measurement error law."""
    return build_sigma_points(model.error_law, M)


# ============================================================================
# Unscented Measurement Moments
# ============================================================================


def _weighted_moments(x: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    total = weights.sum()
    mean = float(weights @ x / total)
    return mean, float(weights @ (x - mean) ** 2 / total)


def unscented_measurement_moments(
    model: ModelSpec, y: float, sigma: SigmaPointSet
) -> GaussianMoments:
    """
    Moments of the density in x proportional to p(y | x).

    Each sigma point eta_k is mapped to x_k = x(y, eta_k) and weighted by
    Q_k * |dh/dx|^-1 at x_k; mean and variance are the normalized weighted
    averages.

    Args:
        model: Model specification.
        y: Observation.
        sigma: Sigma points for the model's error law.

    Returns:
        Gaussian moments (mu_M, sigma_M^2).

    Raises:
        MeasurementDomainError: If some sigma point cannot be inverted at y.
        DegenerateMomentsError: If the variance is not positive even after
            falling back to the positive weights.
    """
    x, jac_inv = model.invert_measurement(y, sigma.points)
    weights = sigma.weights * jac_inv
    mean, var = _weighted_moments(x, weights)

    if not var > 0:
        positive = np.clip(weights, 0.0, None)
        if positive.sum() > 0:
            mean, var = _weighted_moments(x, positive)
        logger.warning(
            "Unscented variance was not positive at y=%g; using positive weights only (var=%g)",
            y,
            var,
        )
        if not var > 0:
            raise DegenerateMomentsError(f"Unscented measurement variance is {var} at y={y}")

    return GaussianMoments(mean=mean, variance=var)


def conjugate_combine(prior: GaussianMoments, likelihood: GaussianMoments) -> GaussianMoments:
    """
    Precision-weighted combination of two Gaussian factors in x.

    Works elementwise when either argument holds per-particle arrays.
    """
    vp = np.asarray(prior.variance, dtype=float)
    vm = np.asarray(likelihood.variance, dtype=float)
    total = vp + vm
    mean = (vp * likelihood.mean + vm * prior.mean) / total
    variance = vm * vp / total
    if np.ndim(mean) == 0 and np.ndim(variance) == 0:
        return GaussianMoments(mean=float(mean), variance=float(variance))
    return GaussianMoments(mean=mean, variance=variance)


# ============================================================================
# Scaled Symmetric Sigma Points (n-dimensional)
# ============================================================================


@dataclass(frozen=True)
class ScaledSigmaWeights:
    """Unit offsets and weights for the scaled symmetric unscented set."""

    offsets: np.ndarray
    mean_weights: np.ndarray
    cov_weights: np.ndarray


@lru_cache(maxsize=8)
def scaled_sigma_weights(
    n: int, alpha: float = 1.0, beta: float = 0.0, kappa: float = 1.0
) -> ScaledSigmaWeights:
    """
    The 2n+1 point scaled set: offsets 0 and +-sqrt(n + lambda) e_i with
    lambda = alpha^2 (n + kappa) - n.

    Returns:
        Offsets of shape (2n+1, n) and the mean/covariance weight vectors.
    """
    lam = alpha**2 * (n + kappa) - n
    spread = math.sqrt(n + lam)
    eye = np.eye(n)
    offsets = np.vstack([np.zeros(n), spread * eye, -spread * eye])

    mean_weights = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    mean_weights[0] = lam / (n + lam)
    cov_weights = mean_weights.copy()
    cov_weights[0] += 1.0 - alpha**2 + beta
    return ScaledSigmaWeights(offsets=offsets, mean_weights=mean_weights, cov_weights=cov_weights)


def unscented_transform(sigmas: np.ndarray, mean_weights: np.ndarray, cov_weights: np.ndarray):
    """
    Weighted mean and variance of transformed sigma points.

    Args:
        sigmas: Transformed points of shape (n_points, ...); the leading axis
            indexes the sigma points, trailing axes are batched.
        mean_weights: Weights for the mean.
        cov_weights: Weights for the variance.

    Returns:
        Tuple (mean, variance) with the batch shape.
    """
    mean = np.tensordot(mean_weights, sigmas, axes=1)
    resid = sigmas - mean
    return mean, np.tensordot(cov_weights, resid**2, axes=1)


def gaussian_condition(
    prior_mean: np.ndarray,
    prior_var: np.ndarray | float,
    error_mean: float,
    error_var: float,
    z: float,
) -> GaussianMoments:
    """
    Condition a Gaussian state on an observation z = x + eps through the
    scaled unscented set over (x, eps).

    Args:
        prior_mean: Per-particle prior means of x.
        prior_var: Prior variance(s) of x.
        error_mean: Mean of eps.
        error_var: Variance of eps.
        z: Observed value.

    Returns:
        Per-particle conditioned moments.

    Raises:
        DegenerateMomentsError: If a conditioned variance is not positive.
    """
    prior_mean = np.asarray(prior_mean, dtype=float)
    prior_var = np.broadcast_to(np.asarray(prior_var, dtype=float), prior_mean.shape)

    unit = scaled_sigma_weights(2)
    x_pts = prior_mean[np.newaxis, :] + unit.offsets[:, [0]] * np.sqrt(prior_var)[np.newaxis, :]
    e_pts = error_mean + unit.offsets[:, [1]] * math.sqrt(error_var)
    z_pts = x_pts + e_pts

    z_mean, z_var = unscented_transform(z_pts, unit.mean_weights, unit.cov_weights)
    x_mean = np.tensordot(unit.mean_weights, x_pts, axes=1)
    cross = np.tensordot(unit.cov_weights, (x_pts - x_mean) * (z_pts - z_mean), axes=1)

    gain = cross / z_var
    post_mean = x_mean + gain * (z - z_mean)
    post_var = prior_var - gain**2 * z_var
    if np.any(post_var <= 0) or not np.all(np.isfinite(post_var)):
        raise DegenerateMomentsError("Conditioned proposal variance is not positive")
    return GaussianMoments(mean=post_mean, variance=post_var)
