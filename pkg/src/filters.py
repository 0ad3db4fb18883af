"""
Particle filters for the scalar-state models in src.models.

Five step kernels share one contract: take the normalized cloud at t and
y_{t+1}, return the weighted (normalized) cloud at t+1 together with the
log of the likelihood increment sum_j w_{t+1}^{[j]}. run_filter chains a
kernel over y_{1:T}, resampling after every step, and sums the log
increments into the log-likelihood estimate used by PMMH.

    BPF   proposal = transition density
    FAPF  fully adapted auxiliary filter (LG only)
    UPF   Gaussian proposal from an unscented update on the log-linear form
    DPF   proposal from inverting the measurement equation at simulated errors
    UDPF  DPF-style Gaussian measurement factor combined with the transition

All weight arithmetic is done in log space.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import special

from .config import SeedLike, derive_rng
from .errors import ConfigError, DataError, DegeneracyError, UnsupportedModelError
from .models import LgModel, LgParams, ModelFamily, ModelSpec, normal_logpdf
from .unscented import (
    GaussianMoments,
    SigmaPointSet,
    build_sigma_points,
    conjugate_combine,
    gaussian_condition,
    unscented_measurement_moments,
)

logger = logging.getLogger(__name__)


# ============================================================================
# Configuration
# ============================================================================


class FilterKind(str, Enum):
    """Particle filter identifiers."""

    BPF = "bpf"
    FAPF = "fapf"
    UPF = "upf"
    DPF = "dpf"
    UDPF = "udpf"


class ResamplingScheme(str, Enum):
    MULTINOMIAL = "multinomial"
    # Lower variance, but outside the unbiasedness argument
    SYSTEMATIC = "systematic"


class FilterOptions(BaseModel):
    """Per-filter tuning knobs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    L: int = Field(1, ge=1, description="DPF matches per particle")
    sigma_order: int | None = Field(None, ge=2, description="UDPF sigma points (None: by error law)")
    resampling: ResamplingScheme = ResamplingScheme.MULTINOMIAL


# ============================================================================
# Domain Types
# ============================================================================


@dataclass
class ParticleCloud:
    """N particles with normalized weights approximating p(x_t | y_{1:t})."""

    particles: np.ndarray
    weights: np.ndarray
    t: int = 0

    @classmethod
    def uniform(cls, particles: np.ndarray, t: int = 0) -> "ParticleCloud":
        particles = np.asarray(particles, dtype=float)
        return cls(particles=particles, weights=np.full(particles.size, 1.0 / particles.size), t=t)

    @classmethod
    def from_log_weights(
        cls, particles: np.ndarray, log_weights: np.ndarray, t: int
    ) -> tuple["ParticleCloud", float]:
        """
        Normalize unnormalized log weights.

        Returns:
            Tuple (cloud, log sum of the unnormalized weights). A cloud whose
            weights are all zero (or not finite) comes back with uniform
            weights and a log sum of -inf.
        """
        log_weights = np.where(np.isnan(log_weights), -np.inf, log_weights)
        log_total = float(special.logsumexp(log_weights))
        if not math.isfinite(log_total):
            return cls.uniform(particles, t), -math.inf

        weights = np.exp(log_weights - log_total)
        weights /= weights.sum()
        return cls(particles=particles, weights=weights, t=t), log_total

    @property
    def N(self) -> int:
        return int(self.particles.size)

    @property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def mean(self) -> float:
        return float(self.weights @ self.particles)

    def variance(self) -> float:
        return float(self.weights @ (self.particles - self.mean()) ** 2)

    def ess(self) -> float:
        """Effective sample size 1 / sum(pi^2)."""
        return float(1.0 / np.sum(self.weights**2))


@dataclass
class FilterRun:
    """Output of one pass of a particle filter over y_{1:T}."""

    kind: FilterKind
    loglik: float
    increments: np.ndarray
    cloud: ParticleCloud
    elapsed: float
    filtered_means: np.ndarray = field(default_factory=lambda: np.empty(0))
    degenerate: bool = False

    @property
    def n_particles(self) -> int:
        return self.cloud.N


@dataclass(frozen=True)
class MatchPlan:
    """L cyclic rotations of the particle indices used for DPF matching."""

    N: int
    L: int

    @property
    def indices(self) -> np.ndarray:
        """0-based index matrix of shape (L, N); row l holds K_{l+1} - 1."""
        return (np.arange(self.N)[np.newaxis, :] + np.arange(self.L)[:, np.newaxis]) % self.N

    @property
    def permutations(self) -> list[tuple[int, ...]]:
        """The rotations K_1..K_L as 1-based tuples."""
        return [tuple(int(k) + 1 for k in row) for row in self.indices]


def cyclic_permutations(N: int, L: int) -> MatchPlan:
    """
    Build the DPF match plan K_l(j) = ((j - 1 + l - 1) mod N) + 1.

    Raises:
        ConfigError: If N < 1 or L is outside [1, N].
    """
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    if not 1 <= L <= N:
        raise ConfigError(f"L must lie in [1, N={N}], got {L}")
    return MatchPlan(N=N, L=L)


# ============================================================================
# Resampling
# ============================================================================


def systematic_indices(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling indices (low variance)."""
    N = weights.size
    cumsum = np.cumsum(weights)
    u = rng.uniform(0, 1.0 / N) + np.arange(N) / N
    return np.clip(np.searchsorted(cumsum, u), 0, N - 1)


def resample_indices(
    weights: np.ndarray,
    rng: np.random.Generator,
    scheme: ResamplingScheme = ResamplingScheme.MULTINOMIAL,
) -> np.ndarray:
    """Draw ancestor indices according to normalized weights."""
    total = float(np.sum(weights))
    if not total > 0 or not math.isfinite(total):
        raise DegeneracyError("Cannot resample: all particle weights are zero")
    if scheme is ResamplingScheme.SYSTEMATIC:
        return systematic_indices(weights / total, rng)
    N = weights.size
    return rng.choice(N, size=N, p=weights / total)


def resample(
    cloud: ParticleCloud,
    rng: np.random.Generator,
    scheme: ResamplingScheme = ResamplingScheme.MULTINOMIAL,
) -> ParticleCloud:
    """
    Resample N particles by their weights and reset the weights to 1/N.

    Raises:
        DegeneracyError: If every weight is zero.
    """
    idx = resample_indices(cloud.weights, rng, scheme)
    return ParticleCloud.uniform(cloud.particles[idx], cloud.t)


# ============================================================================
# Step Kernels
# ============================================================================


def bpf_step(
    cloud: ParticleCloud, model: ModelSpec, y_next: float, rng: np.random.Generator
) -> tuple[ParticleCloud, float]:
    """Bootstrap step: propose from p(x_{t+1} | x_t), weight by p(y_{t+1} | x_{t+1})."""
    x_new = model.sample_transition(cloud.particles, rng)
    log_w = cloud.log_weights + model.log_measurement_density(x_new, y_next)
    return ParticleCloud.from_log_weights(x_new, log_w, cloud.t + 1)


def fapf_step(
    cloud: ParticleCloud,
    model: ModelSpec | LgParams,
    y_next: float,
    rng: np.random.Generator,
    scheme: ResamplingScheme = ResamplingScheme.MULTINOMIAL,
) -> tuple[ParticleCloud, float]:
    """
    Fully adapted auxiliary step for the LG model.

    Ancestors are drawn with probability proportional to
    pi_t^{[k]} N(y_{t+1}; rho x_t^{[k]}, sigma_v^2 + sigma_eta^2), and new
    particles come from the exact p(x_{t+1} | x_t^{[k]}, y_{t+1}). The
    returned cloud carries uniform weights.

    Raises:
        UnsupportedModelError: If the model is not LG.
    """
    if isinstance(model, LgParams):
        model = LgModel(model)
    if model.family is not ModelFamily.LG:
        raise UnsupportedModelError(f"FAPF is only available for LG, not {model.family.value}")

    state_var = model.sigma_v**2
    noise_var = model.sigma_eta**2
    total_var = state_var + noise_var
    prior_mean = model.transition_mean(cloud.particles)

    log_pred = cloud.log_weights + normal_logpdf(y_next, prior_mean, total_var)
    log_total = float(special.logsumexp(log_pred))
    if not math.isfinite(log_total):
        return ParticleCloud.uniform(cloud.particles, cloud.t + 1), -math.inf

    idx = resample_indices(np.exp(log_pred - log_total), rng, scheme)
    post_mean = (noise_var * prior_mean[idx] + state_var * y_next) / total_var
    post_sd = math.sqrt(state_var * noise_var / total_var)
    x_new = post_mean + post_sd * rng.standard_normal(cloud.N)
    return ParticleCloud.uniform(x_new, cloud.t + 1), log_total


def upf_step(
    cloud: ParticleCloud, model: ModelSpec, y_next: float, rng: np.random.Generator
) -> tuple[ParticleCloud, float]:
    """
    Unscented step: per-particle Gaussian proposal from conditioning the
    transition prior on the transformed observable z = x + eps, with eps
    moment-matched to the model's transformed measurement error.

    Weights use the exact transition and measurement densities.
    """
    z = float(model.observable(y_next))
    if not math.isfinite(z):
        logger.debug("Observable is not finite at y=%g; UPF step uses the transition", y_next)
        return bpf_step(cloud, model, y_next, rng)

    error_mean, error_var = model.observable_error_moments()
    prior_mean = model.transition_mean(cloud.particles)
    proposal = gaussian_condition(prior_mean, model.sigma_v**2, error_mean, error_var, z)

    x_new = proposal.mean + np.sqrt(proposal.variance) * rng.standard_normal(cloud.N)
    log_w = (
        cloud.log_weights
        + model.log_measurement_density(x_new, y_next)
        + model.log_transition_density(cloud.particles, x_new)
        - normal_logpdf(x_new, proposal.mean, proposal.variance)
    )
    return ParticleCloud.from_log_weights(x_new, log_w, cloud.t + 1)


def dpf_log_weights(
    cloud: ParticleCloud,
    model: ModelSpec,
    y_next: float,
    eta: np.ndarray,
    plan: MatchPlan,
) -> tuple[np.ndarray, np.ndarray]:
    """
    DPF particles and unnormalized log weights for given measurement errors.

    w^{[j]} = (jac_inv^{[j]} / n_roots) (1/L) sum_l pi_t^{[k_l(j)]} p(x^{[j]} | x_t^{[k_l(j)]})

    Returns:
        Tuple (x_new, log_w).
    """
    if plan.N != cloud.N:
        raise ConfigError(f"Match plan is for N={plan.N}, cloud has N={cloud.N}")

    x_new, jac_inv = model.invert_measurement(y_next, eta)
    idx = plan.indices
    log_match = cloud.log_weights[idx] + model.log_transition_density(
        cloud.particles[idx], x_new[np.newaxis, :]
    )
    log_w = (
        np.log(jac_inv / model.n_roots)
        + special.logsumexp(log_match, axis=0)
        - math.log(plan.L)
    )
    return x_new, log_w


def dpf_step(
    cloud: ParticleCloud,
    model: ModelSpec,
    y_next: float,
    plan: MatchPlan,
    rng: np.random.Generator,
) -> tuple[ParticleCloud, float]:
    """
    Data-driven step: simulate eta, invert the measurement equation at
    y_{t+1}, and weight each new particle against L matched ancestors.

    Raises:
        MeasurementDomainError: If y_{t+1} cannot be inverted.
    """
    model.check_observation(y_next)
    eta = model.sample_error(rng, cloud.N)
    x_new, log_w = dpf_log_weights(cloud, model, y_next, eta, plan)
    return ParticleCloud.from_log_weights(x_new, log_w, cloud.t + 1)


def udpf_step(
    cloud: ParticleCloud,
    model: ModelSpec,
    y_next: float,
    sigma: SigmaPointSet,
    rng: np.random.Generator,
) -> tuple[ParticleCloud, float]:
    """
    Unscented data-driven step.

    The measurement factor N(x; mu_M, sigma_M^2) comes from the unscented
    moments at y_{t+1} and is shared by all particles; each particle
    combines it with its own transition moments (phi + rho x_t, sigma_v^2)
    to form the Gaussian proposal.

    Raises:
        MeasurementDomainError: If y_{t+1} or a sigma point cannot be inverted.
        DegenerateMomentsError: If the unscented variance is not positive.
    """
    model.check_observation(y_next)
    measurement = unscented_measurement_moments(model, y_next, sigma)
    prior = GaussianMoments(mean=model.transition_mean(cloud.particles), variance=model.sigma_v**2)
    proposal = conjugate_combine(prior, measurement)

    x_new = proposal.mean + math.sqrt(proposal.variance) * rng.standard_normal(cloud.N)
    log_w = (
        cloud.log_weights
        + model.log_measurement_density(x_new, y_next)
        + model.log_transition_density(cloud.particles, x_new)
        - normal_logpdf(x_new, proposal.mean, proposal.variance)
    )
    return ParticleCloud.from_log_weights(x_new, log_w, cloud.t + 1)


# ============================================================================
# Full-Sequence Runner
# ============================================================================


def _check_series(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 1:
        raise DataError("Need at least one observation")
    if not np.all(np.isfinite(y)):
        bad = int(np.flatnonzero(~np.isfinite(y))[0])
        raise DataError(f"Non-finite observation at index {bad}")
    return y


def run_filter(
    kind: FilterKind | str,
    model: ModelSpec,
    y: np.ndarray,
    N: int,
    options: FilterOptions | None = None,
    seed: SeedLike = 0,
) -> FilterRun:
    """
    Run a particle filter over y_{1:T}.

    The cloud starts from N draws of p(x_0) with weights 1/N. Every step
    computes the likelihood increment before normalizing, and the cloud is
    then resampled. A step whose weights are all zero ends the run with
    loglik = -inf and degenerate = True.

    Args:
        kind: Filter identifier.
        model: Model specification.
        y: Observations y_1..y_T.
        N: Number of particles.
        options: Filter options (DPF matches, sigma points, resampling).
        seed: Seed for the run's private random stream.

    Returns:
        The filter run.

    Raises:
        ConfigError: If N < 1 or the options are inconsistent with N.
        UnsupportedModelError: If FAPF is requested for a non-LG model.
        DataError: If y is empty or not finite, or (DPF/UDPF) an
            observation cannot be inverted.
    """
    kind = FilterKind(kind)
    options = options or FilterOptions()
    y = _check_series(y)
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    if kind is FilterKind.FAPF and model.family is not ModelFamily.LG:
        raise UnsupportedModelError(f"FAPF is only available for LG, not {model.family.value}")

    rng = derive_rng(seed)

    if kind is FilterKind.BPF:
        def step(c, obs):
            return bpf_step(c, model, obs, rng)
    elif kind is FilterKind.FAPF:
        def step(c, obs):
            return fapf_step(c, model, obs, rng, options.resampling)
    elif kind is FilterKind.UPF:
        def step(c, obs):
            return upf_step(c, model, obs, rng)
    elif kind is FilterKind.DPF:
        plan = cyclic_permutations(N, options.L)

        def step(c, obs):
            return dpf_step(c, model, obs, plan, rng)
    else:
        sigma = build_sigma_points(model.error_law, options.sigma_order)

        def step(c, obs):
            return udpf_step(c, model, obs, sigma, rng)

    start = time.perf_counter()
    cloud = ParticleCloud.uniform(model.sample_initial(rng, N), t=0)
    increments: list[float] = []
    means: list[float] = []
    degenerate = False

    for obs in y:
        cloud, increment = step(cloud, float(obs))
        increments.append(increment)
        means.append(cloud.mean())
        if not math.isfinite(increment):
            degenerate = True
            increments[-1] = -math.inf
            logger.debug("%s degenerate at t=%d", kind.value.upper(), cloud.t)
            break
        if kind is not FilterKind.FAPF:
            cloud = resample(cloud, rng, options.resampling)

    increments_arr = np.array(increments)
    return FilterRun(
        kind=kind,
        loglik=float(np.sum(increments_arr)),
        increments=increments_arr,
        cloud=cloud,
        elapsed=time.perf_counter() - start,
        filtered_means=np.array(means),
        degenerate=degenerate,
    )


def filter_loglik(
    kind: FilterKind | str,
    model: ModelSpec,
    y: np.ndarray,
    N: int,
    options: FilterOptions | None = None,
    seed: SeedLike = 0,
) -> float:
    """Log-likelihood estimate only (see run_filter)."""
    return run_filter(kind, model, y, N, options, seed).loglik
