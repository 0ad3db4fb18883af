"""
State space models: linear Gaussian (LG), stochastic conditional duration
(SCD) and stochastic volatility (SV), plus the SVIJ jump-diffusion data
generator used for misspecification experiments.

All three estimable models share a Gaussian AR(1) state

    x_t = phi + rho * x_{t-1} + sigma_v * v_t

and differ in the measurement equation y_t = h(x_t, eta_t):

    LG:  y = x + sigma_eta * eta,   eta ~ N(0, 1)
    SCD: y = exp(x) * eta,          eta ~ Gamma(alpha, rate=beta)
    SV:  y = exp(x / 2) * eta,      eta ~ N(0, 1)

Density methods work on numpy arrays and return log densities; the module
level helpers return densities on the natural scale.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate, signal, special, stats

from .config import SeedLike, derive_rng
from .errors import ConfigError, MeasurementDomainError

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

# var(log eta^2) for eta ~ N(0, 1)
LOG_CHI2_VARIANCE = math.pi**2 / 2.0
# E[log eta^2] for eta ~ N(0, 1)
LOG_CHI2_MEAN = float(special.digamma(0.5) + math.log(2.0))

SVIJ_TRUNCATION = 1e-8


# ============================================================================
# Parameter Blocks
# ============================================================================


class ModelFamily(str, Enum):
    """Estimable model families."""

    LG = "lg"
    SCD = "scd"
    SV = "sv"


class LgParams(BaseModel):
    """Linear Gaussian model parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma_eta: float = Field(gt=0, description="Measurement noise sd")
    rho: float = Field(gt=-1, lt=1, description="State AR coefficient")
    sigma_v: float = Field(gt=0, description="State noise sd")


class ScdParams(BaseModel):
    """Stochastic conditional duration model parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(gt=0, description="Gamma shape")
    beta: float = Field(gt=0, description="Gamma rate")
    phi: float = Field(description="State intercept")
    rho: float = Field(gt=-1, lt=1)
    sigma_v: float = Field(gt=0)


class SvParams(BaseModel):
    """Stochastic volatility model parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    phi: float
    rho: float = Field(gt=-1, lt=1)
    sigma_v: float = Field(gt=0)


class SvijParams(BaseModel):
    """
    Stochastic volatility with independent jumps (data generator only).

    The defaults for kappa, theta_bar and sigma_v are illustrative values
    for daily percentage returns; override them to match a target series.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kappa: float = Field(0.02, gt=0, le=1, description="Mean reversion")
    theta_bar: float = Field(1.0, gt=0, description="Long-run variance level")
    sigma_v: float = Field(0.1, gt=0)
    p_jump_price: float = Field(0.15, ge=0, le=1)
    p_jump_vol: float = Field(0.20, ge=0, le=1)
    vol_jump_mean: float = Field(0.02, gt=0, description="Mean of exponential Z^x")
    price_jump_logsd: float = Field(math.sqrt(0.5), gt=0, description="sd of M_t")


ModelParams = LgParams | ScdParams | SvParams


# ============================================================================
# Measurement Error Laws
# ============================================================================


@dataclass(frozen=True)
class ErrorLaw:
    """A univariate measurement-error distribution used to build sigma points."""

    kind: Literal["normal", "gamma", "halfnormal"]
    params: tuple[float, ...] = ()

    def frozen(self) -> Any:
        """Return the scipy frozen distribution."""
        if self.kind == "normal":
            loc, scale = self.params or (0.0, 1.0)
            return stats.norm(loc=loc, scale=scale)
        if self.kind == "gamma":
            shape, rate = self.params
            return stats.gamma(a=shape, scale=1.0 / rate)
        if self.kind == "halfnormal":
            return stats.halfnorm()
        raise ConfigError(f"Unknown error law: {self.kind}")

    @property
    def lower_bound(self) -> float:
        """Left end of the support."""
        return -math.inf if self.kind == "normal" else 0.0

    @property
    def is_symmetric(self) -> bool:
        return self.kind == "normal"

    def central_moments(self, order: int) -> np.ndarray:
        """
        Central moments E[(eta - mu)^k] for k = 0..order.

        Args:
            order: Highest moment order.

        Returns:
            Array of length order + 1 (the k = 0 entry is 1).
        """
        dist = self.frozen()
        mean = float(dist.mean())
        raw = [1.0] + [float(dist.moment(k)) for k in range(1, order + 1)]

        central = np.zeros(order + 1)
        for k in range(order + 1):
            central[k] = sum(
                math.comb(k, i) * raw[i] * (-mean) ** (k - i) for i in range(k + 1)
            )
        central[0] = 1.0
        if order >= 1:
            central[1] = 0.0
        return central


# ============================================================================
# Numerical Helpers
# ============================================================================


def normal_logpdf(x: np.ndarray, mean: np.ndarray | float, var: np.ndarray | float) -> np.ndarray:
    """Gaussian log density with explicit variance."""
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def gamma_logpdf(u: np.ndarray, shape: float, rate: float) -> np.ndarray:
    """Gamma(shape, rate) log density; -inf for u <= 0."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (
            shape * math.log(rate)
            - special.gammaln(shape)
            + (shape - 1.0) * np.log(u)
            - rate * u
        )
    return np.where(u > 0, out, -np.inf)


def log_gamma_error_variance(alpha: float, beta: float) -> float:
    """
    var(log eta) for eta ~ Gamma(alpha, rate=beta), by adaptive quadrature.

    The integrand is the density of u = log(eta), so the result does not
    depend on beta (the rate only shifts u).
    """

    def log_density(u: float) -> float:
        return float(gamma_logpdf(np.exp(u), alpha, beta)) + u

    center = float(special.digamma(alpha) - math.log(beta))
    width = 40.0 + 10.0 / min(alpha, 1.0)
    lo, hi = center - width, center + 12.0

    mean, _ = integrate.quad(
        lambda u: u * math.exp(log_density(u)), lo, hi, limit=400, points=[center]
    )
    second, _ = integrate.quad(
        lambda u: (u - mean) ** 2 * math.exp(log_density(u)), lo, hi, limit=400, points=[center]
    )
    return float(second)


# ============================================================================
# Model Specifications
# ============================================================================


class ModelSpec(ABC):
    """
    A state space model with a Gaussian AR(1) state.

    Subclasses define the measurement equation, its inversion with respect
    to the state, and the transformed observable used for forecasting.
    """

    family: ModelFamily
    # Number of state roots x solving y = h(x, eta) for a given y
    n_roots: int = 1

    def __init__(self, params: ModelParams):
        self.params = params

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.params!r})"

    # ------------------------------------------------------------------------
    # State equation
    # ------------------------------------------------------------------------

    @property
    def phi(self) -> float:
        return float(getattr(self.params, "phi", 0.0))

    @property
    def rho(self) -> float:
        return float(self.params.rho)

    @property
    def sigma_v(self) -> float:
        return float(self.params.sigma_v)

    @property
    def stationary_mean(self) -> float:
        return self.phi / (1.0 - self.rho)

    @property
    def stationary_variance(self) -> float:
        return self.sigma_v**2 / (1.0 - self.rho**2)

    @property
    def initial_mean(self) -> float:
        return self.stationary_mean

    @property
    def initial_variance(self) -> float:
        return self.stationary_variance

    def sample_initial(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n states from p(x_0)."""
        return self.initial_mean + math.sqrt(self.initial_variance) * rng.standard_normal(n)

    def transition_mean(self, x_prev: np.ndarray) -> np.ndarray:
        return self.phi + self.rho * x_prev

    def sample_transition(self, x_prev: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw x_next ~ p(x_next | x_prev) for every entry of x_prev."""
        x_prev = np.asarray(x_prev, dtype=float)
        return self.transition_mean(x_prev) + self.sigma_v * rng.standard_normal(x_prev.shape)

    def log_transition_density(self, x_prev: np.ndarray, x_next: np.ndarray) -> np.ndarray:
        return normal_logpdf(x_next, self.transition_mean(x_prev), self.sigma_v**2)

    # ------------------------------------------------------------------------
    # Measurement equation
    # ------------------------------------------------------------------------

    @property
    @abstractmethod
    def error_law(self) -> ErrorLaw:
        """Law of the measurement error used for sigma points."""

    @abstractmethod
    def sample_error(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n measurement errors eta ~ p(eta)."""

    @abstractmethod
    def measurement(self, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
        """Evaluate y = h(x, eta)."""

    @abstractmethod
    def log_measurement_density(self, x: np.ndarray, y: float | np.ndarray) -> np.ndarray:
        """log p(y | x)."""

    @abstractmethod
    def invert_measurement(
        self, y: float | np.ndarray, eta: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Solve y = h(x, eta) for x; return (x, |dh/dx|^-1 at x)."""

    @abstractmethod
    def measurement_error_variance(self) -> float:
        """Variance sigma_m^2 of the error in the log-linear measurement form."""

    def sample_measurement(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.measurement(x, self.sample_error(rng, x.size).reshape(x.shape))

    # ------------------------------------------------------------------------
    # Transformed observable z = x + epsilon (LG: y, SCD: log y, SV: log y^2)
    # ------------------------------------------------------------------------

    @abstractmethod
    def observable(self, y: float | np.ndarray) -> np.ndarray:
        """Map observations to the forecast target z."""

    @abstractmethod
    def log_observable_density(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        """log p(z | x) of the transformed observable."""

    @abstractmethod
    def observable_error_moments(self) -> tuple[float, float]:
        """Mean and variance of epsilon in z = x + epsilon."""

    def check_observation(self, y: float) -> None:
        """Raise if y is outside the region where the measurement can be inverted."""

    def snr(self) -> float:
        return self.stationary_variance / self.measurement_error_variance()


class LgModel(ModelSpec):
    """y = x + sigma_eta * eta, x_t = rho * x_{t-1} + sigma_v * v_t."""

    family = ModelFamily.LG

    @property
    def sigma_eta(self) -> float:
        return float(self.params.sigma_eta)

    @property
    def error_law(self) -> ErrorLaw:
        return ErrorLaw("normal", (0.0, 1.0))

    def sample_error(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal(n)

    def measurement(self, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
        return x + self.sigma_eta * eta

    def log_measurement_density(self, x: np.ndarray, y: float | np.ndarray) -> np.ndarray:
        return normal_logpdf(y, x, self.sigma_eta**2)

    def invert_measurement(self, y, eta):
        eta = np.asarray(eta, dtype=float)
        return y - self.sigma_eta * eta, np.ones_like(eta)

    def measurement_error_variance(self) -> float:
        return self.sigma_eta**2

    def observable(self, y):
        return np.asarray(y, dtype=float)

    def log_observable_density(self, z, x):
        return normal_logpdf(z, x, self.sigma_eta**2)

    def observable_error_moments(self) -> tuple[float, float]:
        return 0.0, self.sigma_eta**2


class ScdModel(ModelSpec):
    """y = exp(x) * eta with eta ~ Gamma(alpha, rate=beta)."""

    family = ModelFamily.SCD

    @property
    def alpha(self) -> float:
        return float(self.params.alpha)

    @property
    def beta(self) -> float:
        return float(self.params.beta)

    @property
    def initial_variance(self) -> float:
        # x_0 ~ N(phi / (1 - rho), sigma_v^2 / (1 - rho)^2)
        return self.sigma_v**2 / (1.0 - self.rho) ** 2

    @property
    def error_law(self) -> ErrorLaw:
        return ErrorLaw("gamma", (self.alpha, self.beta))

    def sample_error(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.gamma(self.alpha, 1.0 / self.beta, size=n)

    def measurement(self, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
        return np.exp(x) * eta

    def log_measurement_density(self, x: np.ndarray, y: float | np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0):
            raise MeasurementDomainError("SCD observations must be strictly positive")
        return gamma_logpdf(y * np.exp(-x), self.alpha, self.beta) - x

    def invert_measurement(self, y, eta):
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        if np.any(y <= 0) or np.any(eta <= 0):
            raise MeasurementDomainError("SCD inversion needs y > 0 and eta > 0")
        x = np.log(y / eta)
        return x, np.broadcast_to(1.0 / y, x.shape).copy()

    def measurement_error_variance(self) -> float:
        return log_gamma_error_variance(self.alpha, self.beta)

    def check_observation(self, y: float) -> None:
        if not y > 0:
            raise MeasurementDomainError(f"SCD observation {y} is not positive")

    def observable(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0):
            raise MeasurementDomainError("SCD observations must be strictly positive")
        return np.log(y)

    def log_observable_density(self, z, x):
        u = np.asarray(z) - np.asarray(x)
        return gamma_logpdf(np.exp(u), self.alpha, self.beta) + u

    def observable_error_moments(self) -> tuple[float, float]:
        mean = float(special.digamma(self.alpha) - math.log(self.beta))
        return mean, float(special.polygamma(1, self.alpha))


class SvModel(ModelSpec):
    """y = exp(x / 2) * eta with eta ~ N(0, 1)."""

    family = ModelFamily.SV
    # eta and -eta give the same state
    n_roots = 2

    @property
    def error_law(self) -> ErrorLaw:
        # Sigma points live on |eta|, consistent with the two-root inversion
        return ErrorLaw("halfnormal")

    def sample_error(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal(n)

    def measurement(self, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
        return np.exp(0.5 * x) * eta

    def log_measurement_density(self, x: np.ndarray, y: float | np.ndarray) -> np.ndarray:
        return -0.5 * (LOG_2PI + x + np.asarray(y) ** 2 * np.exp(-x))

    def invert_measurement(self, y, eta):
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        if np.any(y == 0) or np.any(eta == 0):
            raise MeasurementDomainError("SV inversion needs y != 0 and eta != 0")
        x = 2.0 * np.log(np.abs(y) / np.abs(eta))
        return x, np.broadcast_to(2.0 / np.abs(y), x.shape).copy()

    def measurement_error_variance(self) -> float:
        return LOG_CHI2_VARIANCE

    def check_observation(self, y: float) -> None:
        if y == 0 or not math.isfinite(y):
            raise MeasurementDomainError("SV observation of exactly zero cannot be inverted")

    def observable(self, y):
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(y, dtype=float) ** 2)

    def log_observable_density(self, z, x):
        u = np.asarray(z) - np.asarray(x)
        return -0.5 * LOG_2PI + 0.5 * u - 0.5 * np.exp(u)

    def observable_error_moments(self) -> tuple[float, float]:
        return LOG_CHI2_MEAN, LOG_CHI2_VARIANCE


_MODEL_CLASSES: dict[ModelFamily, tuple[type[ModelSpec], type[BaseModel]]] = {
    ModelFamily.LG: (LgModel, LgParams),
    ModelFamily.SCD: (ScdModel, ScdParams),
    ModelFamily.SV: (SvModel, SvParams),
}


def build_model(family: ModelFamily | str, params: ModelParams | dict[str, float]) -> ModelSpec:
    """
    Build a model from its family and a parameter block or plain dict.

    Args:
        family: Model family id ("lg", "scd", "sv").
        params: Parameter block, or a dict validated into one.

    Returns:
        The model specification.

    Raises:
        pydantic.ValidationError: If the parameters violate their domain.
    """
    family = ModelFamily(family)
    model_cls, params_cls = _MODEL_CLASSES[family]
    if isinstance(params, dict):
        params = params_cls(**params)
    elif not isinstance(params, params_cls):
        raise ConfigError(f"{type(params).__name__} does not belong to model family {family.value}")
    return model_cls(params)


# Low and high signal-to-noise design points per family
SNR_PRESETS: dict[str, ModelSpec] = {
    "lg_low": LgModel(LgParams(sigma_eta=2.24, rho=0.4, sigma_v=0.92)),
    "lg_high": LgModel(LgParams(sigma_eta=0.45, rho=0.4, sigma_v=0.92)),
    "scd_low": ScdModel(ScdParams(alpha=0.67, beta=1.5, phi=-1.1, rho=0.74, sigma_v=0.65)),
    "scd_high": ScdModel(ScdParams(alpha=6.67, beta=0.15, phi=-1.1, rho=0.74, sigma_v=0.65)),
    "sv_low": SvModel(SvParams(phi=-6.61, rho=0.2, sigma_v=0.70)),
    "sv_high": SvModel(SvParams(phi=-4.24, rho=0.6, sigma_v=1.40)),
}


# ============================================================================
# Sampling-Scale Parameter Vectors
# ============================================================================

PARAMETER_NAMES: dict[ModelFamily, tuple[str, ...]] = {
    ModelFamily.LG: ("log_sigma_eta2", "rho", "log_sigma_v2"),
    ModelFamily.SCD: ("log_alpha", "log_beta", "phi", "rho", "log_sigma_v2"),
    ModelFamily.SV: ("phi", "rho", "log_sigma_v2"),
}


def parameter_names(family: ModelFamily | str) -> tuple[str, ...]:
    """Names of the sampling-scale parameter vector for a family."""
    return PARAMETER_NAMES[ModelFamily(family)]


def theta_from_model(model: ModelSpec) -> np.ndarray:
    """Map a model to its sampling-scale vector (log variances, raw rho/phi)."""
    p = model.params
    if model.family is ModelFamily.LG:
        return np.array([2 * math.log(p.sigma_eta), p.rho, 2 * math.log(p.sigma_v)])
    if model.family is ModelFamily.SCD:
        return np.array(
            [math.log(p.alpha), math.log(p.beta), p.phi, p.rho, 2 * math.log(p.sigma_v)]
        )
    return np.array([p.phi, p.rho, 2 * math.log(p.sigma_v)])


def model_from_theta(family: ModelFamily | str, theta: np.ndarray) -> ModelSpec | None:
    """
    Map a sampling-scale vector back to a model.

    Args:
        family: Model family.
        theta: Parameter vector in the order of parameter_names(family).

    Returns:
        The model, or None when theta lies outside the stationary region
        (|rho| >= 1) or produces non-finite parameters.
    """
    family = ModelFamily(family)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (len(PARAMETER_NAMES[family]),) or not np.all(np.isfinite(theta)):
        return None

    with np.errstate(over="ignore"):
        if family is ModelFamily.LG:
            values = {
                "sigma_eta": math.sqrt(math.exp(theta[0])) if theta[0] < 700 else math.inf,
                "rho": theta[1],
                "sigma_v": math.sqrt(math.exp(theta[2])) if theta[2] < 700 else math.inf,
            }
        elif family is ModelFamily.SCD:
            values = {
                "alpha": math.exp(min(theta[0], 700.0)),
                "beta": math.exp(min(theta[1], 700.0)),
                "phi": theta[2],
                "rho": theta[3],
                "sigma_v": math.sqrt(math.exp(min(theta[4], 700.0))),
            }
        else:
            values = {
                "phi": theta[0],
                "rho": theta[1],
                "sigma_v": math.sqrt(math.exp(min(theta[2], 700.0))),
            }

    if abs(values["rho"]) >= 1.0:
        return None
    if not all(math.isfinite(v) and (k in ("phi", "rho") or v > 0) for k, v in values.items()):
        return None
    return build_model(family, values)


# ============================================================================
# Simulation
# ============================================================================


def simulate(model: ModelSpec, T: int, seed: SeedLike) -> tuple[np.ndarray, np.ndarray]:
    """
    Simulate observations and states from a model.

    Args:
        model: Model specification.
        T: Number of observations (>= 1).
        seed: Seed for the random stream; identical seeds give identical output.

    Returns:
        Tuple (y[0:T] = y_1..y_T, x[0:T+1] = x_0..x_T).
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")

    rng = derive_rng(seed)
    x0 = model.sample_initial(rng, 1)[0]
    shocks = model.phi + model.sigma_v * rng.standard_normal(T)

    # x_t = rho * x_{t-1} + (phi + sigma_v * v_t), started from x_0
    path, _ = signal.lfilter([1.0], [1.0, -model.rho], shocks, zi=[model.rho * x0])
    states = np.concatenate([[x0], path])
    observations = model.sample_measurement(states[1:], rng)
    return observations, states


def simulate_svij(
    params: SvijParams,
    T: int,
    seed: SeedLike,
    return_components: bool = False,
) -> np.ndarray | dict[str, np.ndarray]:
    """
    Simulate returns from the SVIJ jump-diffusion approximation.

        y_t = sqrt(x_t) * zeta^p_t + Z^p_t * dN^p_t
        x_t = kappa * theta_bar + (1 - kappa) * x_{t-1}
              + sigma_v * sqrt(x_{t-1}) * zeta^x_t + Z^x_t * dN^x_t

    The variance path is truncated at 1e-8 after every step. All random
    inputs are drawn up front in a fixed order, so switching jumps off
    leaves every other draw unchanged.

    Args:
        params: SVIJ parameters.
        T: Number of observations.
        seed: Seed for the random stream.
        return_components: If True, also return the variance path and jump draws.

    Returns:
        Observations, or a dict with keys y, x, price_jumps, vol_jumps,
        price_jump_sizes, vol_jump_sizes, n_truncated.
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")

    rng = derive_rng(seed)
    zeta_p = rng.standard_normal(T)
    zeta_x = rng.standard_normal(T)
    u_price = rng.random(T)
    u_vol = rng.random(T)
    vol_sizes = rng.exponential(params.vol_jump_mean, size=T)
    signs = np.where(rng.random(T) < 0.5, -1.0, 1.0)
    price_sizes = signs * np.exp(params.price_jump_logsd * rng.standard_normal(T))

    price_jumps = u_price < params.p_jump_price
    vol_jumps = u_vol < params.p_jump_vol

    x = np.empty(T + 1)
    x[0] = params.theta_bar
    n_truncated = 0
    for t in range(1, T + 1):
        prev = x[t - 1]
        nxt = (
            params.kappa * params.theta_bar
            + (1.0 - params.kappa) * prev
            + params.sigma_v * math.sqrt(prev) * zeta_x[t - 1]
            + vol_sizes[t - 1] * vol_jumps[t - 1]
        )
        if nxt < SVIJ_TRUNCATION:
            nxt = SVIJ_TRUNCATION
            n_truncated += 1
        x[t] = nxt

    y = np.sqrt(x[1:]) * zeta_p + price_sizes * price_jumps

    if n_truncated:
        logger.info("SVIJ variance truncated at %g in %d of %d steps", SVIJ_TRUNCATION, n_truncated, T)

    if not return_components:
        return y
    return {
        "y": y,
        "x": x,
        "price_jumps": price_jumps,
        "vol_jumps": vol_jumps,
        "price_jump_sizes": price_sizes,
        "vol_jump_sizes": vol_sizes,
        "n_truncated": np.array(n_truncated),
    }


# ============================================================================
# Density and Inversion Helpers
# ============================================================================


def transition_density(model: ModelSpec, x_prev: float, x_next: float) -> float | np.ndarray:
    """p(x_next | x_prev) = N(x_next; phi + rho * x_prev, sigma_v^2)."""
    return np.exp(model.log_transition_density(np.asarray(x_prev), np.asarray(x_next)))


def measurement_density(model: ModelSpec, x: float, y: float) -> float | np.ndarray:
    """p(y | x) under the model's measurement equation."""
    return np.exp(model.log_measurement_density(np.asarray(x, dtype=float), y))


def invert_measurement(
    model: ModelSpec, y: float, eta: float | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    Solve y = h(x, eta) for the state.

    Args:
        model: Model specification.
        y: Observation.
        eta: Measurement error value(s).

    Returns:
        Tuple (x, jac_inv) with jac_inv = |dh/dx|^-1 evaluated at the solution.

    Raises:
        MeasurementDomainError: If (y, eta) has no solution.
    """
    return model.invert_measurement(y, eta)


def snr(model: ModelSpec) -> float:
    """Signal-to-noise ratio sigma_x^2 / sigma_m^2."""
    return model.snr()


# ============================================================================
# CLI Entry Point
# ============================================================================


if __name__ == "__main__":
    print("=" * 60)
    print("Preset signal-to-noise ratios")
    print("=" * 60)
    for name, preset in SNR_PRESETS.items():
        print(f"  {name:<9} SNR = {snr(preset):.3f}")
