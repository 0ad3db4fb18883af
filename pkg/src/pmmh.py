"""
Particle-marginal Metropolis-Hastings.

The exact likelihood in the MH acceptance ratio is replaced by a particle
filter estimate. The estimate for the current state is stored and reused
until a candidate is accepted, which keeps the chain's invariant law equal
to the exact posterior. Proposals come from an adaptive random walk.

Also here: priors on the sampling scale, calibration of the particle count
to a target log-likelihood variance, and chain diagnostics (inefficiency
factors, effective sample sizes, average likelihood computing time).
"""

import logging
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats

from .config import derive_rng
from .errors import CalibrationError, ConfigError, DataError, DegeneracyError
from .filters import FilterKind, FilterOptions, filter_loglik
from .models import ModelFamily, ModelSpec, model_from_theta, parameter_names

logger = logging.getLogger(__name__)

# Log-likelihood variance at which the particle count is considered optimal
NOPT_TARGET_VARIANCE = 0.85

# Stream keys under the chain's master seed
PROPOSAL_STREAM = 0
LIKELIHOOD_STREAM = 1

# A likelihood override receives (model, y, rng) and returns log p(y | model)
LikelihoodFn = Callable[[ModelSpec, np.ndarray, np.random.Generator], float]


# ============================================================================
# Priors
# ============================================================================


class Prior(BaseModel):
    """
    Prior on the sampling-scale parameter vector.

    Coordinates are jointly normal N(mean, cov) unless listed in ``beta``,
    in which case they follow Beta(a, b) independently with support (0, 1)
    and their rows of mean/cov are ignored.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    names: tuple[str, ...]
    mean: tuple[float, ...]
    cov: tuple[tuple[float, ...], ...]
    beta: dict[str, tuple[float, float]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_shapes(self) -> "Prior":
        d = len(self.names)
        if len(self.mean) != d or len(self.cov) != d or any(len(row) != d for row in self.cov):
            raise ValueError(f"Prior mean/cov must have dimension {d}")
        unknown = set(self.beta) - set(self.names)
        if unknown:
            raise ValueError(f"Beta coordinates {sorted(unknown)} are not prior coordinates")
        for a, b in self.beta.values():
            if a <= 0 or b <= 0:
                raise ValueError("Beta prior shapes must be positive")
        return self

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def normal_index(self) -> np.ndarray:
        return np.array([i for i, n in enumerate(self.names) if n not in self.beta], dtype=int)

    def initial_point(self) -> np.ndarray:
        """Prior mean (Beta coordinates at a / (a + b))."""
        point = np.array(self.mean, dtype=float)
        for name, (a, b) in self.beta.items():
            point[self.names.index(name)] = a / (a + b)
        return point

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw parameter vectors from the prior, shape (size, dim)."""
        out = np.empty((size, self.dim))
        idx = self.normal_index
        if idx.size:
            mean = np.asarray(self.mean)[idx]
            cov = np.asarray(self.cov)[np.ix_(idx, idx)]
            out[:, idx] = rng.multivariate_normal(mean, cov, size=size, method="cholesky")
        for name, (a, b) in self.beta.items():
            out[:, self.names.index(name)] = rng.beta(a, b, size=size)
        return out


def simulation_prior(family: ModelFamily | str) -> Prior:
    """N(mu_0, I) priors used in the simulation studies."""
    family = ModelFamily(family)
    means = {
        ModelFamily.LG: (math.log(0.7), 0.5, math.log(0.475)),
        ModelFamily.SCD: (-0.8, 0.5, math.log(0.5), math.log(2.0), math.log(1.0)),
        ModelFamily.SV: (-4.6, 0.8, math.log(0.5)),
    }
    mean = means[family]
    d = len(mean)
    return Prior(
        names=parameter_names(family),
        mean=mean,
        cov=tuple(tuple(float(i == j) for j in range(d)) for i in range(d)),
    )


def forecast_prior() -> Prior:
    """SV prior for the forecasting study: phi ~ N(0, 10), rho ~ Beta(20, 1.5), log sigma_v^2 ~ N(0, 10)."""
    return Prior(
        names=parameter_names(ModelFamily.SV),
        mean=(0.0, 0.0, 0.0),
        cov=((10.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 10.0)),
        beta={"rho": (20.0, 1.5)},
    )


def log_prior(prior: Prior, theta: np.ndarray) -> float:
    """
    Log prior density at theta on the sampling scale.

    Returns:
        The log density, or -inf outside the support.

    Raises:
        DataError: If theta has the wrong dimension.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (prior.dim,):
        raise DataError(f"theta has shape {theta.shape}, prior expects ({prior.dim},)")
    if not np.all(np.isfinite(theta)):
        return -math.inf

    total = 0.0
    idx = prior.normal_index
    if idx.size:
        mean = np.asarray(prior.mean)[idx]
        cov = np.asarray(prior.cov)[np.ix_(idx, idx)]
        total += float(stats.multivariate_normal.logpdf(theta[idx], mean=mean, cov=cov))
    for name, (a, b) in prior.beta.items():
        value = theta[prior.names.index(name)]
        if not 0.0 < value < 1.0:
            return -math.inf
        total += float(stats.beta.logpdf(value, a, b))
    return total


# ============================================================================
# Metropolis-Hastings
# ============================================================================


class Evaluation(NamedTuple):
    """Log-likelihood estimate and log prior at one parameter point."""

    loglik: float
    logprior: float

    @property
    def log_target(self) -> float:
        return self.loglik + self.logprior


def mh_accept_logratio(cand: Evaluation, curr: Evaluation) -> float:
    """
    Log acceptance probability min(0, delta loglik + delta logprior) for a
    symmetric proposal. Candidates with a -inf (or NaN) term are never accepted.
    """
    if not (math.isfinite(cand.loglik) and math.isfinite(cand.logprior)):
        return -math.inf
    ratio = (cand.loglik - curr.loglik) + (cand.logprior - curr.logprior)
    if math.isnan(ratio):
        return -math.inf
    return min(0.0, ratio)


def _scaled_covariance(scale: float, emp_cov: np.ndarray) -> np.ndarray:
    """scale * C + eps * I with eps = 1e-6 * trace(C) / d."""
    d = emp_cov.shape[0]
    trace = float(np.trace(emp_cov))
    eps = 1e-6 * trace / d if trace > 0 else 1e-6
    return scale * emp_cov + eps * np.eye(d)


class AdaptiveRandomWalk:
    """
    Gaussian random walk with a learned covariance and Robbins-Monro scale.

    For the first ``warmup`` updates the proposal covariance is
    ``initial_sd**2 * I``. Afterwards it is
    ``exp(log_scale) * C + eps * I``, where C is the running covariance of
    the chain and eps = 1e-6 * trace(C) / d. log_scale starts at
    log(2.38^2 / d) and moves by k^-0.6 * (acceptance - target) after the
    k-th adaptive update.

    Args:
        dim: Parameter dimension.
        warmup: Number of updates before adaptation starts.
        initial_sd: Per-coordinate sd during warm-up.
        target: Target acceptance probability.
        decay: Exponent of the adaptation gain.
        fixed_scale: If set, multiplies the whole proposal covariance and
            disables scale adaptation (0 freezes the chain).
    """

    def __init__(
        self,
        dim: int,
        warmup: int = 500,
        initial_sd: float = 0.1,
        target: float = 0.234,
        decay: float = 0.6,
        fixed_scale: float | None = None,
    ):
        self.dim = dim
        self.warmup = warmup
        self.initial_sd = initial_sd
        self.target = target
        self.decay = decay
        self.fixed_scale = fixed_scale

        self.n = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros((dim, dim))
        self.log_scale = math.log(2.38**2 / dim)

    @property
    def adapting(self) -> bool:
        return self.n >= self.warmup and self.n >= 2

    @property
    def empirical_cov(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros((self.dim, self.dim))
        return self._m2 / (self.n - 1)

    def covariance(self) -> np.ndarray:
        """Current proposal covariance."""
        if not self.adapting:
            cov = self.initial_sd**2 * np.eye(self.dim)
        else:
            cov = _scaled_covariance(math.exp(self.log_scale), self.empirical_cov)
        if self.fixed_scale is not None:
            cov = self.fixed_scale * cov
        return cov

    def propose(self, current: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        current = np.asarray(current, dtype=float)
        if self.fixed_scale == 0:
            return current.copy()
        return rng.multivariate_normal(current, self.covariance(), method="cholesky")

    def update(self, draw: np.ndarray, accept_prob: float) -> None:
        """Record the chain state after an iteration and adapt the scale."""
        if self.adapting and self.fixed_scale is None:
            k = self.n - self.warmup + 1
            self.log_scale += k**-self.decay * (accept_prob - self.target)

        # Welford update of the running mean and covariance
        self.n += 1
        delta = draw - self.mean
        self.mean = self.mean + delta / self.n
        self._m2 = self._m2 + np.outer(delta, draw - self.mean)


def adaptive_rw_propose(
    history: Sequence[np.ndarray] | np.ndarray,
    current: np.ndarray,
    rng: np.random.Generator,
    warmup: int = 500,
    initial_sd: float = 0.1,
    scale: float | None = None,
) -> np.ndarray:
    """
    One adaptive random-walk candidate from the chain history.

    Uses ``initial_sd**2 * I`` while the history is shorter than
    ``warmup``, then ``scale * cov(history) + eps * I`` with the default
    scale 2.38^2 / d.

    Args:
        history: Past draws, shape (n, d).
        current: Current point.
        rng: Random stream.
        warmup: History length at which the empirical covariance takes over.
        initial_sd: Warm-up per-coordinate sd.
        scale: Covariance multiplier; 0 returns the current point.

    Returns:
        The candidate.
    """
    current = np.asarray(current, dtype=float)
    d = current.size
    if scale == 0:
        return current.copy()

    history = np.atleast_2d(np.asarray(history, dtype=float))
    if history.shape[0] < max(warmup, 2):
        cov = initial_sd**2 * np.eye(d)
    else:
        s = 2.38**2 / d if scale is None else scale
        cov = _scaled_covariance(s, np.atleast_2d(np.cov(history, rowvar=False)))
    return rng.multivariate_normal(current, cov, method="cholesky")


# ============================================================================
# Chains and Diagnostics
# ============================================================================


@dataclass
class Chain:
    """
    PMMH output. Row 0 is the starting point; rows 1..MH-1 are iterations.
    Timings are NaN where no likelihood was evaluated (candidate rejected on
    the prior or outside the stationary region).
    """

    draws: np.ndarray
    loglik: np.ndarray
    logprior: np.ndarray
    accepted: np.ndarray
    burn_in: int
    timings: np.ndarray
    param_names: tuple[str, ...]
    filter_kind: str = ""
    n_particles: int = 0

    def __len__(self) -> int:
        return int(self.draws.shape[0])

    @property
    def kept(self) -> np.ndarray:
        """Draws after burn-in."""
        return self.draws[self.burn_in :]

    @property
    def acceptance_rate(self) -> float:
        moves = self.accepted[1:]
        return float(moves.mean()) if moves.size else 0.0

    def to_frame(self) -> pd.DataFrame:
        """One row per iteration: parameters, loglik, accept flag, burn-in flag, timing."""
        df = pd.DataFrame(self.draws, columns=list(self.param_names))
        df.insert(0, "iteration", np.arange(len(self)))
        df["loglik"] = self.loglik
        df["logprior"] = self.logprior
        df["accepted"] = self.accepted.astype(int)
        df["burn_in"] = (np.arange(len(self)) < self.burn_in).astype(int)
        df["lik_seconds"] = self.timings
        return df


@dataclass
class Diagnostics:
    """Per-chain summary."""

    inefficiency: dict[str, float]
    ess: dict[str, float]
    alct: float
    acceptance_rate: float
    n_opt: int
    posterior_mean: dict[str, float] = field(default_factory=dict)
    posterior_sd: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "inefficiency": self.inefficiency,
            "ess": self.ess,
            "alct": self.alct,
            "acceptance_rate": self.acceptance_rate,
            "n_opt": self.n_opt,
            "posterior_mean": self.posterior_mean,
            "posterior_sd": self.posterior_sd,
        }


def autocorrelation(series: np.ndarray) -> np.ndarray:
    """Normalized sample autocorrelation at lags 0..n-1, via FFT."""
    x = np.asarray(series, dtype=float)
    n = x.size
    x = x - x.mean()
    size = 2 ** int(math.ceil(math.log2(2 * n)))
    spectrum = np.fft.rfft(x, n=size)
    acov = np.fft.irfft(spectrum * np.conjugate(spectrum), n=size)[:n]
    return acov / acov[0]


def inefficiency_factor(series: np.ndarray, method: str = "geyer") -> float:
    """
    Integrated autocorrelation time 1 + 2 sum_k rho_k.

    ``geyer`` sums autocorrelation pairs (rho_2m + rho_2m+1) while they stay
    positive. ``bartlett`` uses a Bartlett-tapered sum up to lag sqrt(n).

    Args:
        series: Chain of one parameter (length >= 100).
        method: ``geyer`` or ``bartlett``.

    Returns:
        The inefficiency factor; 1 for a constant series.

    Raises:
        DataError: If the series is shorter than 100 or not finite.
        ConfigError: If the method is unknown.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 100:
        raise DataError(f"Inefficiency factor needs at least 100 draws, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DataError("Chain contains non-finite values")
    if np.ptp(x) == 0:
        logger.warning("Constant series; inefficiency factor set to 1")
        return 1.0

    rho = autocorrelation(x)
    if method == "geyer":
        n_pairs = rho.size // 2
        pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
        nonpositive = np.flatnonzero(pairs <= 0)
        stop = int(nonpositive[0]) if nonpositive.size else n_pairs
        return float(max(-1.0 + 2.0 * pairs[:stop].sum(), 0.0))
    if method == "bartlett":
        bandwidth = int(math.sqrt(x.size))
        lags = np.arange(1, bandwidth + 1)
        taper = 1.0 - lags / (bandwidth + 1.0)
        return float(max(1.0 + 2.0 * np.sum(taper * rho[lags]), 0.0))
    raise ConfigError(f"Unknown inefficiency method: {method}")


def effective_sample_size(series: np.ndarray, method: str = "geyer") -> float:
    """n / IF."""
    factor = inefficiency_factor(series, method)
    return float(np.size(series) / factor) if factor > 0 else math.inf


def alct(chain: Chain) -> float:
    """
    Average likelihood computing time in seconds over iterations that ran a filter.

    Raises:
        DataError: If the chain is empty or no iteration was timed.
    """
    timings = np.asarray(chain.timings, dtype=float)
    if timings.size == 0 or np.all(np.isnan(timings)):
        raise DataError("Chain has no recorded likelihood timings")
    return float(np.nanmean(timings))


def diagnose(chain: Chain, n_opt: int, method: str = "geyer") -> Diagnostics:
    """Inefficiency factors, ESS, ALCT and posterior summaries over the kept draws."""
    kept = chain.kept
    names = chain.param_names
    ifs = {n: inefficiency_factor(kept[:, i], method) for i, n in enumerate(names)}
    return Diagnostics(
        inefficiency=ifs,
        ess={n: float(kept.shape[0] / f) if f > 0 else math.inf for n, f in ifs.items()},
        alct=alct(chain),
        acceptance_rate=chain.acceptance_rate,
        n_opt=int(n_opt),
        posterior_mean={n: float(kept[:, i].mean()) for i, n in enumerate(names)},
        posterior_sd={n: float(kept[:, i].std(ddof=1)) for i, n in enumerate(names)},
    )


# ============================================================================
# Particle Count Calibration
# ============================================================================


def nopt_from_variance(n_s: int, variance: float, target: float = NOPT_TARGET_VARIANCE) -> int:
    """N_opt = round(N_s * var / target), at least 2."""
    return max(2, int(math.floor(n_s * variance / target + 0.5)))


def calibration_variance(logliks: np.ndarray) -> float:
    """
    Sample variance (ddof=1) of the finite log-likelihood replicates.

    Raises:
        CalibrationError: If fewer than two replicates are finite.
    """
    logliks = np.asarray(logliks, dtype=float)
    finite = logliks[np.isfinite(logliks)]
    excluded = logliks.size - finite.size
    if excluded:
        logger.warning("Excluded %d of %d degenerate calibration replicates", excluded, logliks.size)
    if finite.size < 2:
        raise CalibrationError(
            f"Only {finite.size} of {logliks.size} calibration replicates were finite"
        )
    return float(np.var(finite, ddof=1))


def calibration_logliks(
    kind: FilterKind | str,
    model: ModelSpec,
    y: np.ndarray,
    n_s: int,
    r0: int,
    seed: int,
    options: FilterOptions | None = None,
    jobs: int = 1,
) -> np.ndarray:
    """R_0 independent log-likelihood estimates at a fixed model."""
    results = Parallel(n_jobs=jobs)(
        delayed(filter_loglik)(kind, model, y, n_s, options, derive_rng(seed, r))
        for r in range(r0)
    )
    return np.asarray(results, dtype=float)


def calibrate_nopt(
    kind: FilterKind | str,
    model: ModelSpec,
    y: np.ndarray,
    n_s: int = 1000,
    r0: int = 100,
    seed: int = 0,
    options: FilterOptions | None = None,
    jobs: int = 1,
    target: float = NOPT_TARGET_VARIANCE,
) -> int:
    """
    Particle count giving a log-likelihood variance of about ``target``.

    Runs R_0 filters with N_s particles at the given model, measures the
    sample variance of the log-likelihood estimates, and scales N_s by
    variance / target.

    Args:
        kind: Filter identifier.
        model: Model at the calibration point theta_0.
        y: Observations.
        n_s: Particles per calibration run.
        r0: Number of replicates (>= 2).
        seed: Master seed; replicate r uses the stream (seed, r).
        options: Filter options.
        jobs: Parallel workers.
        target: Target log-likelihood variance.

    Returns:
        N_opt (>= 2).

    Raises:
        ConfigError: If r0 < 2.
        CalibrationError: If fewer than two replicates are finite.
    """
    if r0 < 2:
        raise ConfigError(f"Calibration needs at least 2 replicates, got {r0}")
    logliks = calibration_logliks(kind, model, y, n_s, r0, seed, options, jobs)
    variance = calibration_variance(logliks)
    n_opt = nopt_from_variance(n_s, variance, target)
    logger.info(
        "Calibrated %s: var(loglik)=%.4f at N_s=%d -> N_opt=%d",
        FilterKind(kind).value,
        variance,
        n_s,
        n_opt,
    )
    return n_opt


# ============================================================================
# PMMH Sampler
# ============================================================================


def run_pmmh(
    kind: FilterKind | str,
    family: ModelFamily | str,
    prior: Prior,
    y: np.ndarray,
    N: int,
    MH: int,
    burn_in: int,
    seed: int,
    options: FilterOptions | None = None,
    theta0: np.ndarray | None = None,
    sampler: AdaptiveRandomWalk | None = None,
    likelihood: LikelihoodFn | None = None,
) -> Chain:
    """
    Run an adaptive random-walk PMMH chain.

    Each likelihood evaluation i gets its own stream derived from
    (seed, 1, i); proposals and acceptance draws come from (seed, 0).
    Candidates outside the stationary region or with zero prior density are
    rejected without running a filter.

    Args:
        kind: Filter used for the likelihood estimate.
        family: Model family.
        prior: Prior on the sampling-scale vector.
        y: Observations.
        N: Particles per filter run (>= 2).
        MH: Chain length including the starting point.
        burn_in: Number of leading draws flagged as burn-in.
        seed: Master seed.
        options: Filter options.
        theta0: Starting point (default: prior.initial_point()).
        sampler: Proposal mechanism (default: AdaptiveRandomWalk(dim)).
        likelihood: Replaces the particle filter, e.g. an exact Kalman
            likelihood or ``lambda *_: 0.0`` to sample the prior.

    Returns:
        The chain.

    Raises:
        ConfigError: If N, MH or burn_in are out of range, or the start has
            zero prior density.
        DegeneracyError: If no finite likelihood is found at the start.
    """
    family = ModelFamily(family)
    names = parameter_names(family)
    if prior.dim != len(names):
        raise ConfigError(f"Prior has {prior.dim} coordinates, {family.value} needs {len(names)}")
    if likelihood is None and N < 2:
        raise ConfigError(f"N must be >= 2, got {N}")
    if not 0 <= burn_in < MH:
        raise ConfigError(f"Need 0 <= burn_in < MH, got burn_in={burn_in}, MH={MH}")

    kind = FilterKind(kind)
    if likelihood is None:
        def likelihood(model, obs, rng):
            return filter_loglik(kind, model, obs, N, options, rng)

    y = np.asarray(y, dtype=float)
    d = len(names)
    sampler = sampler or AdaptiveRandomWalk(d)
    proposal_rng = derive_rng(seed, PROPOSAL_STREAM)

    def evaluate(theta: np.ndarray, i: int) -> tuple[Evaluation, float]:
        lp = log_prior(prior, theta)
        model = model_from_theta(family, theta)
        if model is None or not math.isfinite(lp):
            return Evaluation(-math.inf, lp), math.nan
        start = time.perf_counter()
        ll = float(likelihood(model, y, derive_rng(seed, LIKELIHOOD_STREAM, i)))
        return Evaluation(ll, lp), time.perf_counter() - start

    theta = np.asarray(prior.initial_point() if theta0 is None else theta0, dtype=float)
    current, elapsed = evaluate(theta, 0)
    if math.isnan(elapsed):
        raise ConfigError(f"Starting point {theta} has zero prior density or is not stationary")
    if not math.isfinite(current.loglik):
        raise DegeneracyError(f"Likelihood estimate at the starting point {theta} is -inf")

    draws = np.empty((MH, d))
    loglik = np.empty(MH)
    logprior = np.empty(MH)
    accepted = np.zeros(MH, dtype=bool)
    timings = np.full(MH, math.nan)

    draws[0], loglik[0], logprior[0], accepted[0], timings[0] = (
        theta, current.loglik, current.logprior, True, elapsed,
    )
    sampler.update(theta, 1.0)

    for i in range(1, MH):
        candidate = sampler.propose(theta, proposal_rng)
        cand_eval, timings[i] = evaluate(candidate, i)
        log_alpha = mh_accept_logratio(cand_eval, current)

        if proposal_rng.random() < math.exp(log_alpha):
            theta, current = candidate, cand_eval
            accepted[i] = True

        draws[i], loglik[i], logprior[i] = theta, current.loglik, current.logprior
        sampler.update(theta, math.exp(log_alpha))

        if i % 1000 == 0:
            logger.info(
                "PMMH %s iter %d/%d: acceptance %.3f",
                kind.value,
                i,
                MH,
                float(accepted[1 : i + 1].mean()),
            )

    return Chain(
        draws=draws,
        loglik=loglik,
        logprior=logprior,
        accepted=accepted,
        burn_in=burn_in,
        timings=timings,
        param_names=names,
        filter_kind=kind.value,
        n_particles=N,
    )
