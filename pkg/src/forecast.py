"""
One-step-ahead predictive densities and log scores.

Forecasts target the transformed observable z (y for LG, log y for SCD,
log y^2 for SV). For one parameter draw the conditional predictive is the
filtered cloud pushed through one transition draw and mixed over
p(z | x_{T+1}); the marginal predictive averages conditionals over the
posterior chain, pointwise on a fixed grid.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy import integrate

from .config import SeedLike, derive_rng, derive_seed
from .errors import ConfigError, DataError, GridCoverageError, MeasurementDomainError
from .filters import FilterKind, FilterOptions, ParticleCloud, run_filter
from .models import ModelFamily, ModelSpec, model_from_theta
from .pmmh import Chain, Prior, run_pmmh

logger = logging.getLogger(__name__)

DEFAULT_GRID_POINTS = 400
DEFAULT_GRID_WIDTH = 8.0
DEFAULT_THIN = 5


# ============================================================================
# Domain Types
# ============================================================================


@dataclass
class PredictiveDensity:
    """A predictive density of z evaluated on a grid."""

    grid: np.ndarray
    density: np.ndarray
    realized: float = math.nan
    score: float = math.nan
    n_draws: int = 0
    n_excluded: int = 0
    conditionals: np.ndarray | None = None

    def mass(self) -> float:
        """Trapezoid integral over the grid."""
        return float(integrate.trapezoid(self.density, self.grid))

    @property
    def peak(self) -> float:
        return float(self.density.max())


@dataclass
class ForecastReport:
    """Per-period log scores and their averages for each filter."""

    baseline: str
    scores: dict[str, np.ndarray]
    als: dict[str, float]
    adls: dict[str, float]
    realized: np.ndarray = field(default_factory=lambda: np.empty(0))
    densities: dict[str, PredictiveDensity] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            name: {
                "ALS": self.als[name],
                "ADLS": self.adls[name],
                "scores": [float(s) for s in self.scores[name]],
            }
            for name in self.scores
        }


# ============================================================================
# Grid and Scores
# ============================================================================


def transformed_observations(family: ModelFamily | str, y: np.ndarray) -> np.ndarray:
    """Map y to the forecast target: y (LG), log y (SCD), log y^2 (SV)."""
    family = ModelFamily(family)
    y = np.asarray(y, dtype=float)
    if family is ModelFamily.LG:
        return y
    if family is ModelFamily.SCD:
        if np.any(y <= 0):
            raise MeasurementDomainError("SCD observations must be strictly positive")
        return np.log(y)
    with np.errstate(divide="ignore"):
        return np.log(y**2)


def make_grid(
    z: np.ndarray,
    n_points: int = DEFAULT_GRID_POINTS,
    width: float = DEFAULT_GRID_WIDTH,
    realized: float | None = None,
) -> np.ndarray:
    """
    Evenly spaced grid over mean(z) +- width * sd(z) of the in-sample values.

    If a finite realized value falls outside that range the grid is
    stretched to reach half an sd beyond it.

    Raises:
        DataError: If fewer than two in-sample values are finite.
    """
    z = np.asarray(z, dtype=float)
    z = z[np.isfinite(z)]
    if z.size < 2:
        raise DataError("Need at least two finite in-sample values to build a grid")
    m, s = float(z.mean()), float(z.std(ddof=1))
    if s <= 0:
        s = 1.0
    lo, hi = m - width * s, m + width * s
    if realized is not None and math.isfinite(realized):
        lo = min(lo, realized - 0.5 * s)
        hi = max(hi, realized + 0.5 * s)
    return np.linspace(lo, hi, n_points)


def log_score(pd: PredictiveDensity) -> float:
    """
    Log predictive density at the realized value, by linear interpolation.

    Returns:
        The log score; -inf where the interpolated density is 0.

    Raises:
        GridCoverageError: If the realized value lies outside the grid.
    """
    z = pd.realized
    if not (math.isfinite(z) and pd.grid[0] <= z <= pd.grid[-1]):
        raise GridCoverageError(
            f"Realized value {z} outside grid [{pd.grid[0]:.4g}, {pd.grid[-1]:.4g}]"
        )
    value = float(np.interp(z, pd.grid, pd.density))
    return math.log(value) if value > 0 else -math.inf


# ============================================================================
# Predictive Densities
# ============================================================================


def conditional_predictive(
    cloud: ParticleCloud, model: ModelSpec, grid: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """
    sum_j pi_T^{[j]} p(z | x_{T+1}^{[j]}) on the grid, with one transition
    draw x_{T+1}^{[j]} per particle.

    Raises:
        DataError: If the cloud is empty.
    """
    if cloud.N == 0:
        raise DataError("Cannot forecast from an empty particle cloud")
    x_next = model.sample_transition(cloud.particles, rng)
    log_dens = model.log_observable_density(grid[:, np.newaxis], x_next[np.newaxis, :])
    return np.exp(log_dens) @ cloud.weights


def _draw_conditional(
    theta: np.ndarray,
    family: ModelFamily,
    y: np.ndarray,
    kind: FilterKind,
    N: int,
    options: FilterOptions | None,
    grid: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray | None:
    model = model_from_theta(family, theta)
    if model is None:
        return None
    run = run_filter(kind, model, y, N, options, rng)
    if run.degenerate:
        return None
    return conditional_predictive(run.cloud, model, grid, rng)


def marginal_predictive(
    chain: Chain | np.ndarray,
    family: ModelFamily | str,
    y: np.ndarray,
    kind: FilterKind | str,
    N: int,
    grid: np.ndarray,
    seed: SeedLike,
    realized: float | None = None,
    options: FilterOptions | None = None,
    thin: int = DEFAULT_THIN,
    jobs: int = 1,
    keep_conditionals: bool = False,
) -> PredictiveDensity:
    """
    Average the conditional predictives over the retained chain draws.

    Draw i (after burn-in and thinning) runs the filter to T and takes its
    predictive draw from the stream (seed, i). Draws whose filter run is
    degenerate are left out and counted.

    Args:
        chain: PMMH chain, or an array of parameter vectors used as-is.
        family: Model family.
        y: In-sample observations y_1..y_T.
        kind: Filter identifier.
        N: Particles per filter run.
        grid: Evaluation grid for z.
        seed: Master seed.
        realized: Realized z_{T+1}; if given, the log score is attached.
        options: Filter options.
        thin: Keep every thin-th draw (1 keeps all).
        jobs: Parallel workers.
        keep_conditionals: Store the per-draw conditionals on the result.

    Returns:
        The marginal predictive density.

    Raises:
        ConfigError: If no draws remain or thin < 1.
        DataError: If every draw was degenerate.
    """
    if thin < 1:
        raise ConfigError(f"thin must be >= 1, got {thin}")
    family = ModelFamily(family)
    kind = FilterKind(kind)
    draws = chain.kept[::thin] if isinstance(chain, Chain) else np.atleast_2d(chain)[::thin]
    if draws.shape[0] == 0:
        raise ConfigError("No chain draws left after burn-in and thinning")

    y = np.asarray(y, dtype=float)
    grid = np.asarray(grid, dtype=float)
    results = Parallel(n_jobs=jobs)(
        delayed(_draw_conditional)(theta, family, y, kind, N, options, grid, derive_rng(seed, i))
        for i, theta in enumerate(draws)
    )

    kept = [r for r in results if r is not None]
    n_excluded = len(results) - len(kept)
    if n_excluded:
        logger.warning(
            "%s: excluded %d of %d degenerate draws from the marginal predictive",
            kind.value.upper(),
            n_excluded,
            len(results),
        )
    if not kept:
        raise DataError("Every chain draw produced a degenerate filter run")

    stacked = np.vstack(kept)
    total = np.zeros(grid.size)
    for row in stacked:
        total += row

    predictive = PredictiveDensity(
        grid=grid,
        density=total / len(kept),
        n_draws=len(kept),
        n_excluded=n_excluded,
        conditionals=stacked if keep_conditionals else None,
    )
    if realized is not None:
        predictive.realized = float(realized)
        predictive.score = log_score(predictive)
    return predictive


# ============================================================================
# Rolling Evaluation
# ============================================================================


def average_log_scores(
    scores: dict[str, np.ndarray], baseline: str
) -> tuple[dict[str, float], dict[str, float]]:
    """
    ALS = mean log score; ADLS = mean |score - baseline score|.

    Raises:
        ConfigError: If the baseline has no scores.
    """
    if baseline not in scores:
        raise ConfigError(f"Baseline filter {baseline} has no scores")
    base = np.asarray(scores[baseline], dtype=float)
    als = {name: float(np.mean(s)) for name, s in scores.items()}
    adls = {name: float(np.mean(np.abs(np.asarray(s) - base))) for name, s in scores.items()}
    return als, adls


def rolling_forecast(
    y: np.ndarray,
    family: ModelFamily | str,
    prior: Prior,
    kinds: list[FilterKind | str],
    N: int,
    MH: int,
    refresh_every: int,
    seed: int,
    horizon: int,
    burn_in: int = 0,
    thin: int = DEFAULT_THIN,
    options: dict[str, FilterOptions] | None = None,
    n_points: int = DEFAULT_GRID_POINTS,
    jobs: int = 1,
) -> ForecastReport:
    """
    Expanding-window one-step-ahead forecasts over the last ``horizon`` observations.

    For period k the in-sample window is y_1..y_{T+k-1} with T = len(y) - horizon.
    Each filter's PMMH chain is re-estimated every ``refresh_every`` periods
    and reused in between; the filters themselves are re-run on the full
    window every period.

    Args:
        y: Observations y_1..y_{T+H}.
        family: Model family.
        prior: Prior for PMMH.
        kinds: Filters to compare; BPF (or the first filter) is the ADLS baseline.
        N: Particles, the same for every filter.
        MH: Chain length per estimation.
        refresh_every: Periods between chain re-estimations.
        seed: Master seed.
        horizon: Number of forecast periods H.
        burn_in: Burn-in per chain.
        thin: Chain thinning for the predictive average.
        options: Filter options keyed by filter id.
        n_points: Grid size.
        jobs: Parallel workers for the per-draw predictives.

    Returns:
        The forecast report; densities holds each filter's first-period predictive.

    Raises:
        ConfigError: If horizon or refresh_every is below 1, or no filters are given.
    """
    kinds = [FilterKind(k) for k in kinds]
    if not kinds:
        raise ConfigError("At least one filter is required")
    if horizon < 1 or refresh_every < 1:
        raise ConfigError("horizon and refresh_every must be >= 1")
    y = np.asarray(y, dtype=float)
    T = y.size - horizon
    if T < 2:
        raise ConfigError(f"Need in-sample data before the {horizon} forecast periods")

    family = ModelFamily(family)
    options = options or {}
    z_all = transformed_observations(family, y)
    baseline = FilterKind.BPF.value if FilterKind.BPF in kinds else kinds[0].value

    scores: dict[str, list[float]] = {k.value: [] for k in kinds}
    densities: dict[str, PredictiveDensity] = {}
    chains: dict[str, Chain] = {}
    filter_keys = {k: list(FilterKind).index(k) for k in kinds}

    for k in range(horizon):
        end = T + k
        window = y[:end]
        realized = float(z_all[end])
        grid = make_grid(z_all[:end], n_points, realized=realized)

        for kind in kinds:
            key = filter_keys[kind]
            if k % refresh_every == 0:
                logger.info("Re-estimating %s chain at period %d/%d", kind.value, k + 1, horizon)
                chains[kind.value] = run_pmmh(
                    kind,
                    family,
                    prior,
                    window,
                    N,
                    MH,
                    burn_in,
                    derive_seed(seed, key, k),
                    options=options.get(kind.value),
                )

            predictive = marginal_predictive(
                chains[kind.value],
                family,
                window,
                kind,
                N,
                grid,
                derive_seed(seed, key, k, 1),
                realized=realized,
                options=options.get(kind.value),
                thin=thin,
                jobs=jobs,
            )
            scores[kind.value].append(predictive.score)
            if k == 0:
                densities[kind.value] = predictive

    score_arrays = {name: np.asarray(s) for name, s in scores.items()}
    als, adls = average_log_scores(score_arrays, baseline)
    return ForecastReport(
        baseline=baseline,
        scores=score_arrays,
        als=als,
        adls=adls,
        realized=z_all[T:],
        densities=densities,
    )
