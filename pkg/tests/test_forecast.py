"""
Unit tests for predictive densities, log scores and the rolling forecast loop.
"""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from src.errors import ConfigError, GridCoverageError, MeasurementDomainError
from src.filters import FilterKind, ParticleCloud
from src.forecast import (
    PredictiveDensity,
    average_log_scores,
    conditional_predictive,
    log_score,
    make_grid,
    marginal_predictive,
    rolling_forecast,
    transformed_observations,
)
from src.kalman_oracle import kalman_filter
from src.models import (
    LgModel,
    LgParams,
    SvijParams,
    SvModel,
    SvParams,
    simulate,
    simulate_svij,
    theta_from_model,
)
from src.pmmh import forecast_prior, simulation_prior

# ============================================================================
# Fixtures
# ============================================================================


@pytest.fixture
def lg_model() -> LgModel:
    return LgModel(LgParams(sigma_eta=0.5, rho=0.8, sigma_v=0.6))


@pytest.fixture
def cloud() -> ParticleCloud:
    return ParticleCloud.uniform(np.random.default_rng(0).normal(size=200))


# ============================================================================
# Grid and Score Tests
# ============================================================================


class TestGrid:
    """Tests for make_grid and log_score."""

    def test_grid_spans_eight_sds(self):
        """Should cover mean +- 8 sd with 400 points."""
        z = np.random.default_rng(1).normal(2.0, 0.5, size=300)
        grid = make_grid(z)

        assert grid.size == 400
        assert grid[0] == pytest.approx(z.mean() - 8 * z.std(ddof=1))
        assert grid[-1] == pytest.approx(z.mean() + 8 * z.std(ddof=1))

    def test_grid_stretches_to_realized(self):
        """Should extend the grid past an outlying realized value."""
        z = np.random.default_rng(1).normal(size=300)

        assert make_grid(z, realized=50.0)[-1] > 50.0

    def test_grid_skips_nonfinite(self):
        """Should ignore -inf values of log y^2 at y = 0."""
        grid = make_grid(np.array([-np.inf, 0.0, 1.0, 2.0]), n_points=11)

        assert np.all(np.isfinite(grid))

    def test_log_score_interpolates(self):
        """Should return the log of the interpolated density."""
        grid = np.linspace(-6, 6, 2001)
        density = PredictiveDensity(grid=grid, density=stats.norm.pdf(grid), realized=0.37)

        assert log_score(density) == pytest.approx(stats.norm.logpdf(0.37), abs=1e-4)

    def test_log_score_outside_grid(self):
        """Should raise when the realized value is off the grid."""
        density = PredictiveDensity(grid=np.linspace(0, 1, 5), density=np.ones(5), realized=2.0)

        with pytest.raises(GridCoverageError):
            log_score(density)

    def test_log_score_zero_density(self):
        """Should give -inf where the density vanishes."""
        density = PredictiveDensity(grid=np.linspace(0, 1, 5), density=np.zeros(5), realized=0.5)

        assert log_score(density) == -math.inf


class TestTransformedObservations:
    """Tests for transformed_observations."""

    def test_sv_uses_log_square(self):
        """Should map SV returns to log y^2."""
        z = transformed_observations("sv", np.array([-2.0, 0.5]))

        np.testing.assert_allclose(z, np.log([4.0, 0.25]))

    def test_scd_rejects_nonpositive(self):
        """Should refuse non-positive durations."""
        with pytest.raises(MeasurementDomainError):
            transformed_observations("scd", np.array([1.0, 0.0]))


# ============================================================================
# Predictive Density Tests
# ============================================================================


class TestConditionalPredictive:
    """Tests for conditional_predictive."""

    def test_lg_integrates_to_one(self, cloud, lg_model):
        """Should give a proper density over a wide grid."""
        grid = np.linspace(-10, 10, 4001)
        density = conditional_predictive(cloud, lg_model, grid, np.random.default_rng(2))

        assert integrate.trapezoid(density, grid) == pytest.approx(1.0, abs=1e-4)

    def test_sv_integrates_to_one(self, cloud):
        """Should give a proper density of log y^2."""
        model = SvModel(SvParams(phi=0.0, rho=0.5, sigma_v=0.5))
        grid = np.linspace(-40, 15, 8001)
        density = conditional_predictive(cloud, model, grid, np.random.default_rng(2))

        assert integrate.trapezoid(density, grid) == pytest.approx(1.0, abs=1e-3)

    def test_single_particle(self, lg_model):
        """Should equal N(z; x_next, sigma_eta^2) for one particle."""
        single = ParticleCloud.uniform(np.array([0.4]))
        grid = np.linspace(-3, 3, 7)
        density = conditional_predictive(single, lg_model, grid, np.random.default_rng(9))
        x_next = lg_model.sample_transition(np.array([0.4]), np.random.default_rng(9))[0]

        np.testing.assert_allclose(density, stats.norm.pdf(grid, loc=x_next, scale=0.5))


class TestMarginalPredictive:
    """Tests for marginal_predictive."""

    def test_rejects_bad_thinning(self, lg_model):
        """Should refuse thin < 1."""
        with pytest.raises(ConfigError):
            marginal_predictive(
                np.atleast_2d(theta_from_model(lg_model)), "lg", np.zeros(5), "bpf", 10,
                np.linspace(-3, 3, 11), seed=0, thin=0,
            )

    def test_attaches_score(self, lg_model):
        """Should record the draws used and the log score."""
        y, _ = simulate(lg_model, 30, seed=4)
        draws = np.tile(theta_from_model(lg_model), (6, 1))
        grid = make_grid(y, n_points=200)

        predictive = marginal_predictive(
            draws, "lg", y, "dpf", 100, grid, seed=3, realized=0.1, thin=2, keep_conditionals=True
        )

        assert predictive.n_draws == 3
        assert predictive.conditionals.shape == (3, 200)
        assert math.isfinite(predictive.score)
        assert predictive.mass() == pytest.approx(1.0, abs=0.01)

    @pytest.mark.slow
    def test_matches_kalman_predictive(self, lg_model):
        """Should approach the exact one-step predictive for LG at the true parameters."""
        y, _ = simulate(lg_model, 50, seed=6)
        last = kalman_filter(lg_model.params, y)[-1]
        mean = lg_model.rho * last.mean
        var = lg_model.rho**2 * last.variance + lg_model.sigma_v**2 + lg_model.sigma_eta**2
        grid = np.linspace(mean - 5, mean + 5, 201)
        draws = np.tile(theta_from_model(lg_model), (20, 1))

        predictive = marginal_predictive(draws, "lg", y, FilterKind.FAPF, 2000, grid, seed=1, thin=1)

        exact = stats.norm.pdf(grid, loc=mean, scale=math.sqrt(var))
        assert np.max(np.abs(predictive.density - exact)) < 0.02


# ============================================================================
# Rolling Forecast Tests
# ============================================================================


class TestAverageLogScores:
    """Tests for average_log_scores."""

    def test_als_and_adls(self):
        """Should average the scores and their distance from the baseline."""
        scores = {"bpf": np.array([-1.0, -2.0]), "dpf": np.array([-1.5, -1.0])}
        als, adls = average_log_scores(scores, "bpf")

        assert als == {"bpf": -1.5, "dpf": -1.25}
        assert adls == {"bpf": 0.0, "dpf": 0.75}

    def test_missing_baseline(self):
        """Should refuse a baseline without scores."""
        with pytest.raises(ConfigError):
            average_log_scores({"dpf": np.zeros(2)}, "bpf")


class TestRollingForecast:
    """Tests for rolling_forecast."""

    def test_small_run(self, lg_model):
        """Should score every period for every filter against the BPF baseline."""
        y, _ = simulate(lg_model, 60, seed=10)

        report = rolling_forecast(
            y, "lg", simulation_prior("lg"), ["dpf", "bpf"], N=50, MH=30,
            refresh_every=2, seed=5, horizon=3, burn_in=10, thin=5,
        )

        assert report.baseline == "bpf"
        assert set(report.scores) == {"bpf", "dpf"}
        assert all(s.shape == (3,) for s in report.scores.values())
        assert report.adls["bpf"] == 0.0
        assert set(report.densities) == {"bpf", "dpf"}
        np.testing.assert_allclose(report.realized, y[57:])
        assert set(report.to_dict()["dpf"]) == {"ALS", "ADLS", "scores"}

    def test_needs_in_sample_data(self, lg_model):
        """Should refuse a horizon that leaves no estimation window."""
        with pytest.raises(ConfigError):
            rolling_forecast(
                np.zeros(3), "lg", simulation_prior("lg"), ["bpf"], N=10, MH=5,
                refresh_every=1, seed=0, horizon=2,
            )

    @pytest.mark.slow
    @pytest.mark.parametrize("source", ["sv", "svij"])
    def test_filters_agree_on_forecasts(self, source):
        """Should give every filter the BPF's average log score and first-period density."""
        if source == "sv":
            y, _ = simulate(SvModel(SvParams(phi=0.0, rho=0.9, sigma_v=0.5)), 200, seed=71)
        else:
            y = simulate_svij(SvijParams(), 200, seed=71)

        report = rolling_forecast(
            y, "sv", forecast_prior(), ["bpf", "dpf", "upf", "udpf"], N=300, MH=1000,
            refresh_every=50, seed=72, horizon=50, burn_in=500, thin=5,
        )

        reference = report.densities["bpf"]
        for kind in ("dpf", "upf", "udpf"):
            assert abs(report.als[kind] - report.als["bpf"]) < 0.05, kind
            density = report.densities[kind]
            np.testing.assert_array_equal(density.grid, reference.grid)
            assert np.max(np.abs(density.density - reference.density)) < 0.05 * reference.peak, kind


# ============================================================================
# CLI Entry Point
# ============================================================================

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
