"""
Unit tests for the particle filters.

The statistical checks (marked slow) compare averaged likelihood estimates
against exact values: the Kalman likelihood for LG, and a quadrature of
p(y_1) for a one-observation SV series. They also check how the BPF and DPF
variances order themselves across signal-to-noise ratios.
"""

import math

import numpy as np
import pytest
from scipy import integrate, special

from src.errors import (
    ConfigError,
    DataError,
    DegeneracyError,
    MeasurementDomainError,
    UnsupportedModelError,
)
from src.filters import (
    FilterKind,
    FilterOptions,
    ParticleCloud,
    ResamplingScheme,
    cyclic_permutations,
    dpf_log_weights,
    fapf_step,
    filter_loglik,
    resample,
    resample_indices,
    run_filter,
    udpf_step,
    upf_step,
)
from src.kalman_oracle import kalman_loglik
from src.models import (
    LgModel,
    LgParams,
    SNR_PRESETS,
    ModelFamily,
    ScdModel,
    ScdParams,
    SvModel,
    SvParams,
    measurement_density,
    normal_logpdf,
    simulate,
)
from src.unscented import model_sigma_points

# ============================================================================
# Fixtures
# ============================================================================


@pytest.fixture
def lg_model() -> LgModel:
    return LgModel(LgParams(sigma_eta=1.0, rho=0.6, sigma_v=0.8))


@pytest.fixture
def sv_model() -> SvModel:
    return SvModel(SvParams(phi=0.0, rho=0.5, sigma_v=0.5))


@pytest.fixture
def lg_data(lg_model) -> np.ndarray:
    y, _ = simulate(lg_model, 10, seed=123)
    return y


@pytest.fixture
def lg_data20(lg_model) -> np.ndarray:
    y, _ = simulate(lg_model, 20, seed=321)
    return y


@pytest.fixture
def cloud() -> ParticleCloud:
    rng = np.random.default_rng(0)
    weights = rng.random(40)
    return ParticleCloud(particles=rng.normal(size=40), weights=weights / weights.sum(), t=3)


def exact_lg_increment(cloud: ParticleCloud, model: LgModel, y: float) -> float:
    """log sum_j pi_j N(y; rho x_j, sigma_v^2 + sigma_eta^2)."""
    var = model.sigma_v**2 + model.sigma_eta**2
    return float(
        special.logsumexp(cloud.log_weights + normal_logpdf(y, model.rho * cloud.particles, var))
    )


def brute_force_dpf_weights(cloud: ParticleCloud, model, y: float, eta: np.ndarray) -> np.ndarray:
    """Double loop over new particles and all N ancestors, written out per family."""
    x_new, _ = model.invert_measurement(y, eta)
    if model.family is ModelFamily.LG:
        jac = 1.0
    elif model.family is ModelFamily.SCD:
        jac = 1.0 / y
    else:
        # 2 / |y| per root, split over the two roots
        jac = 1.0 / abs(y)
    var = model.sigma_v**2
    weights = np.empty(cloud.N)
    for j in range(cloud.N):
        total = 0.0
        for i in range(cloud.N):
            mean = model.phi + model.rho * cloud.particles[i]
            dens = math.exp(-0.5 * (x_new[j] - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)
            total += cloud.weights[i] * dens
        weights[j] = jac * total / cloud.N
    return weights


# ============================================================================
# Building Blocks
# ============================================================================


class TestMatchPlan:
    """Tests for cyclic_permutations."""

    def test_rotations(self):
        """Should list K_1..K_L as 1-based cyclic rotations."""
        plan = cyclic_permutations(4, 2)

        assert plan.permutations == [(1, 2, 3, 4), (2, 3, 4, 1)]
        assert plan.indices.shape == (2, 4)

    @pytest.mark.parametrize("N,L", [(4, 0), (4, 5), (0, 1)])
    def test_rejects_out_of_range(self, N, L):
        """Should refuse L outside [1, N]."""
        with pytest.raises(ConfigError):
            cyclic_permutations(N, L)


class TestResampling:
    """Tests for resampling and weight normalization."""

    def test_all_zero_weights(self):
        """Should raise on a degenerate weight vector."""
        with pytest.raises(DegeneracyError):
            resample_indices(np.zeros(5), np.random.default_rng(1))

    @pytest.mark.parametrize("scheme", list(ResamplingScheme))
    def test_point_mass(self, scheme):
        """Should always pick the only particle with weight."""
        cloud = ParticleCloud(np.array([1.0, 2.0, 3.0]), np.array([0.0, 1.0, 0.0]))

        out = resample(cloud, np.random.default_rng(2), scheme)

        np.testing.assert_array_equal(out.particles, [2.0, 2.0, 2.0])
        np.testing.assert_allclose(out.weights, 1 / 3)

    def test_log_weights_all_zero(self):
        """Should report a -inf log total and keep uniform weights."""
        cloud, log_total = ParticleCloud.from_log_weights(
            np.zeros(4), np.full(4, -np.inf), t=1
        )

        assert log_total == -math.inf
        np.testing.assert_allclose(cloud.weights, 0.25)

    def test_log_weights_normalize(self):
        """Should return normalized weights and the log of their sum."""
        cloud, log_total = ParticleCloud.from_log_weights(
            np.arange(3.0), np.log([1.0, 2.0, 1.0]) + 500.0, t=1
        )

        assert log_total == pytest.approx(math.log(4.0) + 500.0)
        np.testing.assert_allclose(cloud.weights, [0.25, 0.5, 0.25])
        assert cloud.ess() == pytest.approx(1 / (0.0625 * 2 + 0.25))


# ============================================================================
# Step Kernels
# ============================================================================


class TestStepKernels:
    """Single-step checks against the exact LG predictive."""

    def test_fapf_increment_is_exact(self, cloud, lg_model):
        """Should return the exact one-step predictive log density."""
        new, increment = fapf_step(cloud, lg_model, 0.7, np.random.default_rng(3))

        assert increment == pytest.approx(exact_lg_increment(cloud, lg_model, 0.7))
        np.testing.assert_allclose(new.weights, 1 / cloud.N)
        assert new.t == cloud.t + 1

    def test_fapf_accepts_params(self, cloud, lg_model):
        """Should accept bare LG parameters."""
        _, increment = fapf_step(cloud, lg_model.params, 0.7, np.random.default_rng(3))

        assert increment == pytest.approx(exact_lg_increment(cloud, lg_model, 0.7))

    def test_fapf_rejects_sv(self, cloud, sv_model):
        """Should refuse non-LG models."""
        with pytest.raises(UnsupportedModelError):
            fapf_step(cloud, sv_model, 0.7, np.random.default_rng(3))

    def test_udpf_increment_is_exact_for_lg(self, cloud, lg_model):
        """Should use the exact posterior proposal for LG, so every draw gives the same increment."""
        sigma = model_sigma_points(lg_model)
        expected = exact_lg_increment(cloud, lg_model, -0.4)

        for seed in range(3):
            _, increment = udpf_step(cloud, lg_model, -0.4, sigma, np.random.default_rng(seed))
            assert increment == pytest.approx(expected, abs=1e-9)

    def test_upf_increment_is_exact_for_lg(self, cloud, lg_model):
        """Should condition exactly when the measurement is linear."""
        _, increment = upf_step(cloud, lg_model, 1.1, np.random.default_rng(4))

        assert increment == pytest.approx(exact_lg_increment(cloud, lg_model, 1.1), abs=1e-9)

    def test_dpf_weights_average_matches(self, lg_model):
        """Should average the transition density over the L matched ancestors."""
        cloud = ParticleCloud.uniform(np.array([-1.0, 0.0, 2.0]))
        eta = np.array([0.3, -0.2, 1.0])
        plan = cyclic_permutations(3, 3)

        x_new, log_w = dpf_log_weights(cloud, lg_model, 0.5, eta, plan)

        for j in range(3):
            dens = np.exp(lg_model.log_transition_density(cloud.particles, x_new[j]))
            assert math.exp(log_w[j]) == pytest.approx(np.mean(dens / 3))

    def test_sv_dpf_splits_two_roots(self, sv_model):
        """Should divide the SV Jacobian by the number of roots."""
        cloud = ParticleCloud.uniform(np.array([0.0]))
        plan = cyclic_permutations(1, 1)

        x_new, log_w = dpf_log_weights(cloud, sv_model, 0.5, np.array([0.8]), plan)
        dens = math.exp(float(sv_model.log_transition_density(np.array(0.0), x_new[0])))

        assert math.exp(log_w[0]) == pytest.approx((2.0 / 0.5) / 2 * dens)

    @pytest.mark.parametrize("preset,N", [("lg_high", 20), ("scd_high", 12), ("sv_high", 17)])
    def test_dpf_full_matching_equals_double_sum(self, preset, N):
        """Should equal the all-ancestor double sum when L = N, step after step."""
        model = SNR_PRESETS[preset]
        y, _ = simulate(model, 8, seed=17)
        rng = np.random.default_rng(18)
        cloud = ParticleCloud.uniform(model.sample_initial(rng, N))
        plan = cyclic_permutations(N, N)

        for t, value in enumerate(y):
            eta = model.sample_error(rng, N)
            x_new, log_w = dpf_log_weights(cloud, model, value, eta, plan)

            np.testing.assert_allclose(
                np.exp(log_w), brute_force_dpf_weights(cloud, model, value, eta), rtol=1e-12
            )
            cloud, _ = ParticleCloud.from_log_weights(x_new, log_w, t + 1)

    def test_udpf_lg_weights_do_not_depend_on_the_draw(self, lg_model):
        """Should weight each LG particle by N(y; rho x_j, sigma_v^2 + sigma_eta^2) from a uniform cloud."""
        prev = ParticleCloud.uniform(np.random.default_rng(2).normal(size=50))
        sigma = model_sigma_points(lg_model)
        var = lg_model.sigma_v**2 + lg_model.sigma_eta**2
        exact = np.exp(normal_logpdf(0.9, lg_model.rho * prev.particles, var))
        exact /= exact.sum()

        for seed in range(3):
            new, _ = udpf_step(prev, lg_model, 0.9, sigma, np.random.default_rng(seed))
            ratio = new.weights / exact
            assert np.std(ratio) / np.mean(ratio) < 1e-8

    def test_udpf_lg_weights_flat_for_one_ancestor(self, lg_model):
        """Should give equal weights when every incoming particle is the same."""
        prev = ParticleCloud.uniform(np.full(30, 0.4))
        new, _ = udpf_step(prev, lg_model, -1.2, model_sigma_points(lg_model), np.random.default_rng(5))

        assert np.std(new.weights) / np.mean(new.weights) < 1e-8


# ============================================================================
# Full Runs
# ============================================================================


class TestRunFilter:
    """Tests for run_filter."""

    @pytest.mark.parametrize("kind", list(FilterKind))
    def test_deterministic(self, kind, lg_model, lg_data):
        """Should reproduce the estimate for a fixed seed."""
        first = run_filter(kind, lg_model, lg_data, 50, seed=7)
        second = run_filter(kind, lg_model, lg_data, 50, seed=7)

        assert first.loglik == second.loglik
        assert first.increments.shape == (10,)
        assert first.filtered_means.shape == (10,)
        assert not first.degenerate

    def test_kind_from_string(self, lg_model, lg_data):
        """Should accept filter ids as strings."""
        assert math.isfinite(filter_loglik("dpf", lg_model, lg_data, 30, FilterOptions(L=5), 1))

    def test_fapf_rejects_sv(self, sv_model):
        """Should refuse FAPF outside the LG model."""
        with pytest.raises(UnsupportedModelError):
            run_filter("fapf", sv_model, np.array([0.1, 0.2]), 10)

    @pytest.mark.parametrize("kind", ["dpf", "udpf"])
    def test_sv_zero_observation(self, kind, sv_model):
        """Should refuse to invert a zero SV observation."""
        with pytest.raises(MeasurementDomainError):
            run_filter(kind, sv_model, np.array([0.3, 0.0]), 20)

    def test_scd_nonpositive_observation(self):
        """Should refuse a non-positive SCD duration in the UDPF."""
        model = ScdModel(ScdParams(alpha=2.0, beta=2.0, phi=0.0, rho=0.5, sigma_v=0.5))
        with pytest.raises(MeasurementDomainError):
            run_filter("udpf", model, np.array([1.0, -0.5]), 20)

    def test_rejects_nan(self, lg_model):
        """Should refuse non-finite observations."""
        with pytest.raises(DataError):
            run_filter("bpf", lg_model, np.array([0.0, np.nan]), 10)

    def test_rejects_l_above_n(self, lg_model, lg_data):
        """Should refuse more DPF matches than particles."""
        with pytest.raises(ConfigError):
            run_filter("dpf", lg_model, lg_data, 5, FilterOptions(L=6))

    def test_degenerate_run(self):
        """Should flag a run whose weights all vanish."""
        model = LgModel(LgParams(sigma_eta=1e-3, rho=0.0, sigma_v=1e-3))
        run = run_filter("bpf", model, np.array([0.0, 1e200, 0.0]), 20, seed=1)

        assert run.degenerate
        assert run.loglik == -math.inf
        assert run.increments.shape == (2,)

    def test_close_to_kalman(self, lg_model):
        """Should land near the exact likelihood with many particles."""
        y, _ = simulate(lg_model, 30, seed=8)
        exact = kalman_loglik(lg_model.params, y)

        for kind in FilterKind:
            assert run_filter(kind, lg_model, y, 2000, seed=5).loglik == pytest.approx(exact, abs=1.0)


# ============================================================================
# Unbiasedness
# ============================================================================


@pytest.mark.slow
class TestUnbiasedness:
    """Averages of exp(loglik) over many runs."""

    @pytest.mark.parametrize(
        "kind,N,L",
        [("bpf", 50, 1), ("fapf", 20, 1), ("upf", 50, 1), ("dpf", 100, 1), ("dpf", 100, 5), ("udpf", 50, 1)],
    )
    def test_lg_likelihood_unbiased(self, kind, N, L, lg_model, lg_data20):
        """Should average exp(loglik - kalman) to 1 within three Monte Carlo standard errors."""
        exact = kalman_loglik(lg_model.params, lg_data20)
        options = FilterOptions(L=L)
        ratio = np.exp(
            np.array([filter_loglik(kind, lg_model, lg_data20, N, options, r) for r in range(2000)])
            - exact
        )
        se = ratio.std(ddof=1) / math.sqrt(ratio.size)

        assert abs(ratio.mean() - 1.0) < 3 * se

    @pytest.mark.parametrize("kind", ["bpf", "dpf", "udpf", "upf"])
    def test_sv_single_observation_unbiased(self, kind, sv_model):
        """Should average to p(y_1) for SV, where the DPF inverts two roots."""
        y1 = 0.8
        mean, var = sv_model.stationary_mean, sv_model.stationary_variance
        exact, _ = integrate.quad(
            lambda x: math.exp(float(normal_logpdf(x, mean, var)))
            * float(measurement_density(sv_model, x, y1)),
            -15,
            15,
        )
        estimates = np.array(
            [filter_loglik(kind, sv_model, np.array([y1]), 50, seed=r) for r in range(2000)]
        )

        assert np.mean(np.exp(estimates)) == pytest.approx(exact, rel=0.05)


@pytest.mark.slow
class TestVarianceOrdering:
    """Log-likelihood variance of BPF against DPF (L = 1) at equal N."""

    @pytest.mark.parametrize("preset,smaller,larger", [("lg_high", "dpf", "bpf"), ("lg_low", "bpf", "dpf")])
    def test_variance_follows_snr(self, preset, smaller, larger):
        """Should favour the DPF at high SNR and the BPF at low SNR."""
        model = SNR_PRESETS[preset]
        y, _ = simulate(model, 500, seed=77)
        variance = {
            kind: np.var([filter_loglik(kind, model, y, 200, seed=r) for r in range(100)], ddof=1)
            for kind in (smaller, larger)
        }

        assert variance[smaller] < variance[larger]


# ============================================================================
# CLI Entry Point
# ============================================================================

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
