"""
Unit tests for the exact Kalman filter used as the LG ground truth.
"""

import numpy as np
import pytest

from src.errors import DataError
from src.kalman_oracle import (
    initial_state,
    joint_gaussian_loglik,
    kalman_filter,
    kalman_loglik,
    kalman_step,
    steady_state_variance,
)
from src.models import LgModel, LgParams, simulate

# ============================================================================
# Fixtures
# ============================================================================


@pytest.fixture
def params() -> LgParams:
    return LgParams(sigma_eta=0.7, rho=0.6, sigma_v=0.9)


@pytest.fixture
def observations(params) -> np.ndarray:
    y, _ = simulate(LgModel(params), 60, seed=17)
    return y


# ============================================================================
# Kalman Filter Tests
# ============================================================================


class TestKalmanLoglik:
    """Tests for kalman_loglik against the brute-force Gaussian likelihood."""

    def test_matches_joint_gaussian(self, params, observations):
        """Should equal the T-dimensional Gaussian log density."""
        assert kalman_loglik(params, observations) == pytest.approx(
            joint_gaussian_loglik(params, observations), rel=1e-9
        )

    def test_single_observation(self, params):
        """Should reduce to N(y; 0, sigma_x^2 + sigma_eta^2) for T = 1."""
        var = 0.9**2 / (1 - 0.6**2) + 0.7**2
        expected = -0.5 * (np.log(2 * np.pi * var) + 0.3**2 / var)

        assert kalman_loglik(params, np.array([0.3])) == pytest.approx(expected)

    def test_rejects_empty(self, params):
        """Should refuse an empty series."""
        with pytest.raises(DataError):
            kalman_loglik(params, np.array([]))

    def test_rejects_nan(self, params):
        """Should refuse non-finite observations."""
        with pytest.raises(DataError):
            kalman_filter(params, np.array([0.1, np.nan]))


class TestKalmanMoments:
    """Tests for filtered moments."""

    def test_variance_converges_to_steady_state(self, params, observations):
        """Should approach the Riccati fixed point."""
        path = kalman_filter(params, observations)

        assert path[-1].variance == pytest.approx(steady_state_variance(params), rel=1e-8)

    def test_precise_measurement_tracks_observation(self):
        """Should put the filtered mean on y when sigma_eta is tiny."""
        params = LgParams(sigma_eta=1e-6, rho=0.5, sigma_v=1.0)
        state = kalman_step(initial_state(params), params, 1.3)

        assert state.mean == pytest.approx(1.3, abs=1e-6)
        assert state.variance < 1e-10


# ============================================================================
# CLI Entry Point
# ============================================================================

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
