"""
Unit tests for returns ingestion, checksums and staged artifact writing.
"""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.artifacts import (
    ArtifactWriter,
    chain_frame,
    checksum_frame,
    checksum_json,
    json_text,
    load_returns,
    read_chain_csv,
)
from src.errors import DataError
from src.pmmh import Chain

# ============================================================================
# Fixtures
# ============================================================================


@pytest.fixture
def returns_csv(tmp_path) -> Path:
    path = tmp_path / "returns.csv"
    path.write_text("date,return\n2020-01-02,0.5\n2020-01-03,-1.25\n2020-01-06,0.0\n")
    return path


@pytest.fixture
def chain() -> Chain:
    n = 12
    return Chain(
        draws=np.column_stack([np.linspace(0, 1, n), np.linspace(-1, 0, n)]),
        loglik=np.linspace(-50, -40, n),
        logprior=np.full(n, -2.0),
        accepted=np.arange(n) % 3 == 0,
        burn_in=4,
        timings=np.full(n, 0.002),
        param_names=("phi", "rho"),
        filter_kind="dpf",
        n_particles=64,
    )


# ============================================================================
# Returns Ingestion Tests
# ============================================================================


class TestLoadReturns:
    """Tests for load_returns."""

    def test_reads_values_and_dates(self, returns_csv):
        """Should return the return column and the dates."""
        series = load_returns(returns_csv)

        np.testing.assert_array_equal(series.returns, [0.5, -1.25, 0.0])
        assert series.dates == ["2020-01-02", "2020-01-03", "2020-01-06"]
        assert len(series) == 3

    def test_reports_bad_line(self, tmp_path):
        """Should name the file line of a malformed value."""
        path = tmp_path / "bad.csv"
        path.write_text("date,return\n2020-01-02,0.5\n2020-01-03,abc\n")

        with pytest.raises(DataError, match=":3:"):
            load_returns(path)

    def test_reports_empty_value(self, tmp_path):
        """Should refuse an empty return cell."""
        path = tmp_path / "gap.csv"
        path.write_text("date,return\n2020-01-02,\n")

        with pytest.raises(DataError, match=":2:"):
            load_returns(path)

    def test_missing_column(self, tmp_path):
        """Should refuse a file without a return column."""
        path = tmp_path / "other.csv"
        path.write_text("date,price\n2020-01-02,10\n")

        with pytest.raises(DataError, match="return"):
            load_returns(path)

    def test_missing_file(self, tmp_path):
        """Should refuse a path that does not exist."""
        with pytest.raises(DataError):
            load_returns(tmp_path / "nope.csv")

    def test_minimum_length(self, returns_csv):
        """Should enforce a minimum number of returns on request."""
        with pytest.raises(DataError):
            load_returns(returns_csv).require_length(50)


# ============================================================================
# Checksum Tests
# ============================================================================


class TestChecksums:
    """Tests for the reproducibility checksums."""

    def test_json_ignores_timing(self):
        """Should give the same checksum when only timings differ."""
        first = {"bpf": {"alct": 0.01, "n_opt": 100}}
        second = {"bpf": {"alct": 0.05, "n_opt": 100}}

        assert checksum_json(first) == checksum_json(second)
        assert checksum_json(first) != checksum_json({"bpf": {"alct": 0.01, "n_opt": 101}})

    def test_frame_ignores_timing(self):
        """Should ignore the lik_seconds column."""
        a = pd.DataFrame({"x": [1.0, 2.0], "lik_seconds": [0.1, 0.2]})
        b = pd.DataFrame({"x": [1.0, 2.0], "lik_seconds": [0.3, 0.4]})

        assert checksum_frame(a) == checksum_frame(b)

    def test_json_text_non_finite(self):
        """Should write non-finite floats as valid JSON."""
        parsed = json.loads(json_text({"a": float("-inf"), "b": float("nan"), "c": np.float64(1.5)}))

        assert parsed == {"a": "-inf", "b": None, "c": 1.5}


# ============================================================================
# Writer Tests
# ============================================================================


class TestArtifactWriter:
    """Tests for the staged writer."""

    def test_commit_renames(self, tmp_path):
        """Should keep files staged as .partial until commit."""
        writer = ArtifactWriter(tmp_path / "out")
        writer.write_json("report.json", {"a": 1})
        writer.write_csv("table.csv", pd.DataFrame({"x": [1.0]}))

        assert (tmp_path / "out" / "report.json.partial").exists()
        assert not (tmp_path / "out" / "report.json").exists()

        final = writer.commit()

        assert sorted(p.name for p in final) == ["report.json", "table.csv"]
        assert not (tmp_path / "out" / "report.json.partial").exists()
        assert set(writer.checksums) == {"report.json", "table.csv"}

    def test_chain_csv_roundtrip(self, tmp_path, chain):
        """Should rebuild the chain columns, burn-in and particle count from CSV."""
        path = tmp_path / "chain_dpf.csv"
        chain_frame(chain).to_csv(path, index=False)

        back = read_chain_csv(path, "dpf")

        np.testing.assert_allclose(back.draws, chain.draws)
        assert back.param_names == ("phi", "rho")
        assert back.burn_in == 4
        assert back.n_particles == 64
        np.testing.assert_array_equal(back.accepted, chain.accepted)

    def test_chain_csv_missing_columns(self, tmp_path):
        """Should refuse a CSV that is not a chain."""
        path = tmp_path / "junk.csv"
        pd.DataFrame({"x": [1]}).to_csv(path, index=False)

        with pytest.raises(DataError):
            read_chain_csv(path)


# ============================================================================
# CLI Entry Point
# ============================================================================

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
