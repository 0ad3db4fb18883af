"""
Reading and writing experiment artifacts.

Returns data comes in as CSV (``date,return`` or a single ``return``
column). Results go out as CSV and JSON files that are first written with
a ``.partial`` suffix and renamed once the whole run has succeeded, so an
interrupted run never leaves files that look complete. Checksums for the
reproducibility manifest skip wall-clock fields.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .errors import DataError
from .pmmh import Chain

logger = logging.getLogger(__name__)

# Wall-clock fields; excluded from reproducibility checksums
TIMING_KEYS = frozenset({"alct", "elapsed", "lik_seconds"})

FLOAT_FORMAT = "%.17g"
PARTIAL_SUFFIX = ".partial"


# ============================================================================
# Returns Ingestion
# ============================================================================


@dataclass
class ReturnsSeries:
    """A returns series loaded from disk."""

    returns: np.ndarray
    dates: list[str] | None
    source: str

    def __len__(self) -> int:
        return int(self.returns.size)

    def require_length(self, minimum: int = 50) -> "ReturnsSeries":
        if len(self) < minimum:
            raise DataError(f"{self.source}: need at least {minimum} returns, got {len(self)}")
        return self


def load_returns(path: str | Path) -> ReturnsSeries:
    """
    Load a returns CSV.

    Args:
        path: CSV file with a header and a ``return`` column, optionally
            preceded by ``date``.

    Returns:
        The parsed series.

    Raises:
        DataError: If the file is missing, has no ``return`` column, or a
            row holds an empty, malformed or non-finite value (the message
            names the file line).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Returns file not found: {path}")

    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: cannot parse CSV ({e})") from e

    df.columns = [c.strip().lower() for c in df.columns]
    if "return" not in df.columns:
        raise DataError(f"{path}: expected a 'return' column, found {list(df.columns)}")

    raw = df["return"].fillna("").astype(str).str.strip()
    values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        # +1 for the header, +1 for 1-based lines
        raise DataError(f"{path}:{row + 2}: invalid return value {raw.iloc[row]!r}")

    dates = None
    if "date" in df.columns:
        dates = [d.strip() for d in df["date"].astype(str)]
        parsed = pd.to_datetime(pd.Series(dates), errors="coerce")
        if parsed.isna().any():
            logger.warning("%s: %d dates could not be parsed", path, int(parsed.isna().sum()))
        elif not parsed.is_monotonic_increasing:
            logger.warning("%s: dates are not in increasing order", path)

    logger.info("Loaded %d returns from %s", values.size, path)
    return ReturnsSeries(returns=values, dates=dates, source=str(path))


# ============================================================================
# Checksums
# ============================================================================


def _strip_timing(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _to_builtin(obj: Any) -> Any:
    """json.dumps default hook for numpy values and non-finite floats."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def _clean_floats(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _clean_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_floats(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def json_text(obj: Any) -> str:
    return json.dumps(_clean_floats(obj), indent=2, sort_keys=True, default=_to_builtin)


def checksum_json(obj: Any) -> str:
    """sha256 of the canonical JSON form without timing keys."""
    text = json.dumps(
        _clean_floats(_strip_timing(obj)), sort_keys=True, default=_to_builtin
    )
    return hashlib.sha256(text.encode()).hexdigest()


def checksum_frame(df: pd.DataFrame) -> str:
    """sha256 of the CSV form without timing columns."""
    kept = df.drop(columns=[c for c in df.columns if c in TIMING_KEYS])
    return hashlib.sha256(
        kept.to_csv(index=False, float_format=FLOAT_FORMAT).encode()
    ).hexdigest()


def checksum_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


# ============================================================================
# Staged Writer
# ============================================================================


class ArtifactWriter:
    """
    Writes artifacts as ``<name>.partial`` and renames them on commit().

    Args:
        out_dir: Output directory (created if missing).
    """

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.checksums: dict[str, str] = {}
        self._staged: list[str] = []

    def _partial(self, name: str) -> Path:
        self._staged.append(name)
        return self.out_dir / f"{name}{PARTIAL_SUFFIX}"

    def write_csv(self, name: str, df: pd.DataFrame) -> Path:
        path = self._partial(name)
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        self.checksums[name] = checksum_frame(df)
        return path

    def write_json(self, name: str, obj: Any) -> Path:
        path = self._partial(name)
        path.write_text(json_text(obj))
        self.checksums[name] = checksum_json(obj)
        return path

    def commit(self) -> list[Path]:
        """Rename every staged file to its final name."""
        final = []
        for name in self._staged:
            target = self.out_dir / name
            (self.out_dir / f"{name}{PARTIAL_SUFFIX}").replace(target)
            final.append(target)
        self._staged.clear()
        return final


# ============================================================================
# Readers
# ============================================================================

_CHAIN_META_COLUMNS = (
    "iteration", "loglik", "logprior", "accepted", "burn_in", "lik_seconds", "n_particles",
)


def chain_frame(chain: Chain) -> pd.DataFrame:
    """Chain as a table, with the particle count as a constant column."""
    df = chain.to_frame()
    df["n_particles"] = chain.n_particles
    return df


def read_chain_csv(path: str | Path, filter_kind: str = "") -> Chain:
    """
    Rebuild a Chain from a chain CSV.

    Raises:
        DataError: If the file is missing or lacks chain columns.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Chain file not found: {path}")
    df = pd.read_csv(path)
    missing = {"loglik", "accepted", "burn_in"} - set(df.columns)
    if missing:
        raise DataError(f"{path}: missing chain columns {sorted(missing)}")

    names = tuple(c for c in df.columns if c not in _CHAIN_META_COLUMNS)
    timings = df["lik_seconds"] if "lik_seconds" in df.columns else pd.Series(np.nan, index=df.index)
    return Chain(
        draws=df[list(names)].to_numpy(dtype=float),
        loglik=df["loglik"].to_numpy(dtype=float),
        logprior=df["logprior"].to_numpy(dtype=float) if "logprior" in df else np.zeros(len(df)),
        accepted=df["accepted"].to_numpy().astype(bool),
        burn_in=int(df["burn_in"].sum()),
        timings=timings.to_numpy(dtype=float),
        param_names=names,
        filter_kind=filter_kind,
        n_particles=int(df["n_particles"].iloc[0]) if "n_particles" in df else 0,
    )
