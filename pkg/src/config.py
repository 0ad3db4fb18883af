"""
Environment settings, logging setup and random stream derivation.

Settings are read from the process environment (a local .env file is loaded
first). Random streams are derived from a master seed plus task keys, so a
replication's draws never depend on which worker ran it.
"""

import logging
import os
from collections.abc import Sequence

import numpy as np
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


# ============================================================================
# Configuration
# ============================================================================

LOG_ENV_VAR = "PMMHF_LOG"
JOBS_ENV_VAR = "PMMHF_JOBS"
OUT_ENV_VAR = "PMMHF_OUT"

DEFAULT_LOG_LEVEL = "WARNING"
DEFAULT_OUTPUT_DIR = "results"

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def default_jobs() -> int:
    """Default worker count, from PMMHF_JOBS or 1."""
    return int(os.getenv(JOBS_ENV_VAR, "1"))


def default_output_dir() -> str:
    """Default artifact directory, from PMMHF_OUT or ``results``."""
    return os.getenv(OUT_ENV_VAR, DEFAULT_OUTPUT_DIR)


# ============================================================================
# Logging
# ============================================================================


def configure_logging(level: str | int | None = None) -> int:
    """
    Configure root logging for CLI runs.

    Args:
        level: Explicit level name or number. If None, reads PMMHF_LOG.

    Returns:
        The numeric level that was applied.
    """
    if level is None:
        level = os.getenv(LOG_ENV_VAR, DEFAULT_LOG_LEVEL)

    if isinstance(level, str):
        numeric = logging.getLevelName(level.strip().upper())
        if not isinstance(numeric, int):
            numeric = logging.WARNING
    else:
        numeric = int(level)

    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)
    return numeric


# ============================================================================
# Random Streams
# ============================================================================

SeedLike = int | Sequence[int] | np.random.SeedSequence | np.random.Generator


def derive_rng(seed: SeedLike, *keys: int) -> np.random.Generator:
    """
    Derive an independent generator from a master seed and task keys.

    The same (seed, keys) always yields the same stream, and different key
    tuples yield statistically independent streams.

    Args:
        seed: Master seed (int or int sequence). A Generator is returned as-is
            when no keys are given.
        *keys: Non-negative integers identifying the task (run index, filter
            index, replication...).

    Returns:
        A numpy Generator.
    """
    if isinstance(seed, np.random.Generator):
        if not keys:
            return seed
        # Child streams are taken from the parent's bit generator entropy
        seed = int(seed.integers(0, 2**63 - 1))

    if isinstance(seed, np.random.SeedSequence):
        entropy = seed.entropy
    elif isinstance(seed, Sequence):
        entropy = [int(s) for s in seed]
    else:
        entropy = int(seed)

    if isinstance(entropy, list):
        return np.random.default_rng(np.random.SeedSequence([*entropy, *map(int, keys)]))
    return np.random.default_rng(np.random.SeedSequence([entropy, *map(int, keys)]))


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a 63-bit integer seed from a master seed and task keys."""
    state = np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1, np.uint64)
    return int(state[0] >> np.uint64(1))
