"""
Synthetic daily returns fixture.

Simulates a returns series from the SVIJ jump-diffusion generator and
writes it in the ``date,return`` layout accepted by load_returns, so the
empirical pipeline can be exercised without the (non-redistributable)
index data. Substitute a real series by pointing the experiment config's
``dgp.data_path`` at a CSV with the same columns.
"""

from pathlib import Path

import pandas as pd

from .models import SvijParams, simulate_svij

# ============================================================================
# Configuration
# ============================================================================

NUM_RETURNS = 754
START_DATE = "2017-01-03"
DEFAULT_SEED = 20170103
DEFAULT_OUTPUT = Path("data") / "sp500_synthetic.csv"


# ============================================================================
# Generation
# ============================================================================


def generate_returns(
    n: int = NUM_RETURNS,
    seed: int = DEFAULT_SEED,
    params: SvijParams | None = None,
    start: str = START_DATE,
) -> pd.DataFrame:
    """
    Simulate percentage returns on consecutive business days.

    Args:
        n: Number of returns.
        seed: Seed for the SVIJ generator.
        params: SVIJ parameters (defaults to SvijParams()).
        start: First business date.

    Returns:
        DataFrame with columns ``date`` (ISO-8601) and ``return``.
    """
    params = params or SvijParams()
    returns = simulate_svij(params, n, seed)
    dates = pd.bdate_range(start=start, periods=n)
    return pd.DataFrame({"date": dates.strftime("%Y-%m-%d"), "return": returns})


def generate_all(output: str | Path = DEFAULT_OUTPUT, seed: int = DEFAULT_SEED) -> pd.DataFrame:
    """
    Generate the returns fixture and save it as CSV.

    Args:
        output: Target CSV path (parent directories are created).
        seed: Seed for the SVIJ generator.

    Returns:
        The generated DataFrame.
    """
    output_path = Path(output)
    output_path.parent.mkdir(parents=True, exist_ok=True)

    print("=" * 60)
    print("Generating Synthetic Daily Returns")
    print("=" * 60)

    print("\n[1/2] Simulating SVIJ returns...")
    df = generate_returns(seed=seed)
    jumps = (df["return"].abs() > 4 * df["return"].std()).sum()
    print(f"  ✓ Created {len(df)} returns from {df['date'].iloc[0]} to {df['date'].iloc[-1]}")
    print(f"  ✓ Mean {df['return'].mean():.4f}, sd {df['return'].std():.4f}, {jumps} moves beyond 4 sd")

    print("\n[2/2] Writing CSV...")
    df.to_csv(output_path, index=False, float_format="%.17g")
    print(f"  ✓ Saved to {output_path.absolute()}")
    print("=" * 60)

    return df


# ============================================================================
# CLI Entry Point
# ============================================================================


if __name__ == "__main__":
    generate_all()
