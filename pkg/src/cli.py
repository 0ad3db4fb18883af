"""
Experiment runner.

    pmmhfilters {simulate,calibrate,pmmh,forecast,report} --config PATH
                [--jobs K] [--seed S] [--out DIR]

One JSON file describes an experiment (model, data source, filters,
calibration, PMMH, prior, forecast settings and every seed). Each
subcommand writes its artifacts under the output directory, together with
a manifest holding the config hash, seeds and artifact checksums.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
"""

import argparse
import hashlib
import logging
import sys
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .artifacts import ArtifactWriter, chain_frame, load_returns, read_chain_csv
from .config import configure_logging, default_jobs, default_output_dir, derive_seed
from .errors import ConfigError, DataError, PmmhFiltersError
from .filters import FilterKind, FilterOptions, ResamplingScheme
from .forecast import rolling_forecast
from .generate_data import DEFAULT_OUTPUT
from .models import (
    SNR_PRESETS,
    ModelFamily,
    ModelSpec,
    SvijParams,
    build_model,
    parameter_names,
    simulate,
    simulate_svij,
    theta_from_model,
)
from .pmmh import (
    AdaptiveRandomWalk,
    Chain,
    Diagnostics,
    Prior,
    calibration_logliks,
    calibration_variance,
    diagnose,
    forecast_prior,
    nopt_from_variance,
    run_pmmh,
    simulation_prior,
)

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "calibrate", "pmmh", "forecast", "report")


# ============================================================================
# Experiment Config
# ============================================================================


class ModelBlock(BaseModel):
    """Model family and (optionally) its true / calibration parameters."""

    model_config = ConfigDict(extra="forbid")

    family: ModelFamily
    params: dict[str, float] | None = None
    preset: str | None = Field(None, description="Key of SNR_PRESETS")

    @model_validator(mode="after")
    def _check_preset(self) -> "ModelBlock":
        if self.preset is not None:
            if self.preset not in SNR_PRESETS:
                raise ValueError(f"Unknown preset {self.preset!r}; choose from {sorted(SNR_PRESETS)}")
            if SNR_PRESETS[self.preset].family is not self.family:
                raise ValueError(f"Preset {self.preset!r} is not a {self.family.value} model")
        if self.params is not None:
            build_model(self.family, self.params)
        return self

    def build(self) -> ModelSpec | None:
        if self.preset is not None:
            return SNR_PRESETS[self.preset]
        if self.params is not None:
            return build_model(self.family, self.params)
        return None


class DgpBlock(BaseModel):
    """Where the observations come from."""

    model_config = ConfigDict(extra="forbid")

    source: Literal["model", "svij", "csv"] = "model"
    T: int = Field(500, ge=1, description="Total length including forecast periods")
    seed: int = Field(ge=0)
    svij: SvijParams = Field(default_factory=SvijParams)
    data_path: str | None = None


class FilterBlock(BaseModel):
    """One filter to run, with its particle count or 'calibrate'."""

    model_config = ConfigDict(extra="forbid")

    kind: FilterKind
    N: int | Literal["calibrate"] = "calibrate"
    L: int = Field(1, ge=1)
    sigma_order: int | None = Field(None, ge=2)
    resampling: ResamplingScheme = ResamplingScheme.MULTINOMIAL

    @property
    def label(self) -> str:
        if self.kind is FilterKind.DPF and self.L > 1:
            return f"dpf_l{self.L}"
        return self.kind.value

    def options(self) -> FilterOptions:
        return FilterOptions(L=self.L, sigma_order=self.sigma_order, resampling=self.resampling)


class CalibrationBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_s: int = Field(1000, ge=1)
    r0: int = Field(100, ge=2)
    target: float = Field(0.85, gt=0)
    seed: int = Field(ge=0)


class PmmhBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    MH: int = Field(ge=2)
    burn_in: int = Field(0, ge=0)
    warmup: int = Field(500, ge=0)
    initial_sd: float = Field(0.1, gt=0)
    target_accept: float = Field(0.234, gt=0, lt=1)
    seed: int = Field(ge=0)

    @model_validator(mode="after")
    def _check_burn_in(self) -> "PmmhBlock":
        if self.burn_in >= self.MH:
            raise ValueError(f"burn_in ({self.burn_in}) must be smaller than MH ({self.MH})")
        return self


class PriorBlock(BaseModel):
    """Named default prior, or an explicit one."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["simulation", "forecast", "custom"] = "simulation"
    mean: list[float] | None = None
    cov: list[list[float]] | None = None
    beta: dict[str, tuple[float, float]] = Field(default_factory=dict)

    def build(self, family: ModelFamily) -> Prior:
        if self.kind == "simulation":
            return simulation_prior(family)
        if self.kind == "forecast":
            if family is not ModelFamily.SV:
                raise ConfigError("The forecast prior is defined for the SV model only")
            return forecast_prior()
        if self.mean is None or self.cov is None:
            raise ConfigError("A custom prior needs mean and cov")
        prior = Prior(
            names=parameter_names(family),
            mean=tuple(self.mean),
            cov=tuple(tuple(row) for row in self.cov),
            beta=self.beta,
        )
        idx = prior.normal_index
        cov = np.asarray(prior.cov, dtype=float)[np.ix_(idx, idx)]
        if idx.size == 0:
            return prior
        if not np.allclose(cov, cov.T):
            raise ConfigError("Custom prior cov is not symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ConfigError("Custom prior cov is not positive definite") from None
        return prior


class ForecastBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    horizon: int = Field(ge=1)
    refresh_every: int = Field(50, ge=1)
    thin: int = Field(5, ge=1)
    n_points: int = Field(400, ge=10)


class ExperimentConfig(BaseModel):
    """A complete experiment description."""

    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    model: ModelBlock
    dgp: DgpBlock
    filters: list[FilterBlock] = Field(min_length=1)
    calibration: CalibrationBlock | None = None
    pmmh: PmmhBlock | None = None
    prior: PriorBlock = Field(default_factory=PriorBlock)
    forecast: ForecastBlock | None = None
    output_dir: str | None = None
    jobs: int | None = Field(None, ge=1)

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        family = self.model.family
        has_params = self.model.params is not None or self.model.preset is not None

        labels = [f.label for f in self.filters]
        if len(set(labels)) != len(labels):
            raise ValueError(f"Duplicate filters in config: {labels}")
        for f in self.filters:
            if f.kind is FilterKind.FAPF and family is not ModelFamily.LG:
                raise ValueError("FAPF is only available for the LG model")
            if isinstance(f.N, int):
                if f.N < 1:
                    raise ValueError(f"{f.label}: N must be >= 1")
                if f.L > f.N:
                    raise ValueError(f"{f.label}: L={f.L} exceeds N={f.N}")
            elif self.calibration is None:
                raise ValueError(f"{f.label}: N='calibrate' needs a calibration block")
            elif not has_params:
                raise ValueError(f"{f.label}: calibration needs model params or a preset")

        if self.dgp.source == "model" and not has_params:
            raise ValueError("Simulating from the model needs model params or a preset")
        if self.dgp.source == "csv" and not self.dgp.data_path:
            raise ValueError("dgp.source 'csv' needs dgp.data_path")
        if self.forecast is not None and self.forecast.horizon >= self.dgp.T and self.dgp.source != "csv":
            raise ValueError("forecast.horizon must be smaller than dgp.T")
        if self.prior.kind != "simulation":
            self.prior.build(family)
        return self

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with every block seed derived from one master seed."""
        update = {"dgp": self.dgp.model_copy(update={"seed": derive_seed(seed, 0)})}
        if self.calibration is not None:
            update["calibration"] = self.calibration.model_copy(
                update={"seed": derive_seed(seed, 1)}
            )
        if self.pmmh is not None:
            update["pmmh"] = self.pmmh.model_copy(update={"seed": derive_seed(seed, 2)})
        return self.model_copy(update=update)

    def seeds(self) -> dict[str, int]:
        out = {"dgp": self.dgp.seed}
        if self.calibration is not None:
            out["calibration"] = self.calibration.seed
        if self.pmmh is not None:
            out["pmmh"] = self.pmmh.seed
        return out

    def sha256(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode()).hexdigest()


def load_config(path: str | Path) -> ExperimentConfig:
    """
    Read and validate an experiment config.

    Raises:
        ConfigError: If the file does not exist.
        pydantic.ValidationError: If the content does not validate.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    return ExperimentConfig.model_validate_json(path.read_text())


# ============================================================================
# Experiment Steps
# ============================================================================


def load_data(config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray | None]:
    """Observations (and latent states when simulated) for an experiment."""
    dgp = config.dgp
    if dgp.source == "model":
        y, x = simulate(config.model.build(), dgp.T, dgp.seed)
        return y, x
    if dgp.source == "svij":
        out = simulate_svij(dgp.svij, dgp.T, dgp.seed, return_components=True)
        return out["y"], out["x"]
    if not Path(dgp.data_path).exists() and Path(dgp.data_path) == DEFAULT_OUTPUT:
        raise DataError(f"Returns file not found: {dgp.data_path} (run python -m src.generate_data)")
    series = load_returns(dgp.data_path).require_length(50)
    return series.returns, None


def calibrate_filters(
    config: ExperimentConfig, y: np.ndarray, jobs: int
) -> dict[str, dict]:
    """N_opt for every filter configured with N='calibrate' (all filters if none are)."""
    cal = config.calibration
    if cal is None:
        raise ConfigError("Config has no calibration block")
    model = config.model.build()
    if model is None:
        raise ConfigError("Calibration needs model params or a preset")

    only_pending = any(f.N == "calibrate" for f in config.filters)
    results = {}
    for i, block in enumerate(config.filters):
        if only_pending and block.N != "calibrate":
            continue
        print(f"  - {block.label}: {cal.r0} runs with N_s={cal.n_s}")
        logliks = calibration_logliks(
            block.kind,
            model,
            y,
            cal.n_s,
            cal.r0,
            derive_seed(cal.seed, i),
            block.options(),
            jobs,
        )
        variance = calibration_variance(logliks)
        n_opt = nopt_from_variance(cal.n_s, variance, cal.target)
        results[block.label] = {
            "kind": block.kind.value,
            "L": block.L,
            "n_opt": n_opt,
            "variance": variance,
            "n_s": cal.n_s,
            "r0": cal.r0,
            "excluded": int(np.sum(~np.isfinite(logliks))),
        }
        print(f"    ✓ var(loglik)={variance:.4f} -> N_opt={n_opt}")
    return results


def diagnostics_table(diagnostics: dict[str, Diagnostics]) -> pd.DataFrame:
    """One row per filter: N_opt, ALCT, acceptance rate, IF and posterior mean per parameter."""
    rows = []
    for label, diag in diagnostics.items():
        row = {
            "filter": label,
            "n_opt": diag.n_opt,
            "alct": diag.alct,
            "acceptance_rate": diag.acceptance_rate,
        }
        row.update({f"if_{name}": value for name, value in diag.inefficiency.items()})
        row.update({f"mean_{name}": value for name, value in diag.posterior_mean.items()})
        rows.append(row)
    return pd.DataFrame(rows)


def _particle_counts(
    config: ExperimentConfig, y: np.ndarray, jobs: int, writer: ArtifactWriter
) -> dict[str, int]:
    counts = {f.label: f.N for f in config.filters if isinstance(f.N, int)}
    if len(counts) < len(config.filters):
        calibration = calibrate_filters(config, y, jobs)
        writer.write_json("calibration.json", calibration)
        for label, entry in calibration.items():
            counts.setdefault(label, entry["n_opt"])
    return counts


def _run_chain(
    config: ExperimentConfig, block: FilterBlock, index: int, y: np.ndarray, N: int
) -> Chain:
    family = config.model.family
    prior = config.prior.build(family)
    pm = config.pmmh
    model = config.model.build()
    theta0 = theta_from_model(model) if model is not None else None
    sampler = AdaptiveRandomWalk(
        prior.dim, warmup=pm.warmup, initial_sd=pm.initial_sd, target=pm.target_accept
    )
    return run_pmmh(
        block.kind,
        family,
        prior,
        y,
        N,
        pm.MH,
        pm.burn_in,
        derive_seed(pm.seed, index),
        options=block.options(),
        theta0=theta0,
        sampler=sampler,
    )


def cmd_simulate(config: ExperimentConfig, writer: ArtifactWriter, jobs: int) -> None:
    print("\n[1/1] Simulating data...")
    y, x = load_data(config)
    writer.write_csv("data.csv", pd.DataFrame({"t": np.arange(1, y.size + 1), "y": y}))
    if x is not None:
        writer.write_csv("states.csv", pd.DataFrame({"t": np.arange(x.size), "x": x}))
    print(f"  ✓ {y.size} observations (source: {config.dgp.source})")


def cmd_calibrate(config: ExperimentConfig, writer: ArtifactWriter, jobs: int) -> None:
    print("\n[1/2] Loading data...")
    y, _ = load_data(config)
    print(f"  ✓ {y.size} observations")
    print("\n[2/2] Calibrating particle counts...")
    writer.write_json("calibration.json", calibrate_filters(config, y, jobs))


def cmd_pmmh(config: ExperimentConfig, writer: ArtifactWriter, jobs: int) -> None:
    if config.pmmh is None:
        raise ConfigError("Config has no pmmh block")

    print("\n[1/3] Loading data...")
    y, _ = load_data(config)
    print(f"  ✓ {y.size} observations")

    print("\n[2/3] Resolving particle counts...")
    counts = _particle_counts(config, y, jobs, writer)
    for label, n in counts.items():
        print(f"  ✓ {label}: N={n}")

    print(f"\n[3/3] Running PMMH ({config.pmmh.MH} iterations per filter)...")
    chains = Parallel(n_jobs=jobs)(
        delayed(_run_chain)(config, block, i, y, counts[block.label])
        for i, block in enumerate(config.filters)
    )

    diagnostics = {}
    for block, chain in zip(config.filters, chains):
        writer.write_csv(f"chain_{block.label}.csv", chain_frame(chain))
        diagnostics[block.label] = diagnose(chain, counts[block.label])
        print(
            f"  ✓ {block.label}: acceptance {chain.acceptance_rate:.3f}, "
            f"ALCT {diagnostics[block.label].alct * 1e3:.2f} ms"
        )

    writer.write_json("diagnostics.json", {k: d.to_dict() for k, d in diagnostics.items()})
    writer.write_csv("pmmh_table.csv", diagnostics_table(diagnostics))


def cmd_forecast(config: ExperimentConfig, writer: ArtifactWriter, jobs: int) -> None:
    fc, pm = config.forecast, config.pmmh
    if fc is None or pm is None:
        raise ConfigError("Forecasting needs both a forecast and a pmmh block")
    counts = {f.N for f in config.filters}
    if len(counts) != 1 or not isinstance(next(iter(counts)), int):
        raise ConfigError("Forecasting uses one fixed N for every filter")
    kinds = [f.kind for f in config.filters]
    if len(set(kinds)) != len(kinds):
        raise ConfigError("Forecasting compares distinct filter kinds")
    N = int(next(iter(counts)))

    print("\n[1/2] Loading data...")
    y, _ = load_data(config)
    if fc.horizon >= y.size - 1:
        raise ConfigError(f"horizon {fc.horizon} leaves no in-sample data ({y.size} observations)")
    print(f"  ✓ {y.size - fc.horizon} in-sample, {fc.horizon} forecast periods")

    print(f"\n[2/2] Rolling forecasts with {len(kinds)} filters (N={N})...")
    report = rolling_forecast(
        y,
        config.model.family,
        config.prior.build(config.model.family),
        kinds,
        N,
        pm.MH,
        fc.refresh_every,
        pm.seed,
        horizon=fc.horizon,
        burn_in=pm.burn_in,
        thin=fc.thin,
        options={f.kind.value: f.options() for f in config.filters},
        n_points=fc.n_points,
        jobs=jobs,
    )

    writer.write_json(
        "forecast_report.json", {"baseline": report.baseline, "filters": report.to_dict()}
    )
    scores = pd.DataFrame({"period": np.arange(1, fc.horizon + 1), "realized": report.realized})
    for name, values in report.scores.items():
        scores[name] = values
    writer.write_csv("forecast_scores.csv", scores)

    overlay = None
    for name, density in report.densities.items():
        writer.write_csv(
            f"density_{name}.csv", pd.DataFrame({"grid": density.grid, "density": density.density})
        )
        if overlay is None:
            overlay = pd.DataFrame({"grid": density.grid})
        overlay[name] = density.density
    if overlay is not None:
        writer.write_csv("density_overlay.csv", overlay)

    for name in report.scores:
        print(f"  ✓ {name}: ALS {report.als[name]:.4f}, ADLS {report.adls[name]:.4f}")


def cmd_report(config: ExperimentConfig, writer: ArtifactWriter, jobs: int) -> None:
    print("\n[1/1] Rebuilding tables from stored chains...")
    diagnostics = {}
    for block in config.filters:
        path = writer.out_dir / f"chain_{block.label}.csv"
        chain = read_chain_csv(path, block.kind.value)
        diagnostics[block.label] = diagnose(chain, chain.n_particles)
        print(f"  ✓ {block.label}: {len(chain)} draws")
    writer.write_json("diagnostics.json", {k: d.to_dict() for k, d in diagnostics.items()})
    writer.write_csv("pmmh_table.csv", diagnostics_table(diagnostics))


_COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "pmmh": cmd_pmmh,
    "forecast": cmd_forecast,
    "report": cmd_report,
}


def run_experiment(
    config: ExperimentConfig,
    command: str = "pmmh",
    out_dir: str | Path | None = None,
    jobs: int | None = None,
) -> int:
    """
    Run one subcommand and write its artifacts.

    Args:
        config: Validated experiment config.
        command: One of simulate, calibrate, pmmh, forecast, report.
        out_dir: Output directory (default: config.output_dir, then PMMHF_OUT).
        jobs: Worker count (default: config.jobs, then PMMHF_JOBS).

    Returns:
        Exit status: 0 on success, otherwise the error's exit code. Files of
        a failed run keep their ``.partial`` suffix.
    """
    if command not in _COMMANDS:
        print(f"error: ConfigError: unknown command {command!r}", file=sys.stderr)
        return ConfigError.exit_code

    out = Path(out_dir or config.output_dir or default_output_dir())
    jobs = jobs or config.jobs or default_jobs()
    writer = ArtifactWriter(out)

    print("=" * 60)
    print(f"{config.name}: {command} ({config.model.family.value.upper()})")
    print("=" * 60)

    try:
        _COMMANDS[command](config, writer, jobs)
        writer.write_json(
            "manifest.json",
            {
                "command": command,
                "config_sha256": config.sha256(),
                "seeds": config.seeds(),
                "artifacts": dict(sorted(writer.checksums.items())),
            },
        )
    except ValidationError as e:
        logger.error("Invalid parameters: %s", e)
        print(f"error: ValidationError: {e}", file=sys.stderr)
        return ConfigError.exit_code
    except PmmhFiltersError as e:
        logger.error("%s failed: %s", command, e)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code

    writer.commit()
    print(f"\n  ✓ Artifacts in {out.absolute()}")
    print("=" * 60)
    return 0


# ============================================================================
# CLI Entry Point
# ============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmmhfilters",
        description="Particle filters and PMMH experiments for state space models",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="Experiment config (JSON)")
        p.add_argument("--jobs", type=int, default=None, help="Parallel workers (default: PMMHF_JOBS)")
        p.add_argument("--seed", type=int, default=None, help="Master seed overriding config seeds")
        p.add_argument("--out", default=None, help="Output directory (default: PMMHF_OUT)")
    return parser


def main(argv: list[str] | None = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)

    try:
        config = load_config(args.config)
    except ValidationError as e:
        print(f"error: ValidationError: {e}", file=sys.stderr)
        return ConfigError.exit_code
    except PmmhFiltersError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code

    if args.seed is not None:
        config = config.with_seed(args.seed)
    return run_experiment(config, args.command, args.out, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
