"""
CLI interface for the attestation forecasting toolkit.

Provides one subcommand per pipeline stage plus simulation and the oracle
suite. Settings come from built-in defaults, then an optional flat
``key = value`` config file, then command-line flags.
"""
import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from pydantic import ValidationError

from attestation_forecast.errors import ConfigError, ForecastToolkitError
from attestation_forecast.models import BiasConfig, PipelineResult, RunConfig, SimConfig, SuiteConfig
from attestation_forecast.pipeline import Pipeline, configure_logging, run_oracle, run_simulation

# CLI flag -> RunConfig field, for options shared by the analysis commands
RUN_FLAGS = {
    "attestations": "attestations_path",
    "census": "census_path",
    "cases": "cases_path",
    "zipmap": "zipmap_path",
    "output_dir": "output_dir",
    "frequency": "frequency",
    "ma_window": "ma_window",
    "log_offset": "log_offset",
    "smooth_target": "smooth_target",
    "k_max": "k_max",
    "fixed_k": "fixed_k",
    "holdout_len": "holdout_len",
    "horizon": "horizon",
    "exogenous_policy": "exogenous_policy",
    "exogenous_path": "exogenous_path",
    "ci_level": "ci_level",
    "alpha": "alpha",
    "allow_unmapped": "allow_unmapped",
    "rolling_origin": "rolling_origin",
    "plot_data": "plot_data",
    "timestamps": "timestamps",
    "jobs": "jobs",
}


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Optional[str]]:
    """
    Parse flat ``key = value`` lines.

    Blank lines and lines starting with ``#`` are ignored; an empty value
    means "unset". Values stay strings and are coerced by RunConfig.

    Raises:
        ConfigError: On a malformed line, unknown key or repeated key
    """
    values: Dict[str, Optional[str]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in RunConfig.model_fields:
            raise ConfigError(f"{source}:{number}: unknown setting {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{number}: {key!r} set twice")
        values[key] = value or None
    return values


def load_config_file(config_path: str) -> Dict[str, Optional[str]]:
    """
    Load settings from a config file.

    Args:
        config_path: Path to config file

    Returns:
        Mapping of RunConfig field -> raw value
    """
    path = Path(config_path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def render_default_config() -> str:
    """Documented config file holding every RunConfig default."""
    lines = [
        "# attestation-forecast run configuration",
        "# Precedence: built-in defaults < this file < command-line flags.",
        "# Leave a value empty to unset an optional setting.",
        "",
    ]
    defaults = RunConfig()
    for name, info in RunConfig.model_fields.items():
        if info.description:
            lines.append(f"# {info.description}")
        value = getattr(defaults, name)
        if value is None:
            text = ""
        elif isinstance(value, bool):
            text = str(value).lower()
        elif hasattr(value, "value"):
            text = value.value
        else:
            text = str(value)
        lines.append(f"{name} = {text}".rstrip())
    return "\n".join(lines) + "\n"


def save_config_file(config_path: str) -> None:
    """
    Write the default configuration file.

    Args:
        config_path: Path to save config
    """
    path = Path(config_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_default_config(), encoding="utf-8")
    print(f"Configuration saved to {config_path}")


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """
    Merge defaults, config file and flags into a RunConfig.

    Raises:
        ConfigError: If the merged settings are invalid
    """
    settings: Dict[str, Optional[str]] = {}
    if getattr(args, "config", None):
        settings.update(load_config_file(args.config))
    for flag, field_name in RUN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            settings[field_name] = value
    settings = {key: value for key, value in settings.items() if value is not None}
    try:
        return RunConfig(**settings)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def _print_results(result: PipelineResult) -> None:
    print("\n" + "=" * 60)
    print("RESULTS")
    print("=" * 60)
    print(f"Units: {result.n_units}")
    print(f"Periods: {result.n_periods}")
    if result.k_opt is not None:
        print(f"Lag order K: {result.k_opt}")
    if result.granger_reject is not None:
        verdict = "reject" if result.granger_reject else "cannot reject"
        print(f"Granger non-causality: {verdict} H0 (fixed-T p = {result.p_fixed_t:.4g})")
    if result.network_mae is not None:
        wmape = "n/a" if result.network_wmape is None else f"{result.network_wmape:.2%}"
        print(f"Network MAE: {result.network_mae:.3f}  WMAPE: {wmape}")
    print(f"Artifacts: {', '.join(result.artifacts)}")


def _run_stage(method: str) -> Callable[[argparse.Namespace], int]:
    def command(args: argparse.Namespace) -> int:
        pipeline = Pipeline(build_run_config(args))
        _print_results(getattr(pipeline, method)())
        return 0
    command.__name__ = f"cmd_{method}"
    return command


cmd_ingest = _run_stage("ingest")
cmd_fit = _run_stage("fit")
cmd_test = _run_stage("test")
cmd_forecast = _run_stage("forecast")
cmd_evaluate = _run_stage("evaluate")
cmd_run_all = _run_stage("run_all")


def cmd_simulate(args: argparse.Namespace) -> int:
    """Write a simulated attestations/census/zipmap triple."""
    bias = None
    if args.weekday_dropout or args.underreport:
        bias = BiasConfig(weekday_dropout=args.weekday_dropout, underreport=args.underreport)
    try:
        sim = SimConfig(
            n_units=args.n_units,
            n_days=args.n_days,
            seed=args.seed,
            infection_process=args.infection_process,
            true_lag=args.true_lag,
            beta_true=args.beta_true,
            gamma_true=args.gamma_true,
            alpha_true=args.alpha_true,
            noise_sd=args.noise_sd,
            employees_per_unit=args.employees_per_unit,
            symptom_report_prob=args.symptom_report_prob,
            zips_per_unit=args.zips_per_unit,
            bias=bias,
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid simulation settings: {e}") from e
    result = run_simulation(sim, args.output_dir, timestamps=args.timestamps)
    print(f"Simulated {result.n_units} units x {result.n_periods} days (seed={sim.seed})")
    print(f"Artifacts: {', '.join(result.artifacts)}")
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    """Run the Monte Carlo suite; exit 1 if any thresholded experiment fails."""
    try:
        suite = SuiteConfig(
            seed=args.seed,
            jobs=args.jobs,
            size_replications=args.size_reps,
            power_replications=args.power_reps,
            lag_replications=args.lag_reps,
            coefficient_replications=args.coefficient_reps,
            forecast_replications=args.forecast_reps,
            bias_replications=args.bias_reps,
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid suite settings: {e}") from e
    report = run_oracle(suite, args.output_dir, timestamps=args.timestamps)
    for experiment in report.experiments:
        status = {True: "PASS", False: "FAIL", None: "REPORT"}[experiment.passed]
        print(f"{experiment.name}: {status}")
    if not report.experiments:
        print("No experiments run.")
    return 0 if report.passed else 1


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    """Options shared by the analysis commands; all default to None so the config file can fill them."""
    parser.add_argument("--config", type=str, help="Path to key = value configuration file")
    parser.add_argument("--attestations", type=str, help="attestations.csv (date,zip,n_onsite,n_symptomatic)")
    parser.add_argument("--census", type=str, help="census.csv (date,unit_id,census)")
    parser.add_argument("--cases", type=str,
                        help="Weekly positive cases (date,zip,cases or date,unit_id,cases) used as the target "
                             "instead of census; requires --frequency weekly")
    parser.add_argument("--zipmap", type=str, help="zipmap.csv (zip,unit_id,population,market_share_weight)")
    parser.add_argument("--output-dir", type=str, help="Directory for artifacts (default: output)")
    parser.add_argument("--frequency", choices=["daily", "weekly"], help="Panel frequency (default: daily)")
    parser.add_argument("--ma-window", type=int, help="Trailing moving-average window (default: 7)")
    parser.add_argument("--log-offset", type=float, help="Offset added before the log (default: 1.0)")
    parser.add_argument("--smooth-target", dest="smooth_target", action="store_const", const=True,
                        help="Also apply the moving average to the target series (default: off)")
    parser.add_argument("--no-smooth-target", dest="smooth_target", action="store_const", const=False,
                        help="Model the unsmoothed target series (default)")
    parser.add_argument("--k-max", type=int, help="Largest lag order scored by BIC (default: 14)")
    parser.add_argument("--fixed-k", type=int, help="Use this lag order instead of BIC selection")
    parser.add_argument("--holdout-len", type=int, help="Periods held out for evaluation (default: 7)")
    parser.add_argument("--horizon", type=int, help="Forecast horizon (default: 7)")
    parser.add_argument("--exogenous-policy", choices=["hold_last", "provided"],
                        help="How indicator values after the origin are filled (default: hold_last)")
    parser.add_argument("--exogenous-path", type=str, help="CSV unit_id,step,value for the provided policy")
    parser.add_argument("--ci-level", type=float, help="Confidence level (default: 0.95)")
    parser.add_argument("--alpha", type=float, help="Granger test significance level (default: 0.05)")
    parser.add_argument("--allow-unmapped", action="store_const", const=True,
                        help="Exclude attestation zips missing from the zip map instead of failing")
    parser.add_argument("--rolling-origin", action="store_const", const=True,
                        help="Also write daily-refit one-step-ahead forecasts over the holdout")
    parser.add_argument("--plot-data", action="store_const", const=True,
                        help="Write observed/fitted/forecast series for plotting")
    parser.add_argument("--timestamps", action="store_const", const=True,
                        help="Record generation time in the manifest")
    parser.add_argument("--jobs", type=int, help="Worker threads for per-unit fits (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attestation-forecast",
        description="Attestation Forecast - Panel Granger tests and census forecasts from employee symptom attestations",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Simulate an input triple
  attestation-forecast simulate --seed 7 --output-dir data

  # Full analysis: lag selection, fit, Granger test, forecast, evaluation
  attestation-forecast run-all --attestations data/attestations.csv \\
      --census data/census.csv --zipmap data/zipmap.csv --output-dir output

  # Weekly Granger test with settings from a config file
  attestation-forecast test --config run.cfg --frequency weekly

  # Generate a documented configuration file
  attestation-forecast --generate-config run.cfg

Exit codes: 0 success, 1 oracle failure, 2 configuration error,
3 data error, 4 numerical error.
        """
    )
    parser.add_argument(
        "--generate-config",
        type=str,
        metavar="PATH",
        help="Generate default configuration file and exit"
    )
    parser.add_argument(
        "--log-level",
        type=str,
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: INFO)"
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")

    stages = [
        ("ingest", cmd_ingest, "Build and write the aligned panel"),
        ("fit", cmd_fit, "Select K by BIC and fit every unit"),
        ("test", cmd_test, "Panel Granger non-causality test"),
        ("forecast", cmd_forecast, "Fit and forecast the holdout window"),
        ("evaluate", cmd_evaluate, "Fit, forecast and score against the holdout"),
        ("run-all", cmd_run_all, "Run every stage end to end"),
    ]
    for name, handler, help_text in stages:
        sub = subparsers.add_parser(name, help=help_text)
        _add_run_options(sub)
        sub.set_defaults(handler=handler)

    sim = subparsers.add_parser("simulate", help="Write a simulated input triple")
    sim.add_argument("--output-dir", type=str, default="data", help="Directory for the CSV triple (default: data)")
    sim.add_argument("--seed", type=int, default=0, help="Random seed (default: 0)")
    sim.add_argument("--n-units", type=int, default=10, help="Hospitals (default: 10)")
    sim.add_argument("--n-days", type=int, default=217, help="Days (default: 217)")
    sim.add_argument("--infection-process", choices=["log_random_walk", "seir_like"], default="log_random_walk",
                     help="Latent prevalence process (default: log_random_walk)")
    sim.add_argument("--true-lag", type=int, default=7, help="Symptom-to-census lag in days (default: 7)")
    sim.add_argument("--beta-true", type=float, default=0.5, help="Symptom coefficient (default: 0.5)")
    sim.add_argument("--gamma-true", type=float, default=0.5, help="Census persistence (default: 0.5)")
    sim.add_argument("--alpha-true", type=float, default=1.5, help="Intercept (default: 1.5)")
    sim.add_argument("--noise-sd", type=float, default=0.05, help="Log-census noise SD (default: 0.05)")
    sim.add_argument("--employees-per-unit", type=int, default=1000, help="Employees per hospital (default: 1000)")
    sim.add_argument("--symptom-report-prob", type=float, default=0.5, help="Report probability (default: 0.5)")
    sim.add_argument("--zips-per-unit", type=int, default=3, help="Zip codes per service area (default: 3)")
    sim.add_argument("--weekday-dropout", type=float, default=0.0, help="Weekend attester loss (default: 0)")
    sim.add_argument("--underreport", type=float, default=0.0, help="Symptom under-reporting (default: 0)")
    sim.add_argument("--timestamps", action="store_true", help="Record generation time in the manifest")
    sim.set_defaults(handler=cmd_simulate)

    oracle = subparsers.add_parser("oracle", help="Run the Monte Carlo acceptance suite")
    defaults = SuiteConfig()
    oracle.add_argument("--output-dir", type=str, default="oracle", help="Report directory (default: oracle)")
    oracle.add_argument("--seed", type=int, default=defaults.seed, help=f"Suite seed (default: {defaults.seed})")
    oracle.add_argument("--jobs", type=int, default=1, help="Worker threads (default: 1)")
    oracle.add_argument("--size-reps", type=int, default=defaults.size_replications,
                        help=f"Null replications for test size (default: {defaults.size_replications})")
    oracle.add_argument("--power-reps", type=int, default=defaults.power_replications,
                        help=f"Replications for test power (default: {defaults.power_replications})")
    oracle.add_argument("--lag-reps", type=int, default=defaults.lag_replications,
                        help=f"Replications for lag-order recovery (default: {defaults.lag_replications})")
    oracle.add_argument("--coefficient-reps", type=int, default=defaults.coefficient_replications,
                        help=f"Replications for coefficient recovery (default: {defaults.coefficient_replications})")
    oracle.add_argument("--forecast-reps", type=int, default=defaults.forecast_replications,
                        help=f"Panels for forecast vs persistence (default: {defaults.forecast_replications})")
    oracle.add_argument("--bias-reps", type=int, default=defaults.bias_replications,
                        help="Replications per weekend-dropout level (default: 0, skipped)")
    oracle.add_argument("--timestamps", action="store_true", help="Record generation time in the manifest")
    oracle.set_defaults(handler=cmd_oracle)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    # Configure logging
    configure_logging(args.log_level)

    try:
        # Handle config generation
        if args.generate_config:
            save_config_file(args.generate_config)
            return 0
        if not args.command:
            parser.print_help()
            raise ConfigError("a command is required")
        return args.handler(args)

    except ForecastToolkitError as e:
        print(f"error: code={e.code} exit={e.exit_code} message={e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
