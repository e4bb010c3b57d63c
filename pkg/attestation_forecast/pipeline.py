"""
Pipeline orchestrator - Coordinates all stages of the forecasting pipeline.

Chains the stages of a run and writes their artifacts:
Ingest -> Transform -> Lag selection -> Fit -> Granger test -> Forecast -> Evaluate
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import pandas as pd

from attestation_forecast.errors import ConfigError, MomentConditionError
from attestation_forecast.evaluate import compare_to_baseline, describe_panel, render_table
from attestation_forecast.forecast import (
    HOLD_LAST,
    doubling_report,
    forecast_panel,
    persistence_forecast,
    plot_data_frame,
    rolling_origin_forecast,
)
from attestation_forecast.granger import dh_test, dh_test_weekly
from attestation_forecast.ingest import (
    build_case_panel,
    build_panel,
    load_attestations,
    load_census,
    load_exogenous_paths,
    load_weekly_cases,
    load_zip_map,
    write_panel_csv,
)
from attestation_forecast.linmod import coefficient_table, fit_panel, select_lag
from attestation_forecast.models import (
    BaselineComparison,
    ExogenousPolicy,
    ForecastSet,
    Frequency,
    GrangerResult,
    LagScore,
    ModelSpec,
    PanelDataset,
    PanelFit,
    PipelineResult,
    RunConfig,
    SimConfig,
    SuiteConfig,
    TransformedPanel,
    TransformSpec,
    ZipMap,
)
from attestation_forecast.oracle import render_report, run_oracle_suite
from attestation_forecast.preprocess import split_train_holdout, transform_panel
from attestation_forecast.simulate import simulate_panel, write_simulated_inputs
from attestation_forecast.storage import ArtifactStore

logger = logging.getLogger(__name__)


@dataclass
class RunState:
    """Intermediate results shared between stages of one run."""
    panel: Optional[PanelDataset] = None
    zipmap: Optional[ZipMap] = None
    tpanel: Optional[TransformedPanel] = None
    train: Optional[TransformedPanel] = None
    holdout: Optional[PanelDataset] = None
    bic_curve: List[LagScore] = field(default_factory=list)
    panel_fit: Optional[PanelFit] = None
    granger: Optional[GrangerResult] = None
    forecast: Optional[ForecastSet] = None
    comparison: Optional[BaselineComparison] = None


def _banner(title: str) -> None:
    logger.info("=" * 60)
    logger.info(title)
    logger.info("=" * 60)


def feasible_k_max(n_periods: int, k_max: int, include_intercept: bool = True) -> int:
    """
    Largest lag order <= k_max that a series of ``n_periods`` can support.

    Requires T_eff > 1 + 2K for estimation and T_eff > 5 + 3K for the
    fixed-T Granger statistic, where T_eff = n_periods - K.
    """
    best = 0
    for K in range(1, k_max + 1):
        T_eff = n_periods - K
        if T_eff > 2 * K + int(include_intercept) and T_eff > 5 + 3 * K:
            best = K
    return best


class Pipeline:
    """Main pipeline orchestrator for census forecasting runs."""

    def __init__(self, config: RunConfig):
        """
        Initialize pipeline with configuration.

        Args:
            config: Run configuration
        """
        self.config = config
        self.store = ArtifactStore(config.output_dir, timestamps=config.timestamps)
        self.state = RunState()

    # ------------------------------------------------------------------
    # Stages
    # ------------------------------------------------------------------

    def _inputs(self) -> dict:
        return {
            "attestations": self.config.attestations_path,
            "census": self.config.census_path,
            "cases": self.config.cases_path,
            "zipmap": self.config.zipmap_path,
            "exogenous": self.config.exogenous_path,
        }

    def stage_ingest(self) -> PanelDataset:
        """Load and align the input CSVs."""
        _banner("STAGE 1: INGEST")
        cfg = self.config
        target = "cases" if cfg.cases_path else "census"
        missing = [name for name in ("attestations", target, "zipmap") if not self._inputs()[name]]
        if missing:
            raise ConfigError(f"Missing input path(s): {', '.join(f'{m}_path' for m in missing)}")

        attestations = load_attestations(cfg.attestations_path)
        zipmap = load_zip_map(cfg.zipmap_path)
        if cfg.cases_path:
            panel = build_case_panel(
                attestations, load_weekly_cases(cfg.cases_path), zipmap,
                allow_unmapped=cfg.allow_unmapped,
            )
        else:
            panel = build_panel(
                attestations, load_census(cfg.census_path), zipmap,
                frequency=cfg.frequency,
                allow_unmapped=cfg.allow_unmapped,
            )
        write_panel_csv(panel, self.store.path("panel.csv"))
        self.store.adopt("panel.csv", "panel")
        logger.info(f"Panel: {panel.n_units} units x {panel.n_periods} {cfg.frequency.value} periods")
        self.state.panel = panel
        self.state.zipmap = zipmap
        return panel

    def _transform_spec(self) -> TransformSpec:
        spec = self.config.transform_spec()
        if self.config.frequency is Frequency.WEEKLY and spec.ma_window != 1:
            # weekly sums already smooth the daily counts
            logger.info(f"Weekly panel: ma_window {spec.ma_window} replaced by 1")
            spec = spec.model_copy(update={"ma_window": 1})
        return spec

    def stage_transform(self) -> Tuple[TransformedPanel, PanelDataset]:
        """Smooth, log-transform and split off the holdout."""
        _banner("STAGE 2: TRANSFORM")
        tpanel = transform_panel(self.state.panel, self._transform_spec())
        train, holdout = split_train_holdout(tpanel, self.config.holdout_len)
        self.state.tpanel, self.state.train, self.state.holdout = tpanel, train, holdout
        return train, holdout

    def _model_spec(self, K: int) -> ModelSpec:
        return ModelSpec(K=K, ci_level=self.config.ci_level)

    def stage_select(self, panel: TransformedPanel) -> int:
        """
        Choose K by pooled BIC on the training window unless ``fixed_k`` is set.

        k_max is capped at the largest order the window supports for both
        estimation and the fixed-T Granger statistic.
        """
        _banner("STAGE 3: LAG SELECTION")
        cfg = self.config
        if cfg.fixed_k is not None:
            logger.info(f"Using fixed K={cfg.fixed_k}")
            self.state.bic_curve = []
            return cfg.fixed_k
        k_cap = feasible_k_max(panel.n_periods, cfg.k_max)
        if k_cap < 1:
            raise MomentConditionError(
                f"{panel.n_periods} training periods cannot support any lag order; "
                f"use a longer panel or a shorter holdout"
            )
        if k_cap < cfg.k_max:
            logger.warning(f"k_max={cfg.k_max} capped at {k_cap} for {panel.n_periods} training periods")
        k_opt, curve = select_lag(panel, k_cap, self._model_spec(1), jobs=cfg.jobs)
        self.state.bic_curve = curve
        self.store.save_csv(
            "lag_curve.csv",
            pd.DataFrame([s.model_dump() for s in curve], columns=["K", "bic"]),
            kind="lag_curve",
        )
        return k_opt

    def stage_fit(self, panel: TransformedPanel, K: int) -> PanelFit:
        """Fit every unit at lag order K and write coefficient artifacts."""
        _banner("STAGE 4: FIT")
        panel_fit = fit_panel(panel, self._model_spec(K), jobs=self.config.jobs)
        panel_fit.bic_curve = list(self.state.bic_curve)
        self.store.save_json("fit.json", "panel_fit", panel_fit)
        self.store.save_csv(
            "coefficients.csv",
            pd.DataFrame([row.model_dump() for row in coefficient_table(panel_fit)]),
            kind="coefficients",
        )
        self.store.save_csv(
            "doubling_effects.csv",
            pd.DataFrame([row.model_dump() for row in doubling_report(panel_fit)]),
            kind="doubling_effects",
        )
        self.state.panel_fit = panel_fit
        return panel_fit

    def stage_test(self) -> GrangerResult:
        """
        Granger non-causality test on the full sample.

        K is the one chosen on the training window, so ``test`` and
        ``run-all`` report the same K on the same data.
        """
        if self.state.panel_fit is not None:
            K = self.state.panel_fit.spec.K
        else:
            train, _ = self.stage_transform()
            K = self.stage_select(train)
        _banner("STAGE 5: GRANGER TEST")
        cfg = self.config
        spec = self._model_spec(K)
        if cfg.frequency is Frequency.WEEKLY:
            result = dh_test_weekly(
                self.state.panel, spec, transform=self.state.tpanel.spec, alpha=cfg.alpha, jobs=cfg.jobs,
            )
        else:
            result = dh_test(fit_panel(self.state.tpanel, spec, jobs=cfg.jobs), alpha=cfg.alpha)
        self.store.save_json("granger.json", "granger", result)
        self.store.save_text("granger.txt", result.summary(), kind="granger_report")
        self.state.granger = result
        return result

    def _policy(self, train: TransformedPanel) -> ExogenousPolicy:
        if self.config.exogenous_policy == "provided":
            paths = load_exogenous_paths(self.config.exogenous_path, train.units, self.config.horizon)
            return ExogenousPolicy(kind="provided", provided_paths=paths)
        return HOLD_LAST

    def stage_forecast(self) -> ForecastSet:
        """Recursive forecast from the end of the training window."""
        _banner("STAGE 6: FORECAST")
        cfg = self.config
        train, holdout = self.state.train, self.state.holdout
        forecast = forecast_panel(self.state.panel_fit, train, cfg.horizon, self._policy(train))
        self.store.save_json("forecast.json", "forecast", forecast)
        self.store.save_csv("forecast.csv", forecast_frame(forecast), kind="forecast")
        self.store.save_csv("forecast_network.csv", network_forecast_frame(forecast), kind="forecast_network")

        if cfg.rolling_origin:
            rolling = rolling_origin_forecast(
                self.state.tpanel, self.state.panel_fit.spec,
                train.n_periods, cfg.holdout_len, jobs=cfg.jobs,
            )
            self.store.save_csv("forecast_rolling.csv", forecast_frame(rolling), kind="forecast")
            self.store.save_csv(
                "forecast_rolling_network.csv", network_forecast_frame(rolling), kind="forecast_network",
            )
        if cfg.plot_data:
            self.store.save_csv(
                "plot_data.csv",
                plot_data_frame(self.state.panel_fit, train, holdout, forecast),
                kind="plot_data",
            )
        self.state.forecast = forecast
        return forecast

    def stage_evaluate(self) -> Optional[BaselineComparison]:
        """Score the forecast and the persistence baseline on the holdout."""
        _banner("STAGE 7: EVALUATE")
        cfg = self.config
        description = describe_panel(self.state.panel, self.state.zipmap)
        self.store.save_json("description.json", "panel_description", description)
        if cfg.horizon != cfg.holdout_len:
            logger.warning(
                f"horizon ({cfg.horizon}) differs from holdout_len ({cfg.holdout_len}); skipping accuracy scores"
            )
            self.store.save_text("table.txt", render_table(description), kind="table")
            return None

        baseline = persistence_forecast(self.state.train, cfg.horizon)
        comparison = compare_to_baseline(self.state.forecast, baseline, self.state.holdout)
        self.store.save_json("evaluation.json", "evaluation", comparison)
        self.store.save_text("table.txt", render_table(description, comparison.model), kind="table")
        self.state.comparison = comparison
        return comparison

    # ------------------------------------------------------------------
    # Commands
    # ------------------------------------------------------------------

    def _finish(self, result: PipelineResult, config=None) -> PipelineResult:
        self.store.write_manifest(config or self.config, self._inputs())
        result.artifacts = self.store.artifacts
        _banner("PIPELINE COMPLETE")
        logger.info(f"Artifacts written: {len(result.artifacts)} to {self.store.output_dir}")
        return result

    def _result(self) -> PipelineResult:
        s = self.state
        result = PipelineResult()
        if s.panel is not None:
            result.n_units, result.n_periods = s.panel.n_units, s.panel.n_periods
        if s.panel_fit is not None:
            result.k_opt = s.panel_fit.spec.K
        if s.granger is not None:
            result.granger_reject, result.p_fixed_t = s.granger.reject, s.granger.p_fixed_t
        if s.comparison is not None:
            result.network_mae = s.comparison.model.network.mae
            result.network_wmape = s.comparison.model.network.wmape
        return result

    def _fit_chain(self) -> PanelFit:
        self.stage_ingest()
        train, _ = self.stage_transform()
        return self.stage_fit(train, self.stage_select(train))

    def ingest(self) -> PipelineResult:
        self.stage_ingest()
        return self._finish(self._result())

    def fit(self) -> PipelineResult:
        self._fit_chain()
        return self._finish(self._result())

    def test(self) -> PipelineResult:
        self.stage_ingest()
        self.stage_test()
        return self._finish(self._result())

    def forecast(self) -> PipelineResult:
        self._fit_chain()
        self.stage_forecast()
        return self._finish(self._result())

    def evaluate(self) -> PipelineResult:
        self._fit_chain()
        self.stage_forecast()
        self.stage_evaluate()
        return self._finish(self._result())

    def run_all(self) -> PipelineResult:
        """
        Run the complete pipeline.

        Returns:
            PipelineResult with execution summary
        """
        self._fit_chain()
        self.stage_test()
        self.stage_forecast()
        self.stage_evaluate()
        result = self._result()
        logger.info(f"Units: {result.n_units}")
        logger.info(f"Periods: {result.n_periods}")
        logger.info(f"Selected K: {result.k_opt}")
        logger.info(f"Granger reject: {result.granger_reject} (p={result.p_fixed_t})")
        logger.info(f"Network MAE: {result.network_mae}")
        return self._finish(result)


FORECAST_COLUMNS = ["unit_id", "date", "predicted_census"]
NETWORK_FORECAST_COLUMNS = ["date", "predicted_census"]


def forecast_frame(forecast: ForecastSet) -> pd.DataFrame:
    """Long-format per-unit forecasts: unit_id, date, predicted_census."""
    rows = [
        (unit, day.isoformat(), value)
        for unit, values in zip(forecast.units, forecast.per_unit)
        for day, value in zip(forecast.dates, values)
    ]
    return pd.DataFrame(rows, columns=FORECAST_COLUMNS)


def network_forecast_frame(forecast: ForecastSet) -> pd.DataFrame:
    """Network totals: date, predicted_census."""
    rows = [(day.isoformat(), value) for day, value in zip(forecast.dates, forecast.network)]
    return pd.DataFrame(rows, columns=NETWORK_FORECAST_COLUMNS)


def run_simulation(sim: SimConfig, output_dir: str, timestamps: bool = False) -> PipelineResult:
    """Simulate a panel and write the CSV input triple plus truth.json."""
    _banner("SIMULATE")
    store = ArtifactStore(output_dir, timestamps=timestamps)
    panel, truth = simulate_panel(sim)
    paths = write_simulated_inputs(panel, truth, sim, store.output_dir)
    for name, path in paths.items():
        store.adopt(path.name, "sim_truth" if name == "truth" else f"input_{name}")
    store.write_manifest(sim)
    return PipelineResult(n_units=panel.n_units, n_periods=panel.n_periods, artifacts=store.artifacts)


def run_oracle(suite: SuiteConfig, output_dir: str, timestamps: bool = False):
    """Run the Monte Carlo suite and write its report."""
    _banner("ORACLE SUITE")
    store = ArtifactStore(output_dir, timestamps=timestamps)
    report = run_oracle_suite(suite)
    store.save_json("oracle_report.json", "oracle_report", report)
    store.save_text("oracle_report.txt", render_report(report), kind="oracle_report")
    store.write_manifest(suite)
    return report


def configure_logging(level: str = "INFO") -> None:
    """
    Configure logging for the pipeline.

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR)
    """
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
