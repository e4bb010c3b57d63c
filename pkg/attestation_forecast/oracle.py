"""
Oracle module - Monte Carlo acceptance suite on simulated panels.

Each experiment draws independent replications from (suite seed,
experiment id, replication index) substreams, runs the estimators on them
and compares summary metrics with fixed thresholds. Failures are recorded
in the report; nothing here raises on a failed threshold.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import stats

from attestation_forecast.errors import ForecastToolkitError
from attestation_forecast.evaluate import evaluate_forecasts
from attestation_forecast.forecast import forecast_panel, persistence_forecast
from attestation_forecast.granger import dh_test
from attestation_forecast.linmod import confidence_interval, fit_panel, select_lag
from attestation_forecast.models import (
    BiasConfig,
    ExperimentResult,
    ModelSpec,
    SimConfig,
    SuiteConfig,
    SuiteReport,
    TransformSpec,
)
from attestation_forecast.preprocess import split_train_holdout, transform_panel
from attestation_forecast.simulate import (
    arx_transformed_panel,
    make_generator,
    sim_config_with,
    simulate_arx_panel,
    simulate_panel,
)

logger = logging.getLogger(__name__)

# Experiment dimensions
PANEL_UNITS = 10
GRANGER_PERIODS = 202  # T_eff = 200 at K = 2
GRANGER_K = 2
LAG_PERIODS = 300
LAG_K_MAX = 10
LAG_GAMMA = [0.3, 0.1, 0.2]
LAG_BETA = [0.3, 0.2, 0.5]
COEF_PERIODS = 500
COEF_LAG = 7
FORECAST_DAYS = 217
FORECAST_HOLDOUT = 7
FORECAST_K_MAX = 10
BIAS_BETA = 0.1

# Panels matched to the real network: 10 hospitals, about 210 days
FORECAST_SIM = SimConfig(n_units=PANEL_UNITS, n_days=FORECAST_DAYS)

_STREAMS = {
    "size": 1,
    "power": 2,
    "lag_recovery": 3,
    "coefficient_recovery": 4,
    "forecast_vs_persistence": 5,
    "bias_sweep": 6,
}


def _replicate(
    fn: Callable[[int], Optional[dict]],
    replications: int,
    jobs: int,
) -> List[Optional[dict]]:
    """Run ``fn`` over replication indices, keeping index order."""
    def guarded(rep: int) -> Optional[dict]:
        try:
            return fn(rep)
        except ForecastToolkitError as exc:
            logger.warning(f"Replication {rep} failed: {exc}")
            return None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            return list(executor.map(guarded, range(replications)))
    return [guarded(rep) for rep in range(replications)]


def _granger_replication(seed: int, stream: int, beta: float, alpha: float):
    def run(rep: int) -> dict:
        rng = make_generator(seed, stream, rep)
        y, x = simulate_arx_panel(rng, PANEL_UNITS, GRANGER_PERIODS, gamma=[0.5], beta=[beta])
        result = dh_test(fit_panel(arx_transformed_panel(y, x), ModelSpec(K=GRANGER_K)), alpha=alpha)
        return {"reject": result.reject, "z": result.z_fixed_t}
    return run


def _substream_seed(*key: int) -> int:
    """Simulator seed derived from a (suite seed, experiment, ...) key."""
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def _completed(outcomes: List[Optional[dict]]) -> List[dict]:
    return [o for o in outcomes if o is not None]


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else float("nan")


def run_size(cfg: SuiteConfig) -> ExperimentResult:
    """Rejection rate and normality of Z-tilde under the null (beta = 0)."""
    outcomes = _replicate(
        _granger_replication(cfg.seed, _STREAMS["size"], 0.0, cfg.alpha),
        cfg.size_replications, cfg.jobs,
    )
    done = _completed(outcomes)
    rate = _mean([o["reject"] for o in done])
    if len(done) > 1:
        ks = stats.kstest([o["z"] for o in done], "norm")
        ks_statistic, ks_pvalue = float(ks.statistic), float(ks.pvalue)
    else:
        ks_statistic = ks_pvalue = float("nan")
    metrics = {
        "rejection_rate": rate,
        "ks_statistic": ks_statistic,
        "ks_pvalue": ks_pvalue,
        "failed_replications": float(len(outcomes) - len(done)),
    }
    return ExperimentResult(
        name="size",
        replications=cfg.size_replications,
        metrics=metrics,
        thresholds={"rejection_rate": "[0.03, 0.07]", "ks_pvalue": ">= 0.01"},
        passed=0.03 <= rate <= 0.07 and ks_pvalue >= 0.01,
    )


def run_power(cfg: SuiteConfig) -> ExperimentResult:
    """Rejection rate with beta = 0.5 at lag 1."""
    outcomes = _replicate(
        _granger_replication(cfg.seed, _STREAMS["power"], 0.5, cfg.alpha),
        cfg.power_replications, cfg.jobs,
    )
    done = _completed(outcomes)
    rate = _mean([o["reject"] for o in done])
    return ExperimentResult(
        name="power",
        replications=cfg.power_replications,
        metrics={"rejection_rate": rate, "failed_replications": float(len(outcomes) - len(done))},
        thresholds={"rejection_rate": ">= 0.90"},
        passed=rate >= 0.90,
    )


def run_lag_recovery(cfg: SuiteConfig) -> ExperimentResult:
    """Share of panels where BIC selects the true lag order 3."""
    def run(rep: int) -> dict:
        rng = make_generator(cfg.seed, _STREAMS["lag_recovery"], rep)
        y, x = simulate_arx_panel(rng, PANEL_UNITS, LAG_PERIODS, gamma=LAG_GAMMA, beta=LAG_BETA)
        k_opt, _ = select_lag(arx_transformed_panel(y, x), LAG_K_MAX)
        return {"k": k_opt}

    outcomes = _replicate(run, cfg.lag_replications, cfg.jobs)
    done = _completed(outcomes)
    chosen = np.array([o["k"] for o in done])
    hit_rate = _mean(chosen == len(LAG_BETA))
    return ExperimentResult(
        name="lag_recovery",
        replications=cfg.lag_replications,
        metrics={
            "recovery_rate": hit_rate,
            "mean_selected_k": _mean(chosen),
            "failed_replications": float(len(outcomes) - len(done)),
        },
        thresholds={"recovery_rate": ">= 0.80"},
        passed=hit_rate >= 0.80,
    )


def run_coefficient_recovery(cfg: SuiteConfig) -> ExperimentResult:
    """Single-unit beta at lag 7: distance to the truth in SEs and CI coverage."""
    beta_true = 0.5
    beta = [0.0] * (COEF_LAG - 1) + [beta_true]

    def run(rep: int) -> dict:
        rng = make_generator(cfg.seed, _STREAMS["coefficient_recovery"], rep)
        y, x = simulate_arx_panel(rng, 1, COEF_PERIODS, gamma=[0.5], beta=beta)
        fit = fit_panel(arx_transformed_panel(y, x), ModelSpec(K=COEF_LAG)).fits[0]
        index = fit.beta_index(COEF_LAG)
        se = float(np.sqrt(fit.cov[index][index]))
        lo, hi = confidence_interval(fit, index, 0.95)
        return {
            "within_3se": abs(fit.beta[COEF_LAG - 1] - beta_true) <= 3 * se,
            "covered": lo <= beta_true <= hi,
            "estimate": fit.beta[COEF_LAG - 1],
        }

    outcomes = _replicate(run, cfg.coefficient_replications, cfg.jobs)
    done = _completed(outcomes)
    within = _mean([o["within_3se"] for o in done])
    coverage = _mean([o["covered"] for o in done])
    return ExperimentResult(
        name="coefficient_recovery",
        replications=cfg.coefficient_replications,
        metrics={
            "within_3se_rate": within,
            "ci95_coverage": coverage,
            "mean_estimate": _mean([o["estimate"] for o in done]),
            "failed_replications": float(len(outcomes) - len(done)),
        },
        thresholds={"within_3se_rate": ">= 0.99", "ci95_coverage": "[0.92, 0.98]"},
        passed=within >= 0.99 and 0.92 <= coverage <= 0.98,
    )


def _forecast_scores(panel) -> Dict[str, float]:
    """
    Network WMAPE of the fitted model and of persistence on a 7-day holdout.

    Uses the pipeline defaults: smoothed indicator, unsmoothed census.
    """
    tpanel = transform_panel(panel, TransformSpec())
    train, holdout = split_train_holdout(tpanel, FORECAST_HOLDOUT)
    k_opt, _ = select_lag(train, FORECAST_K_MAX)
    panel_fit = fit_panel(train, ModelSpec(K=k_opt))
    model = evaluate_forecasts(forecast_panel(panel_fit, train, FORECAST_HOLDOUT), holdout)
    baseline = evaluate_forecasts(persistence_forecast(train, FORECAST_HOLDOUT), holdout)
    # an undefined WMAPE (zero actuals) counts as a loss
    return {
        "model": np.inf if model.network.wmape is None else model.network.wmape,
        "baseline": np.inf if baseline.network.wmape is None else baseline.network.wmape,
    }


def run_forecast_vs_persistence(cfg: SuiteConfig) -> ExperimentResult:
    """Pipeline network WMAPE against the persistence baseline."""
    def run(rep: int) -> dict:
        seed = _substream_seed(cfg.seed, _STREAMS["forecast_vs_persistence"], rep)
        panel, _ = simulate_panel(sim_config_with(FORECAST_SIM, seed=seed))
        return _forecast_scores(panel)

    outcomes = _replicate(run, cfg.forecast_replications, cfg.jobs)
    done = _completed(outcomes)
    model = np.array([o["model"] for o in done])
    baseline = np.array([o["baseline"] for o in done])
    beat_rate = _mean(model < baseline)
    median = float(np.median(model)) if model.size else float("nan")
    return ExperimentResult(
        name="forecast_vs_persistence",
        replications=cfg.forecast_replications,
        metrics={
            "beat_rate": beat_rate,
            "median_network_wmape": median,
            "median_persistence_wmape": float(np.median(baseline)) if baseline.size else float("nan"),
            "failed_replications": float(len(outcomes) - len(done)),
        },
        thresholds={"beat_rate": ">= 0.90", "median_network_wmape": "<= 0.10"},
        passed=beat_rate >= 0.90 and median <= 0.10,
    )


def run_bias_sweep(cfg: SuiteConfig) -> ExperimentResult:
    """Granger rejection rate as weekend dropout grows (reported only)."""
    metrics: Dict[str, float] = {}
    for d_index, dropout in enumerate(cfg.bias_dropouts):
        def run(rep: int, dropout=dropout, d_index=d_index) -> dict:
            sim = sim_config_with(
                FORECAST_SIM,
                seed=_substream_seed(cfg.seed, _STREAMS["bias_sweep"], d_index, rep),
                beta_true=BIAS_BETA,
                bias=BiasConfig(weekday_dropout=dropout),
            )
            panel, truth = simulate_panel(sim)
            tpanel = transform_panel(panel, TransformSpec())
            result = dh_test(fit_panel(tpanel, ModelSpec(K=truth.true_lag)), alpha=cfg.alpha)
            return {"reject": result.reject}

        done = _completed(_replicate(run, cfg.bias_replications, cfg.jobs))
        metrics[f"rejection_rate_dropout_{dropout:g}"] = _mean([o["reject"] for o in done])
    return ExperimentResult(name="bias_sweep", replications=cfg.bias_replications, metrics=metrics)


def run_oracle_suite(cfg: Optional[SuiteConfig] = None) -> SuiteReport:
    """
    Run every experiment with a positive replication count.

    Args:
        cfg: Suite settings (defaults to SuiteConfig())

    Returns:
        SuiteReport; experiments with zero replications are left out
    """
    cfg = cfg or SuiteConfig()
    plan = [
        (cfg.size_replications, run_size),
        (cfg.power_replications, run_power),
        (cfg.lag_replications, run_lag_recovery),
        (cfg.coefficient_replications, run_coefficient_recovery),
        (cfg.forecast_replications, run_forecast_vs_persistence),
        (cfg.bias_replications, run_bias_sweep),
    ]
    report = SuiteReport(seed=cfg.seed)
    for replications, experiment in plan:
        if replications == 0:
            continue
        result = experiment(cfg)
        status = {True: "PASS", False: "FAIL", None: "REPORT"}[result.passed]
        logger.info(f"{result.name}: {status} {result.metrics}")
        report.experiments.append(result)
    return report


def render_report(report: SuiteReport) -> str:
    """Plain-text suite summary."""
    lines = ["=" * 60, f"Oracle suite (seed={report.seed})", "=" * 60]
    for result in report.experiments:
        status = {True: "PASS", False: "FAIL", None: "REPORT"}[result.passed]
        lines.append(f"{result.name} [{status}] replications={result.replications}")
        for key, value in result.metrics.items():
            threshold = result.thresholds.get(key)
            suffix = f"   (required {threshold})" if threshold else ""
            lines.append(f"  {key:<28}{value:>10.4f}{suffix}")
    if not report.experiments:
        lines.append("No experiments run.")
    lines.append("=" * 60)
    return "\n".join(lines)
