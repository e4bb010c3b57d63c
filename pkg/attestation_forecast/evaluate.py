"""
Evaluate module - Forecast accuracy and descriptive statistics.

WMAPE is the census-weighted ratio form sum|error| / sum(actual), which stays
finite when individual days have zero census. Descriptive standard
deviations use the population (n) denominator.
"""
import logging
from typing import Optional, Sequence

import numpy as np

from attestation_forecast.errors import AlignmentError, LengthMismatchError, ZeroDenominatorError
from attestation_forecast.models import (
    BaselineComparison,
    EvalReport,
    ForecastSet,
    PanelDataset,
    PanelDescription,
    UnitDescription,
    UnitScore,
    NETWORK_ID,
    ZipMap,
    natural_key,
)

logger = logging.getLogger(__name__)


def _pair(actual: Sequence[float], predicted: Sequence[float]):
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape or a.ndim != 1 or a.size < 1:
        raise LengthMismatchError(f"actual ({a.size}) and predicted ({p.size}) must be equal-length, non-empty")
    return a, p


def mae(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """Mean absolute error."""
    a, p = _pair(actual, predicted)
    return float(np.mean(np.abs(a - p)))


def wmape(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """
    Weighted mean absolute percentage error: sum|a - p| / sum(a).

    Raises:
        ZeroDenominatorError: If the actuals sum to zero
    """
    a, p = _pair(actual, predicted)
    total = float(np.sum(a))
    if total <= 0:
        raise ZeroDenominatorError("WMAPE is undefined when actual values sum to zero")
    return float(np.sum(np.abs(a - p)) / total)


def _score(unit_id: str, actual: np.ndarray, predicted: np.ndarray) -> UnitScore:
    try:
        weighted = wmape(actual, predicted)
    except ZeroDenominatorError:
        logger.warning(f"WMAPE undefined for {unit_id}: actual census is zero over the horizon")
        weighted = None
    return UnitScore(unit_id=unit_id, mae=mae(actual, predicted), wmape=weighted)


def evaluate_forecasts(fs: ForecastSet, holdout: PanelDataset) -> EvalReport:
    """
    Score a forecast set against raw-scale holdout census.

    The network row scores the daily sum of unit forecasts against the daily
    sum of unit actuals. Units are processed in natural id order so the
    report does not depend on input unit order.

    Raises:
        AlignmentError: If units, horizon or dates do not match
    """
    if set(fs.units) != set(holdout.units) or len(fs.units) != len(holdout.units):
        raise AlignmentError("forecast and holdout cover different units")
    if holdout.n_periods != fs.horizon:
        raise AlignmentError(f"holdout has {holdout.n_periods} periods, forecast horizon is {fs.horizon}")
    if list(holdout.calendar) != list(fs.dates):
        raise AlignmentError("forecast dates do not match holdout calendar")

    units = sorted(fs.units, key=natural_key)
    predicted = fs.per_unit_array()[[fs.units.index(u) for u in units]]
    actual = holdout.y_array()[[holdout.units.index(u) for u in units]]

    per_unit = [_score(unit, actual[i], predicted[i]) for i, unit in enumerate(units)]
    network = _score(NETWORK_ID, actual.sum(axis=0), predicted.sum(axis=0))
    weighted = "n/a" if network.wmape is None else f"{network.wmape:.2%}"
    logger.info(f"Network MAE={network.mae:.3f} WMAPE={weighted} over {fs.horizon} periods")
    return EvalReport(per_unit=per_unit, network=network, horizon=fs.horizon, origin=fs.origin)


def compare_to_baseline(fs: ForecastSet, baseline: ForecastSet, holdout: PanelDataset) -> BaselineComparison:
    """Score model and baseline on the same holdout."""
    model_report = evaluate_forecasts(fs, holdout)
    baseline_report = evaluate_forecasts(baseline, holdout)
    if model_report.network.wmape is not None and baseline_report.network.wmape is not None:
        beats = model_report.network.wmape < baseline_report.network.wmape
    else:
        beats = model_report.network.mae < baseline_report.network.mae
    return BaselineComparison(model=model_report, baseline=baseline_report, model_beats_baseline=beats)


def _describe(unit_id: str, y: np.ndarray, x: np.ndarray, share: Optional[float]) -> UnitDescription:
    return UnitDescription(
        unit_id=unit_id,
        census_mean=float(np.mean(y)),
        census_sd=float(np.std(y)),
        symptoms_mean=float(np.mean(x)),
        symptoms_sd=float(np.std(x)),
        employee_share_of_population=share,
    )


def _share(unit_id: str, employees: float, population: float) -> Optional[float]:
    if population <= 0:
        return None
    share = employees / population
    if share > 1.0:
        logger.warning(f"Employee share for {unit_id} exceeds 1 ({share:.3f}); clipped")
        share = 1.0
    return share


def describe_panel(panel: PanelDataset, zipmap: Optional[ZipMap] = None) -> PanelDescription:
    """
    Per-unit and network means and SDs of census and symptom reports.

    The employee share divides the peak daily on-site attestation count (a
    proxy for distinct employees living in the area) by the market-share
    weighted service-area population. On weekly panels the on-site sums are
    first averaged over the days of each week. The share is None without
    on-site counts or a zip map.
    """
    y = panel.y_array()
    x = panel.x_array()
    onsite = None
    if panel.onsite is not None:
        onsite = np.asarray(panel.onsite, dtype=float) / panel.frequency.step.days
    have_share = onsite is not None and zipmap is not None

    per_unit = []
    for i, unit in enumerate(panel.units):
        share = _share(unit, float(onsite[i].max()), zipmap.weighted_population(unit)) if have_share else None
        per_unit.append(_describe(unit, y[i], x[i], share))

    network_share = None
    if have_share:
        population = sum(zipmap.weighted_population(u) for u in panel.units)
        network_share = _share(NETWORK_ID, float(onsite.sum(axis=0).max()), population)
    network = _describe(NETWORK_ID, y.sum(axis=0), x.sum(axis=0), network_share)
    return PanelDescription(per_unit=per_unit, network=network, n_periods=panel.n_periods)


def _fmt_mean_sd(mean: float, sd: float) -> str:
    return f"{mean:.1f} ({sd:.1f})"


def _fmt_share(share: Optional[float]) -> str:
    return "n/a" if share is None else f"{share:.1%}"


def _fmt_score(score: Optional[UnitScore]) -> str:
    if score is None:
        return ""
    weighted = "n/a" if score.wmape is None else f"{score.wmape:.1%}"
    return f"{score.mae:.1f} ({weighted})"


def render_table(description: PanelDescription, report: Optional[EvalReport] = None) -> str:
    """
    Aligned text table: unit, census mean (SD), symptoms mean (SD),
    employees / population, MAE (WMAPE).
    """
    scores = {s.unit_id: s for s in report.per_unit} if report else {}
    header = ["Unit", "Census mean (SD)", "Symptoms mean (SD)", "Employees/Population", "MAE (WMAPE)"]
    rows = [header]
    labelled = [(desc.unit_id, desc, scores.get(desc.unit_id)) for desc in description.per_unit]
    labelled.append(("Total network", description.network, report.network if report else None))
    for label, desc, score in labelled:
        rows.append([
            label,
            _fmt_mean_sd(desc.census_mean, desc.census_sd),
            _fmt_mean_sd(desc.symptoms_mean, desc.symptoms_sd),
            _fmt_share(desc.employee_share_of_population),
            _fmt_score(score),
        ])
    widths = [max(len(row[c]) for row in rows) for c in range(len(header))]
    lines = []
    for n, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[c]) if c == 0 else cell.rjust(widths[c]) for c, cell in enumerate(row)).rstrip())
        if n == 0:
            lines.append("-" * len(lines[0]))
    lines.append(f"SDs use the n denominator over {description.n_periods} periods.")
    return "\n".join(lines)
