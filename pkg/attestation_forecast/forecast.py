"""
Forecast module - Recursive multi-step census forecasts.

Forecasts are iterated on the smoothed-log scale, then back-transformed with
exp(.) - log_offset and clipped at zero. No lognormal bias correction is
applied on the way back.
"""
import logging
import math
from datetime import date, timedelta
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from attestation_forecast.errors import (
    AlignmentError,
    ForecastToolkitError,
    SeriesTooShortError,
    with_unit_context,
)
from attestation_forecast.linmod import confidence_interval, fit_panel, fitted_values
from attestation_forecast.models import (
    DoublingEffect,
    ExogenousPolicy,
    ForecastSet,
    ModelSpec,
    PanelDataset,
    PanelFit,
    TransformedPanel,
    UnitFit,
)
from attestation_forecast.preprocess import split_train_holdout

logger = logging.getLogger(__name__)

HOLD_LAST = ExogenousPolicy(kind="hold_last")


def forecast_unit(
    fit: UnitFit,
    y_history: Sequence[float],
    x_history: Sequence[float],
    h: int,
    policy: ExogenousPolicy = HOLD_LAST,
    unit_index: int = 0,
) -> np.ndarray:
    """
    Iterate the fitted AR-X equation ``h`` steps ahead.

    Own lags use observed values up to the origin and earlier predictions
    after it. Indicator values after the origin come from the policy:
    ``hold_last`` repeats the last observation, ``provided`` reads row
    ``unit_index`` of the provided paths (value s is period origin + s).

    Returns:
        h predictions on the transformed scale

    Raises:
        SeriesTooShortError: If either history is shorter than K
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    K = fit.K
    y_ext = [float(v) for v in y_history]
    x_ext = [float(v) for v in x_history]
    if len(y_ext) < K or len(x_ext) < K:
        raise SeriesTooShortError(f"history of length {min(len(y_ext), len(x_ext))} is shorter than K={K}")

    if policy.kind == "provided":
        path = list(policy.provided_paths[unit_index])
        if len(path) < h:
            raise AlignmentError(f"provided indicator path has {len(path)} values, need {h}")
    else:
        path = [x_ext[-1]] * h

    gamma, beta = fit.gamma, fit.beta
    predictions = []
    for step in range(h):
        value = fit.alpha if fit.include_intercept else 0.0
        for k in range(1, K + 1):
            value += gamma[k - 1] * y_ext[-k] + beta[k - 1] * x_ext[-k]
        predictions.append(value)
        y_ext.append(value)
        x_ext.append(path[step])
    return np.asarray(predictions)


def back_transform(values: np.ndarray, offset: float) -> np.ndarray:
    """exp(values) - offset, clipped at zero."""
    return np.maximum(0.0, np.exp(values) - offset)


def _forecast_dates(origin: date, h: int, step: timedelta) -> List[date]:
    return [origin + step * (s + 1) for s in range(h)]


def _assemble(
    tpanel: TransformedPanel,
    transformed: np.ndarray,
    origin: date,
    method: str,
) -> ForecastSet:
    offset = tpanel.spec.log_offset
    per_unit = back_transform(transformed, offset)
    h = transformed.shape[1]
    return ForecastSet(
        origin=origin,
        horizon=h,
        units=list(tpanel.units),
        dates=_forecast_dates(origin, h, tpanel.base.frequency.step),
        per_unit=per_unit.tolist(),
        network=per_unit.sum(axis=0).tolist(),
        transformed_scale=transformed.tolist(),
        log_offset=offset,
        method=method,
    )


def forecast_panel(
    panel_fit: PanelFit,
    tpanel: TransformedPanel,
    h: int,
    policy: ExogenousPolicy = HOLD_LAST,
) -> ForecastSet:
    """
    Forecast every unit from the end of ``tpanel`` and sum to the network.

    Raises:
        AlignmentError: If the fit does not cover the panel's units
    """
    if {fit.unit_id for fit in panel_fit.fits} != set(tpanel.units):
        raise AlignmentError("panel fit and transformed panel cover different units")
    if policy.kind == "provided" and len(policy.provided_paths) != len(tpanel.units):
        raise AlignmentError("provided_paths must have one row per unit")

    y = tpanel.y_array()
    x = tpanel.x_array()
    rows = []
    for i, unit in enumerate(tpanel.units):
        try:
            rows.append(forecast_unit(panel_fit.fit_for(unit), y[i], x[i], h, policy, unit_index=i))
        except ForecastToolkitError as exc:
            raise with_unit_context(exc, unit) from exc

    forecast = _assemble(tpanel, np.vstack(rows), tpanel.calendar[-1], "one_shot")
    logger.info(f"Forecast {len(rows)} units {h} steps from {forecast.origin}")
    return forecast


def persistence_forecast(tpanel: TransformedPanel, h: int) -> ForecastSet:
    """Baseline that repeats the last observed raw census for every step."""
    last = tpanel.base.y_array()[:, -1]
    offset = tpanel.spec.log_offset
    transformed = np.log(np.maximum(last + offset, np.finfo(float).tiny))
    origin = tpanel.calendar[-1]
    per_unit = np.repeat(last[:, None], h, axis=1)
    return ForecastSet(
        origin=origin,
        horizon=h,
        units=list(tpanel.units),
        dates=_forecast_dates(origin, h, tpanel.base.frequency.step),
        per_unit=per_unit.tolist(),
        network=per_unit.sum(axis=0).tolist(),
        transformed_scale=np.repeat(transformed[:, None], h, axis=1).tolist(),
        log_offset=offset,
        method="persistence",
    )


def rolling_origin_forecast(
    tpanel: TransformedPanel,
    spec: ModelSpec,
    train_len: int,
    holdout_len: int,
    jobs: int = 1,
) -> ForecastSet:
    """
    Refit at every holdout day and predict one step ahead.

    Forecast j uses a model fitted on the first ``train_len + j`` transformed
    periods. ``tpanel`` must cover training and holdout periods.
    """
    if train_len + holdout_len > tpanel.n_periods:
        raise AlignmentError(
            f"panel has {tpanel.n_periods} periods, need {train_len + holdout_len}"
        )
    columns = []
    for j in range(holdout_len):
        visible, _ = split_train_holdout(tpanel, tpanel.n_periods - train_len - j)
        panel_fit = fit_panel(visible, spec, jobs=jobs)
        y = visible.y_array()
        x = visible.x_array()
        columns.append([
            forecast_unit(panel_fit.fit_for(unit), y[i], x[i], 1)[0]
            for i, unit in enumerate(visible.units)
        ])
    transformed = np.asarray(columns).T
    forecast = _assemble(tpanel, transformed, tpanel.calendar[train_len - 1], "rolling_origin")
    logger.info(f"Rolling-origin forecast over {holdout_len} holdout periods")
    return forecast


def interpret_doubling(beta_k: float) -> float:
    """Proportional change in y implied by doubling x in a log-log model: 2**beta - 1."""
    if not math.isfinite(beta_k):
        raise ValueError("beta must be finite")
    return math.expm1(beta_k * math.log(2.0))


def doubling_report(panel_fit: PanelFit, lag: Optional[int] = None) -> List[DoublingEffect]:
    """
    Doubling effect of the indicator at ``lag`` (default K) for every unit.

    Reports the exact 2**beta - 1 next to beta read directly as a percentage.
    """
    lag = lag or panel_fit.spec.K
    rows = []
    for fit in panel_fit.fits:
        index = fit.beta_index(lag)
        beta = fit.beta[lag - 1]
        lo, hi = confidence_interval(fit, index, panel_fit.spec.ci_level)
        rows.append(DoublingEffect(
            unit_id=fit.unit_id,
            lag=lag,
            beta=beta,
            ci_low=lo,
            ci_high=hi,
            exact_effect=interpret_doubling(beta),
            approx_effect=beta,
            exact_ci_low=interpret_doubling(lo),
            exact_ci_high=interpret_doubling(hi),
        ))
    return rows


def plot_data_frame(
    panel_fit: PanelFit,
    train: TransformedPanel,
    holdout: PanelDataset,
    forecast: ForecastSet,
) -> pd.DataFrame:
    """
    Tidy observed / fitted / forecast census per unit for external plotting.

    Columns: unit_id, date, series, value (raw census scale).
    """
    offset = train.spec.log_offset
    records = []
    observed_calendar = list(train.base.calendar) + list(holdout.calendar)
    y = train.y_array()
    x = train.x_array()
    for i, unit in enumerate(train.units):
        observed = list(train.base.y[i]) + list(holdout.y[i])
        records += [(unit, d.isoformat(), "observed", v) for d, v in zip(observed_calendar, observed)]

        fit = panel_fit.fit_for(unit)
        fitted = back_transform(fitted_values(fit, y[i], x[i]), offset)
        fitted_dates = train.calendar[fit.K:]
        records += [(unit, d.isoformat(), "fitted", float(v)) for d, v in zip(fitted_dates, fitted)]

        row = forecast.units.index(unit)
        records += [
            (unit, d.isoformat(), "forecast", v)
            for d, v in zip(forecast.dates, forecast.per_unit[row])
        ]
    return pd.DataFrame(records, columns=["unit_id", "date", "series", "value"])
