"""
Preprocess module - Smoothing, log transform and train/holdout split.

Smoothing precedes logging. The moving average is trailing (causal), so no
future value leaks into a forecasting origin.
"""
import logging
from typing import Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from attestation_forecast.errors import (
    ForecastToolkitError,
    InsufficientLengthError,
    NonPositiveArgumentError,
    SeriesTooShortError,
    with_unit_context,
)
from attestation_forecast.models import Frequency, PanelDataset, TransformedPanel, TransformSpec

logger = logging.getLogger(__name__)


def moving_average(series: Sequence[float], window: int) -> np.ndarray:
    """
    Trailing moving average.

    output[j] = mean(series[j .. j + window - 1]); the output is
    ``window - 1`` periods shorter than the input.

    Raises:
        SeriesTooShortError: If the series is shorter than the window
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    values = np.asarray(series, dtype=float)
    if values.ndim != 1 or values.size < window:
        raise SeriesTooShortError(f"series of length {values.size} is shorter than window {window}")
    if window == 1:
        return values.copy()
    return sliding_window_view(values, window).mean(axis=1)


def log_transform(series: Sequence[float], offset: float = 1.0) -> np.ndarray:
    """
    Natural log of ``series + offset``.

    Raises:
        NonPositiveArgumentError: If any value + offset <= 0
    """
    values = np.asarray(series, dtype=float) + offset
    if np.any(values <= 0):
        raise NonPositiveArgumentError(
            f"log argument must be positive; {int(np.sum(values <= 0))} value(s) <= 0 "
            f"with offset {offset} (use a positive log_offset for series containing zeros)"
        )
    return np.log(values)


def inverse_transform(series: Sequence[float], offset: float = 1.0) -> np.ndarray:
    """Undo ``log_transform``: exp(series) - offset."""
    return np.exp(np.asarray(series, dtype=float)) - offset


def _transform_series(values: np.ndarray, spec: TransformSpec, smooth: bool) -> np.ndarray:
    if smooth:
        smoothed = moving_average(values, spec.ma_window)
    else:
        if values.size < spec.ma_window:
            raise SeriesTooShortError(
                f"series of length {values.size} is shorter than window {spec.ma_window}"
            )
        smoothed = values[spec.ma_window - 1:]
    return log_transform(smoothed, spec.log_offset)


def transform_panel(panel: PanelDataset, spec: TransformSpec) -> TransformedPanel:
    """
    Smooth then log every unit's y and x.

    The input panel is left unmodified. y is smoothed only when
    ``spec.smooth_target`` is set; otherwise it is aligned by dropping the
    same warm-up periods.
    """
    if panel.n_periods < spec.ma_window:
        raise SeriesTooShortError(
            f"panel has {panel.n_periods} periods, fewer than ma_window {spec.ma_window}"
        )
    y = panel.y_array()
    x = panel.x_array()
    y_rows, x_rows = [], []
    for i, unit in enumerate(panel.units):
        try:
            y_rows.append(_transform_series(y[i], spec, spec.smooth_target).tolist())
            x_rows.append(_transform_series(x[i], spec, True).tolist())
        except ForecastToolkitError as exc:
            raise with_unit_context(exc, unit) from exc

    logger.debug(
        f"Transformed {panel.n_units} units: window={spec.ma_window} "
        f"offset={spec.log_offset} smooth_target={spec.smooth_target}"
    )
    return TransformedPanel(
        base=panel,
        y_tilde=y_rows,
        x_tilde=x_rows,
        spec=spec,
        t_offset=spec.ma_window - 1,
    )


def split_train_holdout(
    panel: TransformedPanel,
    holdout_len: int,
    min_train: int = 2,
) -> Tuple[TransformedPanel, PanelDataset]:
    """
    Split off the final ``holdout_len`` periods.

    Returns:
        Tuple of (training TransformedPanel, raw-scale holdout PanelDataset)

    Raises:
        InsufficientLengthError: If holdout_len < 1 or too little data remains
    """
    if holdout_len < 1:
        raise InsufficientLengthError(f"holdout_len must be positive, got {holdout_len}")
    total = panel.n_periods
    if total <= holdout_len + min_train:
        raise InsufficientLengthError(
            f"{total} transformed periods cannot hold a {holdout_len}-period holdout "
            f"plus {min_train} estimation periods"
        )
    train_len = total - holdout_len
    cut = panel.t_offset + train_len
    train = TransformedPanel(
        base=panel.base.slice_periods(0, cut),
        y_tilde=[row[:train_len] for row in panel.y_tilde],
        x_tilde=[row[:train_len] for row in panel.x_tilde],
        spec=panel.spec,
        t_offset=panel.t_offset,
    )
    holdout = panel.base.slice_periods(cut)
    logger.info(f"Split {total} periods into {train_len} train + {holdout_len} holdout")
    return train, holdout


def aggregate_weekly(panel: PanelDataset) -> PanelDataset:
    """
    Sum a daily panel within ISO-8601 (Monday-start) weeks.

    Partial weeks at either boundary are dropped. The calendar holds the
    Monday of each week.
    """
    if panel.frequency is Frequency.WEEKLY:
        return panel
    first = next((t for t, day in enumerate(panel.calendar) if day.isoweekday() == 1), None)
    n_weeks = 0 if first is None else (panel.n_periods - first) // 7
    if n_weeks < 1:
        raise InsufficientLengthError("panel does not contain a complete ISO week")
    stop = first + 7 * n_weeks

    def weekly(matrix) -> list:
        values = np.asarray(matrix, dtype=float)[:, first:stop]
        return values.reshape(panel.n_units, n_weeks, 7).sum(axis=2).tolist()

    logger.info(f"Aggregated {panel.n_periods} days into {n_weeks} ISO weeks")
    return PanelDataset(
        units=list(panel.units),
        calendar=[panel.calendar[first + 7 * w] for w in range(n_weeks)],
        y=weekly(panel.y),
        x=weekly(panel.x),
        frequency=Frequency.WEEKLY,
        onsite=None if panel.onsite is None else weekly(panel.onsite),
    )
