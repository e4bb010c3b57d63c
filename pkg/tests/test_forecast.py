"""
Tests for recursive forecasting, baselines and the doubling interpretation.
"""
from datetime import timedelta

import numpy as np
import pytest

from attestation_forecast.errors import AlignmentError, SeriesTooShortError
from attestation_forecast.forecast import (
    back_transform,
    doubling_report,
    forecast_panel,
    forecast_unit,
    interpret_doubling,
    persistence_forecast,
    plot_data_frame,
    rolling_origin_forecast,
)
from attestation_forecast.linmod import fit_panel, fit_unit, fitted_values
from attestation_forecast.models import ExogenousPolicy, ModelSpec, SimConfig, TransformSpec, UnitFit
from attestation_forecast.preprocess import split_train_holdout, transform_panel
from attestation_forecast.simulate import make_generator, simulate_arx_panel, simulate_panel

from tests.conftest import make_panel


def _fit(alpha=1.0, gamma=0.5, beta=0.2) -> UnitFit:
    return UnitFit(
        unit_id="H1", K=1, alpha=alpha, gamma=[gamma], beta=[beta],
        cov=[[0.0] * 3 for _ in range(3)],
        rss_u=0.0, rss_r=0.0, sigma2=0.0, T_eff=10, wald=0.0,
    )


def test_forecast_unit_hold_last():
    predictions = forecast_unit(_fit(), [5.0, 2.0], [1.0, 3.0], h=3)
    assert predictions.tolist() == pytest.approx([2.6, 2.9, 3.05])


def test_forecast_unit_provided_path():
    policy = ExogenousPolicy(kind="provided", provided_paths=[[10.0, 20.0, 30.0]])
    predictions = forecast_unit(_fit(), [2.0], [3.0], h=3, policy=policy)
    assert predictions.tolist() == pytest.approx([2.6, 4.3, 7.15])


def test_forecast_unit_short_history():
    with pytest.raises(SeriesTooShortError):
        forecast_unit(_fit(), [], [], h=1)
    with pytest.raises(AlignmentError):
        forecast_unit(_fit(), [1.0], [1.0], h=3,
                      policy=ExogenousPolicy(kind="provided", provided_paths=[[1.0]]))


def test_one_step_forecast_matches_fitted_value():
    rng = make_generator(13, 0)
    y, x = simulate_arx_panel(rng, 1, 80, gamma=[0.4, 0.2], beta=[0.3, 0.1], alpha=0.5)
    fit = fit_unit(y[0], x[0], ModelSpec(K=2))

    one_step = forecast_unit(fit, y[0], x[0], h=1)[0]
    # the appended values are only targets; the last fitted row uses observed lags
    fitted = fitted_values(fit, np.append(y[0], 0.0), np.append(x[0], 0.0))
    assert one_step == pytest.approx(fitted[-1], rel=1e-12, abs=1e-12)


def test_forecast_ignores_earlier_history():
    rng = make_generator(14, 0)
    y, x = simulate_arx_panel(rng, 1, 60, gamma=[0.5], beta=[0.3, 0.2])
    fit = fit_unit(y[0], x[0], ModelSpec(K=2))
    full = forecast_unit(fit, y[0], x[0], h=5)
    recent = forecast_unit(fit, y[0][-2:], x[0][-2:], h=5)
    assert full.tolist() == recent.tolist()


def test_back_transform_clips_at_zero():
    assert back_transform(np.array([0.0, np.log(5.0), -3.0]), 1.0).tolist() == pytest.approx([0.0, 4.0, 0.0])


def test_interpret_doubling():
    assert interpret_doubling(0.05) == pytest.approx(0.03526, abs=1e-5)
    assert interpret_doubling(0.0) == 0.0
    assert interpret_doubling(1.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        interpret_doubling(float("nan"))


@pytest.fixture
def split_panel():
    panel, _ = simulate_panel(SimConfig(n_units=3, n_days=120, seed=3))
    tpanel = transform_panel(panel, TransformSpec())
    train, holdout = split_train_holdout(tpanel, 7)
    return tpanel, train, holdout


def test_forecast_panel_network_and_dates(split_panel):
    _, train, holdout = split_panel
    panel_fit = fit_panel(train, ModelSpec(K=7))
    forecast = forecast_panel(panel_fit, train, 7)

    assert forecast.origin == train.calendar[-1]
    assert forecast.dates == holdout.calendar
    assert forecast.method == "one_shot"
    per_unit = np.asarray(forecast.per_unit)
    assert np.allclose(per_unit.sum(axis=0), forecast.network)
    assert np.all(per_unit >= 0)
    assert np.allclose(per_unit, np.maximum(0.0, np.exp(forecast.transformed_scale) - 1.0))


def test_forecast_panel_unit_mismatch(split_panel):
    tpanel, train, _ = split_panel
    panel_fit = fit_panel(train, ModelSpec(K=2))
    other = make_panel([[1.0] * 30], [[1.0] * 30], units=["H9"])
    with pytest.raises(AlignmentError):
        forecast_panel(panel_fit, transform_panel(other, TransformSpec()), 3)


def test_persistence_forecast_repeats_last_census(split_panel):
    _, train, _ = split_panel
    forecast = persistence_forecast(train, 4)
    last = [row[-1] for row in train.base.y]
    assert forecast.per_unit == [[v] * 4 for v in last]
    assert forecast.network == pytest.approx([sum(last)] * 4)
    assert forecast.method == "persistence"


def test_rolling_origin_forecast(split_panel):
    tpanel, train, holdout = split_panel
    forecast = rolling_origin_forecast(tpanel, ModelSpec(K=2), train.n_periods, 7)

    assert forecast.method == "rolling_origin"
    assert forecast.origin == train.calendar[-1]
    assert forecast.dates == holdout.calendar
    # the first step equals a one-shot forecast from the training window
    one_shot = forecast_panel(fit_panel(train, ModelSpec(K=2)), train, 1)
    assert [row[0] for row in forecast.per_unit] == pytest.approx([row[0] for row in one_shot.per_unit])
    with pytest.raises(AlignmentError):
        rolling_origin_forecast(tpanel, ModelSpec(K=2), train.n_periods, 8)


def test_doubling_report(split_panel):
    _, train, _ = split_panel
    panel_fit = fit_panel(train, ModelSpec(K=3))
    rows = doubling_report(panel_fit)

    assert len(rows) == 3
    for row, fit in zip(rows, panel_fit.fits):
        assert row.lag == 3
        assert row.beta == fit.beta[2]
        assert row.approx_effect == row.beta
        assert row.exact_effect == pytest.approx(2 ** row.beta - 1)
        assert row.ci_low <= row.beta <= row.ci_high
        assert row.exact_ci_low <= row.exact_effect <= row.exact_ci_high


def test_plot_data_frame(split_panel):
    _, train, holdout = split_panel
    panel_fit = fit_panel(train, ModelSpec(K=2))
    forecast = forecast_panel(panel_fit, train, 7)
    frame = plot_data_frame(panel_fit, train, holdout, forecast)

    assert list(frame.columns) == ["unit_id", "date", "series", "value"]
    assert set(frame["series"]) == {"observed", "fitted", "forecast"}
    observed = frame[(frame["unit_id"] == "H1") & (frame["series"] == "observed")]
    assert len(observed) == train.base.n_periods + holdout.n_periods
    fitted = frame[(frame["unit_id"] == "H1") & (frame["series"] == "fitted")]
    assert fitted["date"].iloc[0] == (train.calendar[0] + timedelta(days=2)).isoformat()
