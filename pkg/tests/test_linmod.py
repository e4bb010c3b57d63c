"""
Tests for lag designs, OLS and BIC lag selection.
"""
import math

import numpy as np
import pytest
from scipy import stats

from attestation_forecast.errors import (
    InsufficientLengthError,
    RankDeficiencyError,
    SeriesTooShortError,
)
from attestation_forecast.linmod import (
    bic,
    build_lag_matrix,
    coefficient_table,
    confidence_interval,
    fit_panel,
    fit_unit,
    fitted_values,
    ols,
    select_lag,
    unit_bic,
)
from attestation_forecast.models import ModelSpec
from attestation_forecast.simulate import arx_transformed_panel, make_generator, simulate_arx_panel


def test_build_lag_matrix_layout():
    """Columns run const, y lags, x lags; rows start at t = K."""
    y = np.arange(10.0)
    x = np.arange(10.0) + 100
    response, design = build_lag_matrix(y, x, K=2)

    assert response.tolist() == list(range(2, 10))
    assert design.shape == (8, 5)
    assert design[0].tolist() == [1.0, 1.0, 0.0, 101.0, 100.0]
    assert design[-1].tolist() == [1.0, 8.0, 7.0, 108.0, 107.0]


def test_build_lag_matrix_trim_shares_rows():
    y = np.arange(30.0)
    x = np.arange(30.0)
    r_small, _ = build_lag_matrix(y, x, K=2, trim=3)
    r_large, _ = build_lag_matrix(y, x, K=5)
    assert r_small.tolist() == r_large.tolist()


def test_build_lag_matrix_too_short():
    """Fewer rows than parameters is an error."""
    with pytest.raises(SeriesTooShortError):
        build_lag_matrix(np.ones(6), np.ones(6), K=2)


def test_ols_matches_normal_equations():
    """Random well-conditioned systems agree with a normal-equations solve."""
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(30, 201))
        p = int(rng.integers(3, 16))
        X = rng.standard_normal((n, p))
        y = X @ rng.standard_normal(p) + rng.standard_normal(n)

        coeffs, cov, rss, sigma2 = ols(y, X)

        oracle = np.linalg.solve(X.T @ X, X.T @ y)
        assert np.allclose(coeffs, oracle, rtol=1e-8, atol=1e-10)

        residuals = y - X @ coeffs
        scale = np.linalg.norm(X) * np.linalg.norm(y)
        assert np.max(np.abs(X.T @ residuals)) < 1e-8 * scale
        assert rss == pytest.approx(float(residuals @ residuals))
        assert sigma2 == pytest.approx(rss / (n - p))
        assert np.allclose(cov, sigma2 * np.linalg.inv(X.T @ X), rtol=1e-8, atol=1e-12)


def test_ols_rank_deficiency_names_column():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((40, 3))
    X = np.column_stack([X, X[:, 1] * 2.0])
    y = rng.standard_normal(40)
    with pytest.raises(RankDeficiencyError) as excinfo:
        ols(y, X, ["a", "b", "c", "d"])
    assert excinfo.value.column in {"b", "d"}
    assert excinfo.value.exit_code == 4


def test_constant_indicator_is_rank_deficient():
    rng = np.random.default_rng(4)
    y = rng.standard_normal(50)
    x = np.full(50, 2.0)
    with pytest.raises(RankDeficiencyError) as excinfo:
        fit_unit(y, x, ModelSpec(K=1), unit_id="H3")
    assert "unit H3" in str(excinfo.value)


def test_fit_unit_wald_matches_hand_computation():
    """W = (RSS_r - RSS_u) / (RSS_u / df) from two least-squares fits."""
    rng = make_generator(5, 0)
    y, x = simulate_arx_panel(rng, 1, 120, gamma=[0.4], beta=[0.3, 0.2])
    spec = ModelSpec(K=2)
    fit = fit_unit(y[0], x[0], spec)

    response, design = build_lag_matrix(y[0], x[0], 2)
    _, rss_u, _, _ = np.linalg.lstsq(design, response, rcond=None)
    _, rss_r, _, _ = np.linalg.lstsq(design[:, :3], response, rcond=None)
    df = response.size - 5
    expected = (rss_r[0] - rss_u[0]) / (rss_u[0] / df)

    assert fit.T_eff == 118
    assert fit.wald == pytest.approx(expected, rel=1e-8)
    assert fit.rss_r >= fit.rss_u
    assert len(fit.gamma) == len(fit.beta) == 2


def test_fit_unit_without_intercept():
    rng = make_generator(6, 0)
    y, x = simulate_arx_panel(rng, 1, 80, gamma=[0.5], beta=[0.5])
    fit = fit_unit(y[0], x[0], ModelSpec(K=1, include_intercept=False))
    assert fit.alpha == 0.0
    assert fit.n_params == 2
    assert fit.coefficients().size == 2


def test_confidence_interval_uses_t_quantile():
    rng = make_generator(7, 0)
    y, x = simulate_arx_panel(rng, 1, 60, gamma=[0.5], beta=[0.5])
    fit = fit_unit(y[0], x[0], ModelSpec(K=1))
    lo, hi = confidence_interval(fit, 2, 0.90)

    se = math.sqrt(fit.cov[2][2])
    q = stats.t.ppf(0.95, fit.T_eff - 3)
    assert lo == pytest.approx(fit.beta[0] - q * se)
    assert hi == pytest.approx(fit.beta[0] + q * se)
    with pytest.raises(IndexError):
        confidence_interval(fit, 3)
    with pytest.raises(ValueError):
        confidence_interval(fit, 0, 1.5)


def test_fit_panel_parallel_matches_serial():
    rng = make_generator(8, 0)
    y, x = simulate_arx_panel(rng, 6, 100, gamma=[0.5], beta=[0.3])
    tpanel = arx_transformed_panel(y, x)
    serial = fit_panel(tpanel, ModelSpec(K=2))
    parallel = fit_panel(tpanel, ModelSpec(K=2), jobs=3)

    assert serial == parallel
    assert [f.unit_id for f in serial.fits] == tpanel.units
    assert serial.n_obs_total == 6 * 98


def test_bic_pooled_formula():
    rng = make_generator(9, 0)
    y, x = simulate_arx_panel(rng, 3, 80, gamma=[0.5], beta=[0.3])
    panel_fit = fit_panel(arx_transformed_panel(y, x), ModelSpec(K=1))

    n_obs = sum(f.T_eff for f in panel_fit.fits)
    expected = sum(f.T_eff * math.log(f.rss_u / f.T_eff) for f in panel_fit.fits) + 9 * math.log(n_obs)
    assert bic(panel_fit) == pytest.approx(expected)
    assert panel_fit.bic_total == pytest.approx(expected)
    assert all(math.isfinite(unit_bic(f)) for f in panel_fit.fits)


def test_select_lag_recovers_order_three():
    """A clear order-3 process is found with k_max = 6."""
    rng = make_generator(10, 0)
    y, x = simulate_arx_panel(rng, 5, 300, gamma=[0.3, 0.1, 0.2], beta=[0.3, 0.2, 0.5])
    k_opt, curve = select_lag(arx_transformed_panel(y, x), k_max=6)

    assert k_opt == 3
    assert [score.K for score in curve] == [1, 2, 3, 4, 5, 6]
    assert min(curve, key=lambda s: s.bic).K == 3


def test_select_lag_needs_enough_periods():
    rng = make_generator(11, 0)
    y, x = simulate_arx_panel(rng, 2, 20, gamma=[0.5], beta=[0.5])
    with pytest.raises(InsufficientLengthError):
        select_lag(arx_transformed_panel(y, x), k_max=7)


def test_fitted_values_and_coefficient_table():
    rng = make_generator(12, 0)
    y, x = simulate_arx_panel(rng, 2, 90, gamma=[0.5], beta=[0.4])
    tpanel = arx_transformed_panel(y, x)
    panel_fit = fit_panel(tpanel, ModelSpec(K=2))

    fit = panel_fit.fits[0]
    fitted = fitted_values(fit, y[0], x[0])
    residuals = y[0][2:] - fitted
    assert float(residuals @ residuals) == pytest.approx(fit.rss_u)

    rows = coefficient_table(panel_fit)
    assert len(rows) == 2 * 5
    assert [r.term for r in rows[:5]] == ["const", "y.L1", "y.L2", "x.L1", "x.L2"]
    for row in rows:
        assert row.ci_low <= row.estimate <= row.ci_high
        assert 0.0 <= row.p_value <= 1.0


def test_wald_invariant_to_indicator_scale():
    """Multiplying x-tilde by a constant changes beta but not W."""
    rng = make_generator(13, 0)
    y, x = simulate_arx_panel(rng, 1, 150, gamma=[0.5], beta=[0.2, 0.1])
    spec = ModelSpec(K=2)
    base = fit_unit(y[0], x[0], spec)

    for scale in (0.01, 7.5, -3.0):
        scaled = fit_unit(y[0], scale * x[0], spec)
        assert scaled.wald == pytest.approx(base.wald, rel=1e-8)
        assert scaled.rss_u == pytest.approx(base.rss_u, rel=1e-8)
        assert np.allclose(np.asarray(scaled.beta) * scale, base.beta, rtol=1e-6)


def test_select_lag_truncates_at_k_max():
    """A true order above k_max returns k_max with BIC falling at every step."""
    rng = make_generator(14, 0)
    y, x = simulate_arx_panel(rng, 5, 300, gamma=[0.2], beta=[0.5] * 6)
    k_opt, curve = select_lag(arx_transformed_panel(y, x), k_max=3)

    assert k_opt == 3
    bics = [score.bic for score in curve]
    assert all(later < earlier for earlier, later in zip(bics, bics[1:]))


@pytest.mark.slow
def test_select_lag_picks_one_on_white_noise():
    """Independent white noise selects K = 1 in at least 95% of runs."""
    picks = []
    for rep in range(100):
        rng = make_generator(15, rep)
        y, x = simulate_arx_panel(rng, 10, 200, gamma=[0.0], beta=[0.0])
        k_opt, _ = select_lag(arx_transformed_panel(y, x), k_max=5)
        picks.append(k_opt)
    assert np.mean(np.asarray(picks) == 1) >= 0.95


@pytest.mark.slow
def test_null_wald_mean_close_to_k():
    """Under non-causality the unit Wald statistics average about K."""
    K = 2
    rng = make_generator(16, 0)
    y, x = simulate_arx_panel(rng, 1000, 202, gamma=[0.5], beta=[0.0])
    panel_fit = fit_panel(arx_transformed_panel(y, x), ModelSpec(K=K), jobs=4)

    walds = np.array([fit.wald for fit in panel_fit.fits])
    assert walds.size == 1000
    # SE of the mean is about sqrt(2K / 1000) = 0.063
    assert abs(walds.mean() - K) < 0.25
