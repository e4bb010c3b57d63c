"""
Linear model module - Lag designs and heterogeneous per-unit OLS.

Each unit is regressed on an intercept, K lags of its own target and K lags
of its indicator. Coefficients differ across units but not over time.
Least squares uses a column-pivoted QR decomposition; the normal equations
are never formed.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, stats

from attestation_forecast.errors import (
    ForecastToolkitError,
    InsufficientLengthError,
    RankDeficiencyError,
    SeriesTooShortError,
    with_unit_context,
)
from attestation_forecast.models import (
    CoefficientRow,
    LagScore,
    ModelSpec,
    PanelFit,
    TransformedPanel,
    UnitFit,
)

logger = logging.getLogger(__name__)


def build_lag_matrix(
    y: Sequence[float],
    x: Sequence[float],
    K: int,
    trim: int = 0,
    include_intercept: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Build the response vector and lag design of one unit.

    Row t of the design is [1, y_{t-1..t-K}, x_{t-1..t-K}] for t = K..T'-1
    (0-based). ``trim`` drops that many leading rows so that designs of
    different K can share the response rows of a larger lag order.

    Returns:
        Tuple of (response of length T_eff, design of shape T_eff x (1 + 2K))

    Raises:
        SeriesTooShortError: If T_eff <= number of parameters
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape != x.shape or y.ndim != 1:
        raise ValueError("y and x must be 1-D series of equal length")
    n_params = 2 * K + int(include_intercept)
    start = K + trim
    T_eff = y.size - start
    if T_eff <= n_params:
        raise SeriesTooShortError(
            f"series of length {y.size} leaves {T_eff} rows for {n_params} parameters "
            f"(K={K}, trim={trim})"
        )

    columns = [np.ones(T_eff)] if include_intercept else []
    for series in (y, x):
        for lag in range(1, K + 1):
            columns.append(series[start - lag: y.size - lag])
    return y[start:].copy(), np.column_stack(columns)


def ols(
    response: np.ndarray,
    design: np.ndarray,
    column_names: Optional[Sequence[str]] = None,
) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """
    Ordinary least squares via column-pivoted QR.

    Returns:
        Tuple of (coeffs, cov, rss, sigma2) with sigma2 = rss / (n - p) and
        cov = sigma2 * (X'X)^-1 computed from R^-1.

    Raises:
        SeriesTooShortError: If rows < columns + 1
        RankDeficiencyError: If the design is not of full column rank
    """
    response = np.asarray(response, dtype=float)
    design = np.asarray(design, dtype=float)
    n, p = design.shape
    if n < p + 1:
        raise SeriesTooShortError(f"{n} rows cannot estimate {p} coefficients with residual variance")

    q, r, piv = linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(n, p) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < p:
        dependent = int(piv[rank])
        name = column_names[dependent] if column_names is not None else f"column {dependent}"
        raise RankDeficiencyError(name)

    coeffs = np.empty(p)
    coeffs[piv] = linalg.solve_triangular(r, q.T @ response)
    residuals = response - design @ coeffs
    rss = float(residuals @ residuals)
    sigma2 = rss / (n - p)

    r_inv = linalg.solve_triangular(r, np.eye(p))
    cov = np.empty((p, p))
    cov[np.ix_(piv, piv)] = sigma2 * (r_inv @ r_inv.T)
    cov = 0.5 * (cov + cov.T)
    return coeffs, cov, rss, sigma2


def fit_unit(
    y: Sequence[float],
    x: Sequence[float],
    spec: ModelSpec,
    unit_id: str = "unit",
    trim: int = 0,
) -> UnitFit:
    """
    Fit one unit's unrestricted and restricted (no x lags) regressions.

    wald = (rss_r - rss_u) / (rss_u / (T_eff - 2K - 1)), the Wald statistic
    for H0: beta = 0 with K restrictions.
    """
    K = spec.K
    names = spec.term_names()
    try:
        response, design = build_lag_matrix(y, x, K, trim=trim, include_intercept=spec.include_intercept)
        coeffs, cov, rss_u, sigma2 = ols(response, design, names)
        restricted = design[:, : spec.n_params - K]
        _, _, rss_r, _ = ols(response, restricted, names[: spec.n_params - K])
    except ForecastToolkitError as exc:
        raise with_unit_context(exc, unit_id) from exc

    T_eff = response.size
    rss_r = max(rss_r, rss_u)
    df = T_eff - spec.n_params
    if rss_u > 0:
        wald = (rss_r - rss_u) / (rss_u / df)
    else:
        wald = 0.0 if rss_r == rss_u else math.inf

    offset = int(spec.include_intercept)
    return UnitFit(
        unit_id=unit_id,
        K=K,
        alpha=float(coeffs[0]) if spec.include_intercept else 0.0,
        gamma=coeffs[offset: offset + K].tolist(),
        beta=coeffs[offset + K:].tolist(),
        include_intercept=spec.include_intercept,
        cov=cov.tolist(),
        rss_u=rss_u,
        rss_r=rss_r,
        sigma2=sigma2,
        T_eff=T_eff,
        wald=wald,
    )


def confidence_interval(fit: UnitFit, coeff_index: int, level: float = 0.95) -> Tuple[float, float]:
    """
    Two-tailed t interval for one coefficient.

    estimate +/- t_{1-(1-level)/2, T_eff-(1+2K)} * se

    Raises:
        IndexError: If coeff_index is out of range
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    coeffs = fit.coefficients()
    if not 0 <= coeff_index < coeffs.size:
        raise IndexError(f"coefficient index {coeff_index} outside 0..{coeffs.size - 1}")
    estimate = float(coeffs[coeff_index])
    se = math.sqrt(max(fit.cov[coeff_index][coeff_index], 0.0))
    quantile = stats.t.ppf(1.0 - (1.0 - level) / 2.0, fit.T_eff - fit.n_params)
    return estimate - quantile * se, estimate + quantile * se


def unit_bic(fit: UnitFit) -> float:
    """Per-unit Gaussian BIC (diagnostics only)."""
    if fit.rss_u <= 0:
        return -math.inf
    return fit.T_eff * math.log(fit.rss_u / fit.T_eff) + fit.n_params * math.log(fit.T_eff)


def _loglik(fit: UnitFit) -> float:
    if fit.rss_u <= 0:
        return math.inf
    n = fit.T_eff
    return -0.5 * n * (math.log(2 * math.pi) + math.log(fit.rss_u / n) + 1.0)


def bic(panel_fit: PanelFit) -> float:
    """
    Pooled Gaussian BIC of a panel fitted under one K.

    sum_i T_eff * ln(rss_i / T_eff) + N (1 + 2K) ln(n_obs_total); lower is better.
    """
    fits = panel_fit.fits
    if not fits:
        raise ValueError("panel has no fitted units")
    if any(fit.K != panel_fit.spec.K for fit in fits):
        raise ValueError("all units must share the panel's K")
    if any(fit.rss_u <= 0 for fit in fits):
        return -math.inf
    fit_term = sum(fit.T_eff * math.log(fit.rss_u / fit.T_eff) for fit in fits)
    p_total = sum(fit.n_params for fit in fits)
    return fit_term + p_total * math.log(panel_fit.n_obs_total)


def fit_panel(
    panel: TransformedPanel,
    spec: ModelSpec,
    jobs: int = 1,
    trim: int = 0,
) -> PanelFit:
    """
    Fit every unit under a common K.

    Units are independent; with ``jobs > 1`` they run on a thread pool and
    are merged back in unit order.
    """
    y = panel.y_array()
    x = panel.x_array()

    def fit_one(i: int) -> UnitFit:
        return fit_unit(y[i], x[i], spec, unit_id=panel.units[i], trim=trim)

    indices = range(len(panel.units))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            fits = list(executor.map(fit_one, indices))
    else:
        fits = [fit_one(i) for i in indices]

    n_obs_total = sum(fit.T_eff for fit in fits)
    panel_fit = PanelFit(
        spec=spec,
        fits=fits,
        bic_total=0.0,
        loglik_total=sum(_loglik(fit) for fit in fits),
        n_obs_total=n_obs_total,
    )
    panel_fit.bic_total = bic(panel_fit)
    logger.debug(f"Fitted {len(fits)} units with K={spec.K}, BIC={panel_fit.bic_total:.4f}")
    return panel_fit


def select_lag(
    panel: TransformedPanel,
    k_max: int,
    spec_template: Optional[ModelSpec] = None,
    jobs: int = 1,
) -> Tuple[int, List[LagScore]]:
    """
    Choose the common lag order minimizing the pooled BIC.

    Every candidate K in 1..k_max is scored on the same response rows (those
    available at k_max). Ties go to the smaller K.

    Raises:
        InsufficientLengthError: If the shortest unit cannot support k_max
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    template = spec_template or ModelSpec(K=1)
    n_params_max = 2 * k_max + int(template.include_intercept)
    lengths = [len(row) for row in panel.y_tilde]
    shortest = int(np.argmin(lengths))
    if lengths[shortest] - k_max <= n_params_max:
        raise InsufficientLengthError(
            f"unit {panel.units[shortest]} has {lengths[shortest]} transformed periods; "
            f"k_max={k_max} needs more than {n_params_max + k_max}"
        )

    curve: List[LagScore] = []
    for K in range(1, k_max + 1):
        spec = template.model_copy(update={"K": K})
        panel_fit = fit_panel(panel, spec, jobs=jobs, trim=k_max - K)
        curve.append(LagScore(K=K, bic=panel_fit.bic_total))
        logger.info(f"K={K:2d}  BIC={panel_fit.bic_total:.4f}")

    best = curve[0]
    for score in curve[1:]:
        if score.bic < best.bic:
            best = score
    logger.info(f"Selected K={best.K} by BIC over 1..{k_max}")
    return best.K, curve


def fitted_values(fit: UnitFit, y: Sequence[float], x: Sequence[float]) -> np.ndarray:
    """In-sample fitted values for periods K..T'-1 of the transformed series."""
    _, design = build_lag_matrix(y, x, fit.K, include_intercept=fit.include_intercept)
    return design @ fit.coefficients()


def coefficient_table(panel_fit: PanelFit) -> List[CoefficientRow]:
    """Estimate, standard error, t, p-value and CI for every coefficient of every unit."""
    spec = panel_fit.spec
    names = spec.term_names()
    rows: List[CoefficientRow] = []
    for fit in panel_fit.fits:
        coeffs = fit.coefficients()
        df = fit.T_eff - fit.n_params
        for j, name in enumerate(names):
            se = math.sqrt(max(fit.cov[j][j], 0.0))
            lo, hi = confidence_interval(fit, j, spec.ci_level)
            if se > 0:
                t_stat = float(coeffs[j] / se)
                if spec.two_tailed:
                    p_value = float(min(1.0, 2 * stats.t.sf(abs(t_stat), df)))
                else:
                    p_value = float(stats.t.sf(t_stat, df))
            else:
                t_stat = p_value = None
            rows.append(CoefficientRow(
                unit_id=fit.unit_id,
                term=name,
                estimate=float(coeffs[j]),
                std_error=se,
                t_stat=t_stat,
                p_value=p_value,
                ci_low=lo,
                ci_high=hi,
            ))
    return rows
