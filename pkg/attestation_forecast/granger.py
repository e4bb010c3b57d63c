"""
Granger module - Panel Granger non-causality test for heterogeneous panels.

Averages the per-unit Wald statistics and standardizes the mean into an
asymptotic statistic (Z-bar) and a fixed-T statistic (Z-tilde). The
decision uses Z-tilde with two-tailed standard-normal p-values.
"""
import logging
import math
from typing import Optional

from scipy import stats

from attestation_forecast.errors import MomentConditionError, UnbalancedPanelError
from attestation_forecast.linmod import fit_panel
from attestation_forecast.models import (
    Frequency,
    GrangerResult,
    ModelSpec,
    PanelDataset,
    PanelFit,
    TransformSpec,
    UnitWald,
)
from attestation_forecast.preprocess import aggregate_weekly, transform_panel

logger = logging.getLogger(__name__)


def standardize(w_bar: float, N: int, K: int, T_eff: int):
    """
    Return (Z-bar, Z-tilde) for a mean Wald statistic.

    Z-bar   = sqrt(N / 2K) * (W-bar - K)
    Z-tilde = sqrt(N / 2K * (T - 3K - 5) / (T - 3K - 3))
              * ((T - 3K - 3) / (T - 3K - 1) * W-bar - K)

    Raises:
        MomentConditionError: If T_eff <= 5 + 3K
    """
    if T_eff <= 5 + 3 * K:
        raise MomentConditionError(
            f"fixed-T standardization needs T_eff > 5 + 3K = {5 + 3 * K}, got T_eff={T_eff}"
        )
    z_bar = math.sqrt(N / (2 * K)) * (w_bar - K)
    scale = math.sqrt((N / (2 * K)) * (T_eff - 3 * K - 5) / (T_eff - 3 * K - 3))
    z_tilde = scale * ((T_eff - 3 * K - 3) / (T_eff - 3 * K - 1) * w_bar - K)
    return z_bar, z_tilde


def two_tailed_p(z: float) -> float:
    """Two-tailed standard-normal p-value."""
    return float(min(1.0, max(0.0, 2.0 * stats.norm.sf(abs(z)))))


def dh_test(
    panel_fit: PanelFit,
    alpha: float = 0.05,
    frequency: Frequency = Frequency.DAILY,
) -> GrangerResult:
    """
    Test H0: beta_i = 0 for every unit.

    Raises:
        UnbalancedPanelError: If units have different T_eff
        MomentConditionError: If T_eff <= 5 + 3K
    """
    fits = panel_fit.fits
    K = panel_fit.spec.K
    lengths = sorted({fit.T_eff for fit in fits})
    if len(lengths) != 1:
        raise UnbalancedPanelError(f"units have unequal effective lengths: {lengths}")
    T_eff = lengths[0]
    N = len(fits)

    w_bar = sum(fit.wald for fit in fits) / N
    z_bar, z_tilde = standardize(w_bar, N, K, T_eff)
    p_asymptotic = two_tailed_p(z_bar)
    p_fixed_t = two_tailed_p(z_tilde)

    result = GrangerResult(
        K=K,
        N=N,
        T_eff=T_eff,
        w_bar=w_bar,
        z_asymptotic=z_bar,
        z_fixed_t=z_tilde,
        p_asymptotic=p_asymptotic,
        p_fixed_t=p_fixed_t,
        per_unit_wald=[UnitWald(unit_id=fit.unit_id, wald=fit.wald) for fit in fits],
        alpha=alpha,
        reject=p_fixed_t <= alpha,
        frequency=frequency,
    )
    verdict = "reject" if result.reject else "do not reject"
    logger.info(
        f"Granger test: W-bar={w_bar:.4f} Z-tilde={z_tilde:.4f} (p={p_fixed_t:.4g}) "
        f"Z-bar={z_bar:.4f} (p={p_asymptotic:.4g}) -> {verdict}"
    )
    return result


def dh_test_weekly(
    panel: PanelDataset,
    spec: ModelSpec,
    transform: Optional[TransformSpec] = None,
    alpha: float = 0.05,
    jobs: int = 1,
) -> GrangerResult:
    """
    Granger test on a weekly panel.

    A daily panel is aggregated to ISO weeks first. Weekly sums replace the
    moving average, so the default transform is log1p without smoothing.
    """
    if panel.frequency is Frequency.DAILY:
        panel = aggregate_weekly(panel)
    transform = transform or TransformSpec(ma_window=1, log_offset=1.0)
    T_eff = panel.n_periods - transform.ma_window + 1 - spec.K
    if T_eff <= 5 + 3 * spec.K:
        raise MomentConditionError(
            f"weekly panel of {panel.n_periods} weeks gives T_eff={T_eff}; "
            f"K={spec.K} needs T_eff > {5 + 3 * spec.K}"
        )
    tpanel = transform_panel(panel, transform)
    return dh_test(fit_panel(tpanel, spec, jobs=jobs), alpha=alpha, frequency=Frequency.WEEKLY)
