"""
Simulate module - Synthetic attestation/census panels with known structure.

Census follows the estimation equation on the log1p scale:

    ln(1 + y_t) = alpha + gamma ln(1 + y_{t-1}) + beta ln(1 + x_{t-lag}) + e_t

with y rounded to nonnegative integers. Symptomatic counts x are binomial
draws from a latent prevalence that evolves as a log random walk or a
stochastic SEIR-like process. Every draw comes from a Philox (counter-based)
generator keyed by (seed, stream...), so a config fully determines output.
"""
import logging
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from attestation_forecast.models import (
    PanelDataset,
    SimConfig,
    SimTruth,
    TransformedPanel,
    TransformSpec,
)
from attestation_forecast.storage import write_json_artifact

logger = logging.getLogger(__name__)

# SEIR-like process: incubation 5.2 days, infectious period 10 days, R0 1.3
_SIGMA = 1.0 / 5.2
_RECOVERY = 1.0 / 10.0
_R0 = 1.3


def make_generator(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for substream ``stream`` of ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def unit_ids(n_units: int):
    return [f"H{i + 1}" for i in range(n_units)]


def _shocks(rng: np.random.Generator, n_units: int, length: int, weight: float) -> np.ndarray:
    common = rng.standard_normal(length)
    own = rng.standard_normal((n_units, length))
    return np.sqrt(weight) * common[None, :] + np.sqrt(1.0 - weight) * own


def _log_random_walk(cfg: SimConfig, rng: np.random.Generator, length: int) -> np.ndarray:
    steps = cfg.prevalence_drift + cfg.prevalence_volatility * _shocks(rng, cfg.n_units, length, cfg.common_shock_weight)
    steps[:, 0] = 0.0
    log_prev = np.log(cfg.prevalence_init) + np.cumsum(steps, axis=1)
    return np.minimum(np.exp(log_prev), 1.0)


def _seir_like(cfg: SimConfig, rng: np.random.Generator, length: int) -> np.ndarray:
    steps = cfg.prevalence_drift + cfg.prevalence_volatility * _shocks(rng, cfg.n_units, length, cfg.common_shock_weight)
    transmission = _R0 * _RECOVERY * np.exp(np.cumsum(steps, axis=1))
    infectious = np.full(cfg.n_units, cfg.prevalence_init)
    exposed = infectious / 2.0
    susceptible = 1.0 - infectious - exposed
    prevalence = np.empty((cfg.n_units, length))
    for t in range(length):
        prevalence[:, t] = infectious
        infections = np.minimum(transmission[:, t] * susceptible * infectious, susceptible)
        susceptible = susceptible - infections
        exposed, infectious = (
            exposed + infections - _SIGMA * exposed,
            infectious + _SIGMA * exposed - _RECOVERY * infectious,
        )
    return np.clip(prevalence, 0.0, 1.0)


def simulate_panel(cfg: SimConfig) -> Tuple[PanelDataset, SimTruth]:
    """
    Generate a daily panel and the parameters that produced it.

    The first ``cfg.burn_in`` days are simulated and discarded so the census
    recursion starts near its stationary level.
    """
    rng = make_generator(cfg.seed, 0)
    n, length = cfg.n_units, cfg.burn_in + cfg.n_days
    first_day = cfg.start_date - timedelta(days=cfg.burn_in)
    days = [first_day + timedelta(days=t) for t in range(length)]

    if cfg.infection_process == "seir_like":
        prevalence = _seir_like(cfg, rng, length)
    else:
        prevalence = _log_random_walk(cfg, rng, length)

    bias = cfg.bias
    weekend = np.array([d.isoweekday() >= 6 for d in days])
    onsite_prob = np.full(length, cfg.onsite_prob)
    report_prob = cfg.symptom_report_prob
    if bias is not None:
        onsite_prob = np.where(weekend, onsite_prob * (1.0 - bias.weekday_dropout), onsite_prob)
        report_prob *= 1.0 - bias.underreport

    onsite = rng.binomial(cfg.employees_per_unit, np.broadcast_to(onsite_prob, (n, length)))
    symptomatic = rng.binomial(onsite, np.clip(prevalence * report_prob, 0.0, 1.0))

    alpha = np.asarray(cfg.per_unit("alpha_true"))
    gamma = np.asarray(cfg.per_unit("gamma_true"))
    beta = np.asarray(cfg.per_unit("beta_true"))
    lag = cfg.true_lag
    log_x = np.log1p(symptomatic)
    noise = cfg.noise_sd * rng.standard_normal((n, length))

    census = np.empty((n, length))
    level = (alpha + beta * log_x[:, 0]) / (1.0 - gamma)
    census[:, 0] = np.maximum(0.0, np.rint(np.expm1(level)))
    for t in range(1, length):
        driver = log_x[:, max(t - lag, 0)]
        log_y = alpha + gamma * np.log1p(census[:, t - 1]) + beta * driver + noise[:, t]
        census[:, t] = np.maximum(0.0, np.rint(np.expm1(log_y)))

    keep = slice(cfg.burn_in, length)
    panel = PanelDataset(
        units=unit_ids(n),
        calendar=days[keep],
        y=census[:, keep].tolist(),
        x=symptomatic[:, keep].astype(float).tolist(),
        onsite=onsite[:, keep].astype(float).tolist(),
    )
    truth = SimTruth(
        seed=cfg.seed,
        infection_process=cfg.infection_process,
        true_lag=lag,
        alpha=alpha.tolist(),
        gamma=gamma.tolist(),
        beta=beta.tolist(),
        prevalence=prevalence[:, keep].tolist(),
    )
    logger.debug(f"Simulated {n} units x {cfg.n_days} days (seed={cfg.seed})")
    return panel, truth


def simulate_arx_panel(
    rng: np.random.Generator,
    n_units: int,
    n_periods: int,
    gamma: Sequence[float],
    beta: Sequence[float],
    alpha: float = 0.0,
    noise_sd: float = 1.0,
    x_ar: float = 0.0,
    burn_in: int = 100,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gaussian AR-X panel on the transformed scale.

    y_t = alpha + sum_k gamma_k y_{t-k} + sum_k beta_k x_{t-k} + e_t with
    x_t = x_ar x_{t-1} + u_t. ``gamma`` and ``beta`` hold lags 1..p.

    Returns:
        Tuple of (y, x), each n_units x n_periods
    """
    gamma = np.asarray(gamma, dtype=float)
    beta = np.asarray(beta, dtype=float)
    length = burn_in + n_periods
    innovations = rng.standard_normal((n_units, length))
    noise = noise_sd * rng.standard_normal((n_units, length))

    x = np.zeros((n_units, length))
    y = np.zeros((n_units, length))
    for t in range(length):
        x[:, t] = (x_ar * x[:, t - 1] if t else 0.0) + innovations[:, t]
        value = alpha + noise[:, t]
        for k, g in enumerate(gamma, start=1):
            if t >= k:
                value = value + g * y[:, t - k]
        for k, b in enumerate(beta, start=1):
            if t >= k:
                value = value + b * x[:, t - k]
        y[:, t] = value
    return y[:, burn_in:], x[:, burn_in:]


def arx_transformed_panel(
    y: np.ndarray,
    x: np.ndarray,
    start: date = date(2020, 4, 2),
) -> TransformedPanel:
    """Wrap transformed-scale arrays as a TransformedPanel (window 1, offset 0)."""
    n_units, n_periods = y.shape
    base = PanelDataset(
        units=unit_ids(n_units),
        calendar=[start + timedelta(days=t) for t in range(n_periods)],
        y=np.exp(y).tolist(),
        x=np.exp(x).tolist(),
    )
    return TransformedPanel(
        base=base,
        y_tilde=y.tolist(),
        x_tilde=x.tolist(),
        spec=TransformSpec(ma_window=1, log_offset=0.0),
        t_offset=0,
    )


def _zip_codes(unit_index: int, count: int):
    return [f"{10000 + 100 * unit_index + j:05d}" for j in range(count)]


def write_simulated_inputs(
    panel: PanelDataset,
    truth: SimTruth,
    cfg: SimConfig,
    output_dir: Path,
) -> Dict[str, Path]:
    """
    Emit attestations.csv, census.csv and zipmap.csv (plus truth.json) for
    a simulated panel.

    Each unit's daily on-site count is split across its zips in proportion
    to zip population, and its symptomatic count is spread over those
    on-site employees without replacement, so n_symptomatic <= n_onsite
    holds for every row.
    """
    if panel.onsite is None:
        raise ValueError("simulated panel must carry on-site counts")
    rng = make_generator(cfg.seed, 1)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    zip_rows, att_rows, census_rows = [], [], []
    for i, unit in enumerate(panel.units):
        zips = _zip_codes(i, cfg.zips_per_unit)
        population = rng.integers(20_000, 60_000, size=len(zips))
        share = rng.uniform(0.3, 1.0, size=len(zips))
        weights = population / population.sum()
        zip_rows += [(z, unit, int(p), round(float(s), 4)) for z, p, s in zip(zips, population, share)]

        for t, day in enumerate(panel.calendar):
            onsite = rng.multinomial(int(panel.onsite[i][t]), weights)
            symptomatic = rng.multivariate_hypergeometric(onsite, int(panel.x[i][t]))
            att_rows += [
                (day.isoformat(), z, int(o), int(s)) for z, o, s in zip(zips, onsite, symptomatic)
            ]
            census_rows.append((day.isoformat(), unit, int(panel.y[i][t])))

    paths = {
        "attestations": output_dir / "attestations.csv",
        "census": output_dir / "census.csv",
        "zipmap": output_dir / "zipmap.csv",
        "truth": output_dir / "truth.json",
    }
    pd.DataFrame(att_rows, columns=["date", "zip", "n_onsite", "n_symptomatic"]).sort_values(
        ["date", "zip"], kind="stable"
    ).to_csv(paths["attestations"], index=False, lineterminator="\n")
    pd.DataFrame(census_rows, columns=["date", "unit_id", "census"]).sort_values(
        ["date", "unit_id"], kind="stable"
    ).to_csv(paths["census"], index=False, lineterminator="\n")
    pd.DataFrame(zip_rows, columns=["zip", "unit_id", "population", "market_share_weight"]).to_csv(
        paths["zipmap"], index=False, lineterminator="\n"
    )
    write_json_artifact(paths["truth"], "sim_truth", truth)
    logger.info(f"Wrote simulated inputs to {output_dir}")
    return paths


def sim_config_with(cfg: Optional[SimConfig] = None, **updates) -> SimConfig:
    """Copy of ``cfg`` (or the default config) with validated updates."""
    base = (cfg or SimConfig()).model_dump()
    base.update(updates)
    return SimConfig(**base)
