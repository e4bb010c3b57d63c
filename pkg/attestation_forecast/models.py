"""
Core data models for the attestation forecasting pipeline.

All models use Pydantic for validation and JSON serialization. Numeric
matrices are stored as nested lists (row per unit) so every artifact is
plain JSON; numpy views are available through the ``*_array`` helpers.
"""
import datetime as dt
import math
import re
from datetime import date, timedelta
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

SCHEMA_VERSION = "1.0"

_ZIP_PATTERN = re.compile(r"^\d{5}$")

# Row label of network totals in reports; not a valid unit id
NETWORK_ID = "network"


class Frequency(str, Enum):
    """Sampling frequency of a panel calendar."""
    DAILY = "daily"
    WEEKLY = "weekly"

    @property
    def step(self) -> timedelta:
        return timedelta(days=1) if self is Frequency.DAILY else timedelta(days=7)


def natural_key(unit_id: str) -> Tuple:
    """Sort key that orders H2 before H10."""
    return tuple(int(part) if part.isdigit() else part for part in re.split(r"(\d+)", unit_id))


def check_unit_id(unit_id: str) -> str:
    """Strip a unit id and reject empty or reserved ids."""
    unit_id = unit_id.strip() if unit_id else ""
    if not unit_id:
        raise ValueError("unit_id cannot be empty")
    if unit_id.lower() == NETWORK_ID:
        raise ValueError(f"unit_id {unit_id!r} is reserved for network totals")
    return unit_id


# ---------------------------------------------------------------------------
# Ingest
# ---------------------------------------------------------------------------

class ZipMapEntry(BaseModel):
    """One zip code assigned to a hospital service area."""
    zip: str = Field(..., description="5-digit zip code")
    unit_id: str = Field(..., description="Hospital (unit) identifier")
    population: int = Field(..., ge=0, description="Zip population")
    market_share_weight: float = Field(..., ge=0.0, le=1.0, description="Hospital market share in this zip")

    @field_validator("zip")
    @classmethod
    def validate_zip(cls, v):
        if not _ZIP_PATTERN.match(v):
            raise ValueError(f"zip must be a 5-character digit string, got {v!r}")
        return v

    @field_validator("unit_id")
    @classmethod
    def validate_unit_id(cls, v):
        return check_unit_id(v)


class ZipMap(BaseModel):
    """Zip code to service-area assignment."""
    entries: List[ZipMapEntry] = Field(default_factory=list, description="Zip assignments")

    @model_validator(mode="after")
    def validate_unique_zips(self):
        seen = set()
        duplicates = set()
        for entry in self.entries:
            if entry.zip in seen:
                duplicates.add(entry.zip)
            seen.add(entry.zip)
        if duplicates:
            raise ValueError(f"duplicate zip(s): {', '.join(sorted(duplicates))}")
        return self

    def lookup(self) -> Dict[str, str]:
        """Map zip -> unit_id."""
        return {entry.zip: entry.unit_id for entry in self.entries}

    def units(self) -> List[str]:
        return sorted({entry.unit_id for entry in self.entries}, key=natural_key)

    def weighted_population(self, unit_id: str) -> float:
        """Service-area population weighted by the unit's market share."""
        return float(sum(
            e.population * e.market_share_weight for e in self.entries if e.unit_id == unit_id
        ))


class RawAttestationRecord(BaseModel):
    """Daily symptom attestations aggregated by employee home zip."""
    date: dt.date
    zip: str
    n_onsite: int = Field(..., ge=0, description="Employees on-site")
    n_symptomatic: int = Field(..., ge=0, description="Employees reporting at least one symptom")

    @field_validator("zip")
    @classmethod
    def validate_zip(cls, v):
        if not _ZIP_PATTERN.match(v):
            raise ValueError(f"zip must be a 5-character digit string, got {v!r}")
        return v

    @model_validator(mode="after")
    def validate_counts(self):
        if self.n_symptomatic > self.n_onsite:
            raise ValueError(
                f"n_symptomatic ({self.n_symptomatic}) exceeds n_onsite ({self.n_onsite})"
            )
        return self


class RawCensusRecord(BaseModel):
    """Daily COVID-19 inpatient census of one hospital."""
    date: dt.date
    unit_id: str
    census: int = Field(..., ge=0)

    @field_validator("unit_id")
    @classmethod
    def validate_unit_id(cls, v):
        return check_unit_id(v)


class RawCaseRecord(BaseModel):
    """Weekly positive-case count for one zip code or one service area."""
    date: dt.date = Field(..., description="Any day of the reporting week")
    zip: Optional[str] = Field(None, description="5-digit zip code")
    unit_id: Optional[str] = Field(None, description="Hospital (unit) identifier")
    cases: int = Field(..., ge=0)

    @model_validator(mode="after")
    def validate_key(self):
        if (self.zip is None) == (self.unit_id is None):
            raise ValueError("exactly one of zip and unit_id must be set")
        if self.zip is not None and not _ZIP_PATTERN.match(self.zip):
            raise ValueError(f"zip must be a 5-character digit string, got {self.zip!r}")
        if self.unit_id is not None:
            self.unit_id = check_unit_id(self.unit_id)
        return self

    @property
    def week(self) -> dt.date:
        """Monday of the record's ISO week."""
        return self.date - timedelta(days=self.date.weekday())


class PanelDataset(BaseModel):
    """Aligned per-unit target (y) and indicator (x) series on a common calendar."""
    units: List[str] = Field(..., min_length=1, description="Ordered unit ids")
    calendar: List[date] = Field(..., min_length=1, description="Consecutive periods")
    y: List[List[float]] = Field(..., description="N x T target counts")
    x: List[List[float]] = Field(..., description="N x T indicator counts")
    frequency: Frequency = Frequency.DAILY
    onsite: Optional[List[List[float]]] = Field(None, description="N x T on-site attestation counts")

    @model_validator(mode="after")
    def validate_shape(self):
        n, t = len(self.units), len(self.calendar)
        if len(set(self.units)) != n:
            raise ValueError("unit ids must be unique")
        for unit in self.units:
            check_unit_id(unit)
        step = self.frequency.step
        for prev, cur in zip(self.calendar, self.calendar[1:]):
            if cur - prev != step:
                raise ValueError(f"calendar gap between {prev} and {cur}")
        matrices = [("y", self.y), ("x", self.x)]
        if self.onsite is not None:
            matrices.append(("onsite", self.onsite))
        for name, matrix in matrices:
            if len(matrix) != n or any(len(row) != t for row in matrix):
                raise ValueError(f"{name} must be {n} x {t}")
            for row in matrix:
                for value in row:
                    if not math.isfinite(value) or value < 0:
                        raise ValueError(f"{name} values must be finite and nonnegative")
        return self

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_periods(self) -> int:
        return len(self.calendar)

    def y_array(self) -> np.ndarray:
        return np.asarray(self.y, dtype=float)

    def x_array(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)

    def slice_periods(self, start: int, stop: Optional[int] = None) -> "PanelDataset":
        """Return the sub-panel covering periods [start, stop)."""
        return PanelDataset(
            units=list(self.units),
            calendar=self.calendar[start:stop],
            y=[row[start:stop] for row in self.y],
            x=[row[start:stop] for row in self.x],
            frequency=self.frequency,
            onsite=None if self.onsite is None else [row[start:stop] for row in self.onsite],
        )


# ---------------------------------------------------------------------------
# Preprocess
# ---------------------------------------------------------------------------

class TransformSpec(BaseModel):
    """Smoothing and log-transform settings."""
    ma_window: int = Field(7, ge=1, description="Trailing moving-average window (periods)")
    log_offset: float = Field(1.0, ge=0.0, description="Offset added before the natural log")
    smooth_target: bool = Field(False, description="Also smooth the target series")


class TransformedPanel(BaseModel):
    """Panel on the smoothed-log scale."""
    base: PanelDataset
    y_tilde: List[List[float]]
    x_tilde: List[List[float]]
    spec: TransformSpec
    t_offset: int = Field(..., ge=0, description="Periods consumed by the moving-average warm-up")

    @model_validator(mode="after")
    def validate_lengths(self):
        expected = self.base.n_periods - self.spec.ma_window + 1
        for name, matrix in (("y_tilde", self.y_tilde), ("x_tilde", self.x_tilde)):
            if len(matrix) != self.base.n_units or any(len(row) != expected for row in matrix):
                raise ValueError(f"{name} must be {self.base.n_units} x {expected}")
            if not np.all(np.isfinite(np.asarray(matrix, dtype=float))):
                raise ValueError(f"{name} must be finite")
        if self.t_offset != self.spec.ma_window - 1:
            raise ValueError("t_offset must equal ma_window - 1")
        return self

    @property
    def units(self) -> List[str]:
        return self.base.units

    @property
    def n_periods(self) -> int:
        return self.base.n_periods - self.t_offset

    @property
    def calendar(self) -> List[date]:
        return self.base.calendar[self.t_offset:]

    def y_array(self) -> np.ndarray:
        return np.asarray(self.y_tilde, dtype=float)

    def x_array(self) -> np.ndarray:
        return np.asarray(self.x_tilde, dtype=float)


# ---------------------------------------------------------------------------
# Linear model
# ---------------------------------------------------------------------------

class ModelSpec(BaseModel):
    """Lag order and inference settings shared by all units."""
    K: int = Field(..., ge=1, description="Lag order for both the y and x blocks")
    include_intercept: bool = Field(True, description="Include a unit-specific intercept")
    ci_level: float = Field(0.95, gt=0.0, lt=1.0, description="Confidence level")
    two_tailed: bool = Field(True, description="Two-tailed tests")

    @property
    def n_params(self) -> int:
        return 2 * self.K + int(self.include_intercept)

    def term_names(self) -> List[str]:
        names = ["const"] if self.include_intercept else []
        names += [f"y.L{k}" for k in range(1, self.K + 1)]
        names += [f"x.L{k}" for k in range(1, self.K + 1)]
        return names


class UnitFit(BaseModel):
    """One unit's lagged OLS fit."""
    unit_id: str
    K: int = Field(..., ge=1)
    alpha: float = Field(0.0, description="Intercept estimate")
    gamma: List[float] = Field(..., description="Own-lag coefficients, lag 1..K")
    beta: List[float] = Field(..., description="Indicator-lag coefficients, lag 1..K")
    include_intercept: bool = True
    cov: List[List[float]] = Field(..., description="Coefficient covariance")
    rss_u: float = Field(..., ge=0.0)
    rss_r: float = Field(..., ge=0.0)
    sigma2: float = Field(..., ge=0.0)
    T_eff: int = Field(..., ge=1)
    wald: float = Field(..., ge=0.0)

    @model_validator(mode="after")
    def validate_fit(self):
        if len(self.gamma) != self.K or len(self.beta) != self.K:
            raise ValueError("gamma and beta must have K entries")
        p = 2 * self.K + int(self.include_intercept)
        if len(self.cov) != p or any(len(row) != p for row in self.cov):
            raise ValueError(f"cov must be {p} x {p}")
        if self.rss_r < self.rss_u:
            raise ValueError("restricted RSS must not be below unrestricted RSS")
        return self

    @property
    def n_params(self) -> int:
        return 2 * self.K + int(self.include_intercept)

    def coefficients(self) -> np.ndarray:
        """Coefficient vector ordered [const?, gamma_1..K, beta_1..K]."""
        head = [self.alpha] if self.include_intercept else []
        return np.asarray(head + list(self.gamma) + list(self.beta), dtype=float)

    def cov_array(self) -> np.ndarray:
        return np.asarray(self.cov, dtype=float)

    def beta_index(self, lag: int) -> int:
        """Coefficient index of the indicator lag ``lag`` (1-based)."""
        if not 1 <= lag <= self.K:
            raise IndexError(f"lag {lag} outside 1..{self.K}")
        return int(self.include_intercept) + self.K + lag - 1


class LagScore(BaseModel):
    """BIC of one candidate lag order."""
    K: int
    bic: float


class PanelFit(BaseModel):
    """Heterogeneous-coefficient fits for every unit under one lag order."""
    spec: ModelSpec
    fits: List[UnitFit] = Field(..., min_length=1)
    bic_total: float
    loglik_total: float
    n_obs_total: int
    bic_curve: List[LagScore] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_cover(self):
        ids = [fit.unit_id for fit in self.fits]
        if len(set(ids)) != len(ids):
            raise ValueError("each unit must be fitted exactly once")
        if self.n_obs_total != sum(fit.T_eff for fit in self.fits):
            raise ValueError("n_obs_total must equal the sum of T_eff")
        return self

    def fit_for(self, unit_id: str) -> UnitFit:
        for fit in self.fits:
            if fit.unit_id == unit_id:
                return fit
        raise KeyError(unit_id)


class CoefficientRow(BaseModel):
    """One coefficient with its inference."""
    unit_id: str
    term: str
    estimate: float
    std_error: float
    t_stat: Optional[float]
    p_value: Optional[float]
    ci_low: float
    ci_high: float


# ---------------------------------------------------------------------------
# Granger
# ---------------------------------------------------------------------------

class UnitWald(BaseModel):
    unit_id: str
    wald: float


class GrangerResult(BaseModel):
    """Panel Granger non-causality test result."""
    K: int
    N: int
    T_eff: int
    w_bar: float
    z_asymptotic: float
    z_fixed_t: float
    p_asymptotic: float = Field(..., ge=0.0, le=1.0)
    p_fixed_t: float = Field(..., ge=0.0, le=1.0)
    per_unit_wald: List[UnitWald]
    alpha: float = Field(0.05, gt=0.0, lt=1.0)
    reject: bool
    frequency: Frequency = Frequency.DAILY

    @model_validator(mode="after")
    def validate_decision(self):
        if self.reject != (self.p_fixed_t <= self.alpha):
            raise ValueError("reject must equal p_fixed_t <= alpha")
        return self

    def summary(self) -> str:
        """One-page text report."""
        lines = []
        lines.append("=" * 60)
        lines.append("Panel Granger non-causality test (heterogeneous panel)")
        lines.append("=" * 60)
        lines.append("H0: lagged indicator adds no information for any unit")
        lines.append(f"Frequency:            {self.frequency.value}")
        lines.append(f"Units (N):            {self.N}")
        lines.append(f"Effective length:     {self.T_eff}")
        lines.append(f"Lags (K):             {self.K}")
        lines.append("")
        lines.append(f"W-bar:                {self.w_bar:>12.4f}")
        lines.append(f"Z-bar (asymptotic):   {self.z_asymptotic:>12.4f}   p = {self.p_asymptotic:.4g}")
        lines.append(f"Z-tilde (fixed T):    {self.z_fixed_t:>12.4f}   p = {self.p_fixed_t:.4g}")
        lines.append("")
        verdict = "reject H0" if self.reject else "cannot reject H0"
        lines.append(f"Decision (Z-tilde, two-tailed, alpha={self.alpha}): {verdict}")
        lines.append("Note: no cross-sectional dependence correction is applied.")
        lines.append("")
        lines.append(f"{'unit':<12}{'W_i':>12}")
        for row in self.per_unit_wald:
            lines.append(f"{row.unit_id:<12}{row.wald:>12.4f}")
        lines.append("=" * 60)
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Forecast
# ---------------------------------------------------------------------------

class ExogenousPolicy(BaseModel):
    """How indicator lags beyond the last observation are filled."""
    kind: Literal["hold_last", "provided"] = "hold_last"
    provided_paths: Optional[List[List[float]]] = Field(
        None, description="N x h indicator paths on the transformed scale"
    )

    @model_validator(mode="after")
    def validate_paths(self):
        if (self.kind == "provided") != (self.provided_paths is not None):
            raise ValueError("provided_paths must be given iff kind == 'provided'")
        return self


class ForecastSet(BaseModel):
    """Per-unit and network census forecasts."""
    origin: date = Field(..., description="Last training period")
    horizon: int = Field(..., ge=1)
    units: List[str]
    dates: List[date]
    per_unit: List[List[float]] = Field(..., description="N x h counts, raw scale")
    network: List[float]
    transformed_scale: List[List[float]] = Field(..., description="N x h smoothed-log predictions")
    log_offset: float = 1.0
    method: Literal["one_shot", "rolling_origin", "persistence"] = "one_shot"

    @model_validator(mode="after")
    def validate_sums(self):
        if len(self.dates) != self.horizon or len(self.network) != self.horizon:
            raise ValueError("dates and network must have horizon entries")
        for row in self.per_unit:
            if len(row) != self.horizon or any(v < 0 for v in row):
                raise ValueError("per_unit rows must have horizon nonnegative entries")
        totals = np.asarray(self.per_unit, dtype=float).sum(axis=0)
        if not np.allclose(totals, self.network, rtol=1e-12, atol=1e-9):
            raise ValueError("network must equal the per-unit sum at every step")
        return self

    def per_unit_array(self) -> np.ndarray:
        return np.asarray(self.per_unit, dtype=float)


class DoublingEffect(BaseModel):
    """Effect of doubling the indicator on the target, for one unit."""
    unit_id: str
    lag: int
    beta: float
    ci_low: float
    ci_high: float
    exact_effect: float = Field(..., description="2**beta - 1")
    approx_effect: float = Field(..., description="beta read directly as a proportional change")
    exact_ci_low: float
    exact_ci_high: float


# ---------------------------------------------------------------------------
# Evaluate
# ---------------------------------------------------------------------------

class UnitScore(BaseModel):
    unit_id: str
    mae: float = Field(..., ge=0.0)
    wmape: Optional[float] = Field(None, ge=0.0, description="None when actuals sum to zero")


class EvalReport(BaseModel):
    """Forecast accuracy per unit and for the network."""
    per_unit: List[UnitScore]
    network: UnitScore
    horizon: int
    origin: date


class BaselineComparison(BaseModel):
    model: EvalReport
    baseline: EvalReport
    model_beats_baseline: bool


class UnitDescription(BaseModel):
    unit_id: str
    census_mean: float
    census_sd: float = Field(..., ge=0.0)
    symptoms_mean: float
    symptoms_sd: float = Field(..., ge=0.0)
    employee_share_of_population: Optional[float] = Field(None, ge=0.0, le=1.0)


class PanelDescription(BaseModel):
    """Descriptive statistics per unit and for the network."""
    per_unit: List[UnitDescription]
    network: UnitDescription
    sd_denominator: Literal["n"] = "n"
    n_periods: int


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

class BiasConfig(BaseModel):
    """Reporting bias injected into simulated attestations."""
    weekday_dropout: float = Field(0.0, ge=0.0, le=1.0, description="Share of attesters lost on weekends")
    underreport: float = Field(0.0, ge=0.0, le=1.0, description="Share of symptomatic employees not reporting")


PerUnit = Union[float, List[float]]


class SimConfig(BaseModel):
    """Synthetic attestation/census panel generator settings."""
    n_units: int = Field(10, ge=1)
    n_days: int = Field(217, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    infection_process: Literal["log_random_walk", "seir_like"] = "log_random_walk"
    true_lag: int = Field(7, ge=1)
    beta_true: PerUnit = 0.5
    gamma_true: PerUnit = 0.5
    alpha_true: PerUnit = 1.5
    noise_sd: float = Field(0.05, ge=0.0)
    employees_per_unit: int = Field(1000, ge=1)
    symptom_report_prob: float = Field(0.5, ge=0.0, le=1.0)
    onsite_prob: float = Field(0.8, ge=0.0, le=1.0)
    prevalence_init: float = Field(0.03, gt=0.0, le=1.0)
    prevalence_drift: float = Field(0.0, description="Daily drift of log-prevalence")
    prevalence_volatility: float = Field(0.05, ge=0.0)
    common_shock_weight: float = Field(0.5, ge=0.0, le=1.0, description="Share of shocks common to all units")
    bias: Optional[BiasConfig] = None
    start_date: date = date(2020, 4, 2)
    zips_per_unit: int = Field(3, ge=1)
    burn_in: int = Field(50, ge=0)

    @model_validator(mode="after")
    def validate_per_unit(self):
        for name in ("beta_true", "gamma_true", "alpha_true"):
            value = getattr(self, name)
            if isinstance(value, list) and len(value) != self.n_units:
                raise ValueError(f"{name} must have n_units entries")
        if any(abs(g) >= 1 for g in self.per_unit("gamma_true")):
            raise ValueError("gamma_true must satisfy |gamma| < 1")
        return self

    def per_unit(self, name: str) -> List[float]:
        value = getattr(self, name)
        if isinstance(value, list):
            return [float(v) for v in value]
        return [float(value)] * self.n_units


class SimTruth(BaseModel):
    """Generating parameters and latent states of a simulated panel."""
    seed: int
    infection_process: str
    true_lag: int
    alpha: List[float]
    gamma: List[float]
    beta: List[float]
    prevalence: List[List[float]] = Field(..., description="N x T latent prevalence")


class SuiteConfig(BaseModel):
    """Oracle suite settings; replications of 0 skip an experiment."""
    seed: int = 20201105
    jobs: int = Field(1, ge=1)
    size_replications: int = Field(1000, ge=0)
    power_replications: int = Field(200, ge=0)
    lag_replications: int = Field(200, ge=0)
    coefficient_replications: int = Field(300, ge=0)
    forecast_replications: int = Field(100, ge=0)
    bias_replications: int = Field(0, ge=0)
    bias_dropouts: List[float] = Field(default_factory=lambda: [0.0, 0.3])
    alpha: float = Field(0.05, gt=0.0, lt=1.0)


class ExperimentResult(BaseModel):
    name: str
    replications: int
    metrics: Dict[str, float] = Field(default_factory=dict)
    thresholds: Dict[str, str] = Field(default_factory=dict)
    passed: Optional[bool] = Field(None, description="None for report-only experiments")


class SuiteReport(BaseModel):
    seed: int
    experiments: List[ExperimentResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed is not False for e in self.experiments)


# ---------------------------------------------------------------------------
# Run configuration and results
# ---------------------------------------------------------------------------

class RunConfig(BaseModel):
    """Configuration for a pipeline run."""
    attestations_path: Optional[str] = Field(None, description="attestations.csv")
    census_path: Optional[str] = Field(None, description="census.csv")
    cases_path: Optional[str] = Field(None, description="Weekly cases CSV (date,zip|unit_id,cases) replacing census")
    zipmap_path: Optional[str] = Field(None, description="zipmap.csv")
    output_dir: str = Field("output", description="Directory for artifacts")
    frequency: Frequency = Field(Frequency.DAILY, description="daily, or weekly (ISO weeks; ma_window is then 1)")
    ma_window: int = Field(7, ge=1)
    log_offset: float = Field(1.0, ge=0.0)
    smooth_target: bool = Field(False, description="Also apply the moving average to the target series")
    k_max: int = Field(14, ge=1)
    fixed_k: Optional[int] = Field(None, ge=1, description="Skip BIC selection and use this K")
    holdout_len: int = Field(7, ge=1)
    horizon: int = Field(7, ge=1)
    exogenous_policy: Literal["hold_last", "provided"] = "hold_last"
    exogenous_path: Optional[str] = Field(None, description="CSV unit_id,step,value for provided policy")
    ci_level: float = Field(0.95, gt=0.0, lt=1.0)
    alpha: float = Field(0.05, gt=0.0, lt=1.0)
    allow_unmapped: bool = False
    rolling_origin: bool = False
    plot_data: bool = False
    timestamps: bool = False
    jobs: int = Field(1, ge=1)
    seed: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def validate_policy(self):
        if self.exogenous_policy == "provided" and not self.exogenous_path:
            raise ValueError("exogenous_path is required when exogenous_policy = provided")
        if self.cases_path and self.frequency is not Frequency.WEEKLY:
            raise ValueError("cases_path holds weekly counts and requires frequency = weekly")
        return self

    def transform_spec(self) -> TransformSpec:
        return TransformSpec(
            ma_window=self.ma_window,
            log_offset=self.log_offset,
            smooth_target=self.smooth_target,
        )


class PipelineResult(BaseModel):
    """Summary of a pipeline execution."""
    n_units: int = 0
    n_periods: int = 0
    k_opt: Optional[int] = None
    granger_reject: Optional[bool] = None
    p_fixed_t: Optional[float] = None
    network_mae: Optional[float] = None
    network_wmape: Optional[float] = None
    artifacts: List[str] = Field(default_factory=list)
    errors: List[str] = Field(default_factory=list)
