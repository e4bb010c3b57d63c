"""
Ingest module - Load raw attestation, census and zip-map CSVs.

Validates every record, maps employee home zips to hospital service areas
and emits an aligned PanelDataset. All functions are pure: inputs are never
modified and record order does not affect the result.
"""
import logging
from datetime import date, timedelta
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Type, TypeVar

import pandas as pd
from pydantic import BaseModel, ValidationError

from attestation_forecast.errors import (
    AlignmentError,
    CalendarGapError,
    DataError,
    DuplicateZipError,
    EmptyIntersectionError,
    MissingInputError,
    ParseError,
    UnknownUnitError,
    UnmappedZipError,
)
from attestation_forecast.models import (
    Frequency,
    PanelDataset,
    RawAttestationRecord,
    RawCaseRecord,
    RawCensusRecord,
    ZipMap,
    ZipMapEntry,
    natural_key,
)
from attestation_forecast.preprocess import aggregate_weekly

logger = logging.getLogger(__name__)

ATTESTATION_COLUMNS = ["date", "zip", "n_onsite", "n_symptomatic"]
CENSUS_COLUMNS = ["date", "unit_id", "census"]
CASE_COLUMNS = ["date", "cases"]
CASE_KEYS = ["zip", "unit_id"]
ZIPMAP_COLUMNS = ["zip", "unit_id", "population", "market_share_weight"]
PANEL_COLUMNS = ["unit_id", "date", "y", "x"]

RecordT = TypeVar("RecordT", bound=BaseModel)


def _handle_error(policy: str, message: str, exc: Optional[DataError] = None) -> None:
    """
    Handle a recoverable data problem based on policy.

    policy: "fail" raises ``exc``, "skip" logs a warning and continues.
    """
    if policy == "fail":
        if exc is not None:
            raise exc
        raise DataError(message)
    logger.warning(message)


def read_csv_table(path: Path, columns: Sequence[str], optional: Sequence[str] = ()) -> pd.DataFrame:
    """
    Read a UTF-8 CSV with a required header, keeping every cell as text.

    Columns in ``optional`` are kept when the file has them.

    Raises:
        MissingInputError: If the file does not exist
        ParseError: If the file cannot be parsed or lacks a required column
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(str(path))
    if not path.is_file():
        raise ParseError(f"CSV path is not a file: {path}")

    try:
        frame = pd.read_csv(path, dtype=str, encoding="utf-8", keep_default_na=False)
    except Exception as exc:
        raise ParseError(f"Failed to read CSV {path}: {exc}") from exc

    frame.columns = [str(c).strip() for c in frame.columns]
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ParseError(f"{path}: missing column(s) {', '.join(missing)}")
    return frame[list(columns) + [c for c in optional if c in frame.columns]]


def _parse_rows(
    frame: pd.DataFrame,
    model: Type[RecordT],
    path: Path,
    convert: Optional[Callable[[dict], dict]] = None,
) -> List[RecordT]:
    records: List[RecordT] = []
    for row_number, row in enumerate(frame.to_dict(orient="records"), start=2):
        data = {key: str(value).strip() for key, value in row.items()}
        if convert is not None:
            data = convert(data)
        try:
            records.append(model(**data))
        except ValidationError as exc:
            errors = "; ".join(err["msg"] for err in exc.errors())
            raise ParseError(f"{path}:{row_number}: malformed row: {errors}") from exc
    return records


def load_zip_map(path: Path, units: Optional[Iterable[str]] = None) -> ZipMap:
    """
    Load and validate zipmap.csv (zip,unit_id,population,market_share_weight).

    Args:
        path: CSV path
        units: Optional unit registry every referenced unit must belong to

    Raises:
        ParseError, DuplicateZipError, UnknownUnitError
    """
    frame = read_csv_table(path, ZIPMAP_COLUMNS)
    entries = _parse_rows(frame, ZipMapEntry, Path(path))

    counts = pd.Series([e.zip for e in entries], dtype=str).value_counts()
    duplicates = sorted(counts[counts > 1].index)
    if duplicates:
        raise DuplicateZipError(f"{path}: duplicate zip(s) {', '.join(duplicates)}")

    if units is not None:
        registry = set(units)
        unknown = sorted({e.unit_id for e in entries} - registry, key=natural_key)
        if unknown:
            raise UnknownUnitError(f"{path}: unknown unit(s) {', '.join(unknown)}")

    zipmap = ZipMap(entries=entries)
    logger.info(f"Loaded zip map with {len(entries)} zips across {len(zipmap.units())} units")
    return zipmap


def load_attestations(path: Path) -> List[RawAttestationRecord]:
    """Load attestations.csv (date,zip,n_onsite,n_symptomatic)."""
    frame = read_csv_table(path, ATTESTATION_COLUMNS)
    records = _parse_rows(frame, RawAttestationRecord, Path(path))
    logger.info(f"Loaded {len(records)} attestation records from {path}")
    return records


def load_census(path: Path) -> List[RawCensusRecord]:
    """Load census.csv (date,unit_id,census)."""
    frame = read_csv_table(path, CENSUS_COLUMNS)
    records = _parse_rows(frame, RawCensusRecord, Path(path))
    logger.info(f"Loaded {len(records)} census records from {path}")
    return records


def _unmapped(zips: Iterable[str], lookup: Dict[str, str], allow_unmapped: bool, source: str) -> None:
    unmapped = sorted({z for z in zips if z not in lookup})
    if unmapped:
        policy = "skip" if allow_unmapped else "fail"
        _handle_error(
            policy,
            f"Excluding {len(unmapped)} unmapped {source} zip(s): {', '.join(unmapped)}",
            UnmappedZipError(unmapped),
        )


def _mapped_attestations(
    attestations: List[RawAttestationRecord],
    lookup: Dict[str, str],
    allow_unmapped: bool,
) -> pd.DataFrame:
    """Attestation rows keyed by unit (date, unit_id, n_onsite, n_symptomatic)."""
    _unmapped((r.zip for r in attestations), lookup, allow_unmapped, "attestation")
    att_df = pd.DataFrame(
        [
            (r.date, lookup[r.zip], r.n_onsite, r.n_symptomatic)
            for r in attestations
            if r.zip in lookup
        ],
        columns=["date", "unit_id", "n_onsite", "n_symptomatic"],
    )
    if att_df.empty:
        raise EmptyIntersectionError("No mapped attestation records")
    return att_df


def build_panel(
    attestations: List[RawAttestationRecord],
    census: List[RawCensusRecord],
    zipmap: ZipMap,
    frequency: Frequency = Frequency.DAILY,
    allow_unmapped: bool = False,
) -> PanelDataset:
    """
    Aggregate attestation and census records into an aligned panel.

    x[i][t] sums n_symptomatic over every zip mapped to unit i on day t;
    y[i][t] is the census of unit i. The calendar is the intersection of the
    census ranges of all units and the attestation range. Days without any
    attestation record count as zero; a missing census day is an error.

    Args:
        attestations: Attestation records
        census: Census records
        zipmap: Zip to unit assignment
        frequency: daily, or weekly (ISO weeks, partial boundary weeks dropped)
        allow_unmapped: Exclude unmapped zips with a warning instead of failing

    Raises:
        UnknownUnitError, UnmappedZipError, CalendarGapError, EmptyIntersectionError
    """
    frequency = Frequency(frequency)
    if not census:
        raise EmptyIntersectionError("No census records")

    census_df = pd.DataFrame(
        [(r.date, r.unit_id, r.census) for r in census], columns=CENSUS_COLUMNS
    )
    duplicated = census_df.duplicated(subset=["date", "unit_id"], keep=False)
    if duplicated.any():
        pairs = sorted({f"{u}@{d}" for d, u in census_df.loc[duplicated, ["date", "unit_id"]].itertuples(index=False)})
        raise ParseError(f"Duplicate census record(s): {', '.join(pairs)}")

    units = sorted(census_df["unit_id"].unique(), key=natural_key)
    unknown = sorted(set(zipmap.units()) - set(units), key=natural_key)
    if unknown:
        raise UnknownUnitError(f"Zip map references unit(s) without census: {', '.join(unknown)}")

    lookup = zipmap.lookup()
    att_df = _mapped_attestations(attestations, lookup, allow_unmapped)

    census_ranges = census_df.groupby("unit_id")["date"].agg(["min", "max"])
    start = max(census_ranges["min"].max(), att_df["date"].min())
    end = min(census_ranges["max"].min(), att_df["date"].max())
    if start > end:
        raise EmptyIntersectionError(
            f"Census and attestation date ranges do not overlap (start {start}, end {end})"
        )

    calendar = [d.date() for d in pd.date_range(start, end, freq="D")]
    census_df = census_df[(census_df["date"] >= start) & (census_df["date"] <= end)]
    y_frame = census_df.pivot(index="unit_id", columns="date", values="census")
    y_frame = y_frame.reindex(index=units, columns=calendar)
    if y_frame.isna().any().any():
        missing = [
            f"{unit}@{day.isoformat()}"
            for unit, row in y_frame.iterrows()
            for day, value in row.items()
            if pd.isna(value)
        ]
        raise CalendarGapError(missing)

    att_df = att_df[(att_df["date"] >= start) & (att_df["date"] <= end)]
    sums = att_df.groupby(["unit_id", "date"])[["n_onsite", "n_symptomatic"]].sum()
    full_index = pd.MultiIndex.from_product([units, calendar], names=["unit_id", "date"])
    sums = sums.reindex(full_index, fill_value=0)
    x_frame = sums["n_symptomatic"].unstack("date").reindex(index=units, columns=calendar)
    onsite_frame = sums["n_onsite"].unstack("date").reindex(index=units, columns=calendar)

    without_zips = [u for u in units if u not in set(lookup.values())]
    if without_zips:
        logger.warning(f"Unit(s) without mapped zips have x = 0: {', '.join(without_zips)}")

    panel = PanelDataset(
        units=list(units),
        calendar=calendar,
        y=y_frame.to_numpy(dtype=float).tolist(),
        x=x_frame.to_numpy(dtype=float).tolist(),
        frequency=Frequency.DAILY,
        onsite=onsite_frame.to_numpy(dtype=float).tolist(),
    )
    logger.info(f"Built daily panel: {panel.n_units} units x {panel.n_periods} days ({calendar[0]} to {calendar[-1]})")

    if frequency is Frequency.WEEKLY:
        panel = aggregate_weekly(panel)
    return panel


def load_weekly_cases(path: Path) -> List[RawCaseRecord]:
    """
    Load weekly positive cases: date,zip,cases or date,unit_id,cases.

    The date may be any day of the reporting week.

    Raises:
        ParseError: If the file has neither or both key columns
    """
    frame = read_csv_table(path, CASE_COLUMNS, optional=CASE_KEYS)
    keys = [c for c in CASE_KEYS if c in frame.columns]
    if len(keys) != 1:
        raise ParseError(f"{path}: expected exactly one of the columns {', '.join(CASE_KEYS)}")
    records = _parse_rows(frame, RawCaseRecord, Path(path))
    logger.info(f"Loaded {len(records)} weekly case records by {keys[0]} from {path}")
    return records


def _full_weeks(first_day: date, last_day: date):
    """Mondays of the first and last ISO weeks lying wholly inside [first_day, last_day]."""
    first = first_day + timedelta(days=(7 - first_day.weekday()) % 7)
    last_sunday = last_day - timedelta(days=(last_day.weekday() + 1) % 7)
    return first, last_sunday - timedelta(days=6)


def build_case_panel(
    attestations: List[RawAttestationRecord],
    cases: List[RawCaseRecord],
    zipmap: ZipMap,
    allow_unmapped: bool = False,
) -> PanelDataset:
    """
    Align weekly positive cases with weekly symptom reports.

    Zip-keyed case counts are summed into their service area. x sums
    n_symptomatic over the seven days of each ISO week, and only weeks the
    attestation range covers completely are used. The calendar (Mondays) is
    the intersection of every unit's case weeks with those weeks; a missing
    unit-week inside it is an error.

    Raises:
        UnknownUnitError, UnmappedZipError, CalendarGapError, EmptyIntersectionError, ParseError
    """
    if not cases:
        raise EmptyIntersectionError("No case records")
    lookup = zipmap.lookup()
    _unmapped((r.zip for r in cases if r.zip is not None), lookup, allow_unmapped, "case")

    case_df = pd.DataFrame(
        [
            (r.week, r.zip or r.unit_id, r.unit_id or lookup[r.zip], r.cases)
            for r in cases
            if r.unit_id is not None or r.zip in lookup
        ],
        columns=["week", "key", "unit_id", "cases"],
    )
    if case_df.empty:
        raise EmptyIntersectionError("No mapped case records")
    duplicated = case_df.duplicated(subset=["week", "key"], keep=False)
    if duplicated.any():
        pairs = sorted({f"{k}@{w}" for w, k in case_df.loc[duplicated, ["week", "key"]].itertuples(index=False)})
        raise ParseError(f"Duplicate weekly case record(s): {', '.join(pairs)}")

    units = sorted(case_df["unit_id"].unique(), key=natural_key)
    unknown = sorted(set(zipmap.units()) - set(units), key=natural_key)
    if unknown:
        raise UnknownUnitError(f"Zip map references unit(s) without cases: {', '.join(unknown)}")

    att_df = _mapped_attestations(attestations, lookup, allow_unmapped)
    first_week, last_week = _full_weeks(att_df["date"].min(), att_df["date"].max())
    case_ranges = case_df.groupby("unit_id")["week"].agg(["min", "max"])
    start = max(case_ranges["min"].max(), first_week)
    end = min(case_ranges["max"].min(), last_week)
    if start > end:
        raise EmptyIntersectionError(
            f"Case weeks and complete attestation weeks do not overlap (start {start}, end {end})"
        )
    calendar = [start + timedelta(weeks=w) for w in range((end - start).days // 7 + 1)]

    y_frame = case_df.groupby(["unit_id", "week"])["cases"].sum().unstack("week")
    y_frame = y_frame.reindex(index=units, columns=calendar)
    if y_frame.isna().any().any():
        missing = [
            f"{unit}@{week.isoformat()}"
            for unit, row in y_frame.iterrows()
            for week, value in row.items()
            if pd.isna(value)
        ]
        raise CalendarGapError(missing, f"Missing cases for {len(missing)} unit-week(s): {', '.join(missing)}")

    att_df = att_df[(att_df["date"] >= start) & (att_df["date"] <= end + timedelta(days=6))]
    att_df = att_df.assign(week=[d - timedelta(days=d.weekday()) for d in att_df["date"]])
    sums = att_df.groupby(["unit_id", "week"])[["n_onsite", "n_symptomatic"]].sum()
    full_index = pd.MultiIndex.from_product([units, calendar], names=["unit_id", "week"])
    sums = sums.reindex(full_index, fill_value=0)
    x_frame = sums["n_symptomatic"].unstack("week").reindex(index=units, columns=calendar)
    onsite_frame = sums["n_onsite"].unstack("week").reindex(index=units, columns=calendar)

    without_zips = [u for u in units if u not in set(lookup.values())]
    if without_zips:
        logger.warning(f"Unit(s) without mapped zips have x = 0: {', '.join(without_zips)}")

    panel = PanelDataset(
        units=list(units),
        calendar=calendar,
        y=y_frame.to_numpy(dtype=float).tolist(),
        x=x_frame.to_numpy(dtype=float).tolist(),
        frequency=Frequency.WEEKLY,
        onsite=onsite_frame.to_numpy(dtype=float).tolist(),
    )
    logger.info(f"Built weekly case panel: {panel.n_units} units x {panel.n_periods} weeks ({start} to {end})")
    return panel


def write_panel_csv(panel: PanelDataset, path: Path) -> Path:
    """Write the panel as unit_id,date,y,x with one row per unit-period."""
    rows = [
        (unit, day.isoformat(), panel.y[i][t], panel.x[i][t])
        for i, unit in enumerate(panel.units)
        for t, day in enumerate(panel.calendar)
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=PANEL_COLUMNS).to_csv(path, index=False, lineterminator="\n")
    return path


def read_panel_csv(path: Path, frequency: Frequency = Frequency.DAILY) -> PanelDataset:
    """Read a panel written by ``write_panel_csv``."""
    frame = read_csv_table(path, PANEL_COLUMNS)
    try:
        frame = frame.assign(
            date=pd.to_datetime(frame["date"], format="%Y-%m-%d").dt.date,
            y=frame["y"].astype(float),
            x=frame["x"].astype(float),
        )
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc

    units = sorted(frame["unit_id"].unique(), key=natural_key)
    calendar: List[date] = sorted(frame["date"].unique())
    y_frame = frame.pivot(index="unit_id", columns="date", values="y").reindex(index=units, columns=calendar)
    x_frame = frame.pivot(index="unit_id", columns="date", values="x").reindex(index=units, columns=calendar)
    if y_frame.isna().any().any() or x_frame.isna().any().any():
        raise CalendarGapError([], f"{path}: panel CSV has missing unit-period cells")
    try:
        return PanelDataset(
            units=list(units),
            calendar=calendar,
            y=y_frame.to_numpy().tolist(),
            x=x_frame.to_numpy().tolist(),
            frequency=Frequency(frequency),
        )
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc}") from exc


EXOGENOUS_COLUMNS = ["unit_id", "step", "value"]


def load_exogenous_paths(path: Path, units: Sequence[str], horizon: int) -> List[List[float]]:
    """
    Load future indicator values for the ``provided`` exogenous policy.

    The CSV holds unit_id,step,value rows with step 1..horizon counted from
    the forecast origin and value on the transformed (smoothed-log) scale.

    Returns:
        One path of ``horizon`` values per unit, in ``units`` order

    Raises:
        ParseError: If a value is not numeric
        AlignmentError: If a unit or step is missing
    """
    frame = read_csv_table(path, EXOGENOUS_COLUMNS)
    try:
        frame = frame.assign(step=frame["step"].astype(int), value=frame["value"].astype(float))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if frame.duplicated(["unit_id", "step"]).any():
        raise ParseError(f"{path}: duplicate (unit_id, step) rows")

    table = frame.pivot(index="unit_id", columns="step", values="value")
    table = table.reindex(index=list(units), columns=range(1, horizon + 1))
    if table.isna().any().any():
        missing = [
            f"{unit}@{step}" for unit in units for step in range(1, horizon + 1)
            if pd.isna(table.at[unit, step])
        ]
        raise AlignmentError(f"{path}: missing exogenous values for {', '.join(missing[:10])}")
    return table.to_numpy(dtype=float).tolist()
