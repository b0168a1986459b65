"""Endpoints, baseline exclusion, classification labels and survival outcomes.

Dates are calendar days; a year is 365.25 days. A subject whose endpoint or
exclusion event happened on or before the baseline date was not healthy at
baseline and leaves the cohort.
"""
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union
import numpy as np
import pandas as pd

from healthfusion.errors import (
    ConfigError,
    DataFormatError,
    DateOrderError,
    DuplicateIdError,
    EmptyCohortError,
    SchemaError,
)

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.25
CODE_SYSTEMS = ("icd10", "icd9", "opcs4")


def normalize_code(code: str) -> str:
    """Upper-case code without dots or surrounding blanks.

    Examples:
        >>> normalize_code(" i24.1 ")
        'I241'
    """
    return str(code).strip().upper().replace(".", "")


def _to_date(value, what: str) -> date:
    try:
        return pd.Timestamp(value).date()
    except (TypeError, ValueError) as error:
        raise DataFormatError(f"{what}: {value!r} is not an ISO-8601 date") from error


@dataclass(frozen=True)
class EventRecord:
    """One coded hospital, procedure or death record.

    Examples:
        >>> EventRecord("p1", "I48", "icd10", "2016-03-01").date
        datetime.date(2016, 3, 1)
        >>> EventRecord("p1", "", "icd10", "2016-03-01")
        Traceback (most recent call last):
        healthfusion.errors.DataFormatError: p1: empty event code
    """

    subject_id: str
    code: str
    code_system: str
    date: date

    def __post_init__(self):
        if not str(self.code).strip():
            raise DataFormatError(f"{self.subject_id}: empty event code")
        if self.code_system not in CODE_SYSTEMS:
            raise DataFormatError(
                f"{self.subject_id}: unknown code system {self.code_system!r}, valid: {list(CODE_SYSTEMS)}"
            )
        object.__setattr__(self, "subject_id", str(self.subject_id))
        object.__setattr__(self, "date", _to_date(self.date, str(self.subject_id)))


def _parse_codes(codes: Iterable) -> tuple:
    parsed = []
    for code in codes:
        if isinstance(code, str):
            system, _, prefix = code.rpartition(":")
        else:
            system, prefix = code
        system = system.strip().lower() or None
        if system is not None and system not in CODE_SYSTEMS:
            raise ConfigError(f"unknown code system {system!r} in {code!r}, valid: {list(CODE_SYSTEMS)}")
        prefix = normalize_code(prefix)
        if not prefix:
            raise ConfigError(f"empty code prefix in {code!r}")
        parsed.append((system, prefix))
    return tuple(parsed)


@dataclass(frozen=True)
class EndpointDefinition:
    """Code prefixes defining an endpoint and the events that exclude a subject.

    Codes are ``"I48"`` (any code system) or ``"icd10:I48"``. Matching is a
    prefix match ignoring case and dots.

    Examples:
        >>> definition = EndpointDefinition("af", ["icd10:I48", "k57.1"])
        >>> definition.event_codes
        (('icd10', 'I48'), (None, 'K571'))
    """

    name: str
    event_codes: tuple
    exclusion_codes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "event_codes", _parse_codes(self.event_codes))
        object.__setattr__(self, "exclusion_codes", _parse_codes(self.exclusion_codes))
        if not self.event_codes:
            raise ConfigError(f"endpoint {self.name!r} has no event codes")

    def to_dict(self) -> dict:
        """Codes in their ``system:prefix`` text form."""
        def text(codes):
            return [f"{system}:{prefix}" if system else prefix for system, prefix in codes]
        return {"name": self.name, "event_codes": text(self.event_codes), "exclusion_codes": text(self.exclusion_codes)}


@dataclass(frozen=True)
class CohortTable:
    """Per-subject dates, covariates and derived outcomes.

    The frame is indexed by subject id with datetime columns
    ``baseline_date``, ``censor_date`` and ``endpoint_date`` (NaT when
    absent), one column per covariate and, once derived, ``label`` or
    ``time_years`` and ``event_indicator``.
    """

    frame: pd.DataFrame
    covariates: tuple = field(default=())

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def subject_ids(self) -> list[str]:
        """Subject ids in table order."""
        return list(self.frame.index)

    def with_frame(self, frame: pd.DataFrame) -> "CohortTable":
        """Same covariates, new rows."""
        return CohortTable(frame, self.covariates)

    def restrict(self, subject_ids: Iterable[str]) -> "CohortTable":
        """Rows of the given subjects that are in the table, in table order."""
        keep = self.frame.index.isin(list(subject_ids))
        return self.with_frame(self.frame[keep])


def make_cohort(
    subject_ids: Sequence[str],
    baseline_dates: Sequence,
    censor_dates: Sequence,
    endpoint_dates: Optional[Sequence] = None,
    covariates: Optional[dict] = None,
) -> CohortTable:
    """Build a cohort from plain sequences; ``None`` means no endpoint.

    Examples:
        >>> cohort = make_cohort(["a"], ["2015-01-01"], ["2020-01-01"], [None])
        >>> cohort.frame.endpoint_date.isna().tolist()
        [True]
    """
    ids = [str(subject_id) for subject_id in subject_ids]
    if len(set(ids)) != len(ids):
        raise DuplicateIdError("duplicate subject ids in cohort")
    frame = pd.DataFrame(
        {
            "baseline_date": pd.to_datetime(list(baseline_dates)),
            "censor_date": pd.to_datetime(list(censor_dates)),
            "endpoint_date": pd.to_datetime(list(endpoint_dates or [None] * len(ids))),
        },
        index=pd.Index(ids, name="subject_id"),
    )
    names = []
    for name, values in (covariates or {}).items():
        frame[name] = np.asarray(values, dtype=float)
        names.append(name)
    return CohortTable(frame, tuple(names))


def load_cohort_csv(
    path: Path,
    id_column: str,
    baseline_column: str,
    end_study_date,
    censor_column: Optional[str] = None,
    covariates: Sequence[str] = (),
) -> CohortTable:
    """Read the cohort table.

    The censor date of a subject is the earlier of its own censor date (when
    the column exists and the cell is not blank) and ``end_study_date``.

    Raises:
        SchemaError: a named column is missing.
        DuplicateIdError: repeated or blank subject ids.
        DataFormatError: unparseable date or non-numeric covariate.

    Examples:
        >>> cohort = load_cohort_csv(Path("test_data/cohort.csv"), "eid", "baseline_date",
        ...                          "2020-12-31", "censor_date", ["age"])
        >>> cohort.subject_ids
        ['s1', 's2', 's3']
        >>> [str(day.date()) for day in cohort.frame.censor_date]
        ['2019-06-30', '2020-12-31', '2020-12-31']
        >>> cohort.frame.age.tolist()
        [61.5, 58.0, 70.25]
    """
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    required = [id_column, baseline_column, *covariates] + ([censor_column] if censor_column else [])
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    ids = frame[id_column].str.strip()
    if (ids == "").any():
        raise DuplicateIdError(f"{path}: blank subject id at row {int(np.flatnonzero(ids == '')[0]) + 2}")
    duplicated = ids[ids.duplicated()]
    if len(duplicated):
        raise DuplicateIdError(f"{path}: duplicate subject id {duplicated.iloc[0]!r}")
    end_study = pd.Timestamp(_to_date(end_study_date, "end_study_date"))
    baseline = _parse_dates(frame[baseline_column], path, baseline_column, allow_blank=False)
    if censor_column:
        censor = _parse_dates(frame[censor_column], path, censor_column, allow_blank=True)
        censor = censor.where(censor.notna() & (censor < end_study), end_study)
    else:
        censor = pd.Series(end_study, index=frame.index)
    table = pd.DataFrame(
        {
            "baseline_date": baseline.to_numpy(),
            "censor_date": censor.to_numpy(),
            "endpoint_date": pd.NaT,
        },
        index=pd.Index(ids.to_list(), name="subject_id"),
    )
    table["endpoint_date"] = pd.to_datetime(table["endpoint_date"])
    for name in covariates:
        values = pd.to_numeric(frame[name].str.strip(), errors="coerce")
        bad = np.flatnonzero(~np.isfinite(values.to_numpy(dtype=float)))
        if len(bad):
            raise DataFormatError(
                f"{path.as_posix()}: row {bad[0] + 2}, column {name!r}: "
                f"{frame[name].iat[bad[0]]!r} is not a finite number"
            )
        table[name] = values.to_numpy(dtype=float)
    logger.debug("loaded cohort %s: %d subjects", path, len(table))
    return CohortTable(table, tuple(covariates))


def _parse_dates(column: pd.Series, path: Path, name: str, allow_blank: bool) -> pd.Series:
    text = column.str.strip()
    parsed = pd.to_datetime(text.where(text != ""), format="%Y-%m-%d", errors="coerce")
    bad = parsed.isna() & ((text != "") | (not allow_blank))
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataFormatError(
            f"{path.as_posix()}: row {row + 2}, column {name!r}: {text.iat[row]!r} is not an ISO-8601 date"
        )
    return parsed


def load_events_csv(path: Path, id_column: str = "subject_id") -> pd.DataFrame:
    """Read coded events; columns id, code, date and optionally code_system.

    Returns:
        pd.DataFrame: subject_id, code_system, code, date (datetime).

    Examples:
        >>> events = load_events_csv(Path("test_data/events.csv"), "eid")
        >>> events.columns.tolist(), len(events)
        (['subject_id', 'code_system', 'code', 'date'], 4)
    """
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [column for column in (id_column, "code", "date") if column not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    systems = frame["code_system"].str.strip().str.lower() if "code_system" in frame.columns else "icd10"
    events = pd.DataFrame(
        {
            "subject_id": frame[id_column].str.strip(),
            "code_system": systems,
            "code": frame["code"].str.strip(),
            "date": _parse_dates(frame["date"], path, "date", allow_blank=False),
        }
    )
    empty = np.flatnonzero((events["code"] == "").to_numpy())
    if len(empty):
        raise DataFormatError(f"{path.as_posix()}: row {empty[0] + 2}: empty event code")
    unknown = sorted(set(events["code_system"]) - set(CODE_SYSTEMS))
    if unknown:
        raise DataFormatError(f"{path.as_posix()}: unknown code systems {unknown}")
    return events


def events_frame(records: Iterable[EventRecord]) -> pd.DataFrame:
    """Event records as the frame :func:`load_events_csv` returns."""
    rows = [(record.subject_id, record.code_system, record.code, record.date) for record in records]
    frame = pd.DataFrame(rows, columns=["subject_id", "code_system", "code", "date"])
    frame["date"] = pd.to_datetime(frame["date"])
    return frame


def _matching(events: pd.DataFrame, keys: pd.Series, codes: tuple) -> pd.Series:
    hit = pd.Series(False, index=events.index)
    for system, prefix in codes:
        part = keys.str.startswith(prefix)
        if system is not None:
            part &= events["code_system"] == system
        hit |= part
    return hit


def derive_endpoint(
    records: Union[Iterable[EventRecord], pd.DataFrame], definition: EndpointDefinition
) -> pd.DataFrame:
    """First endpoint and first exclusion date of every subject with records.

    Args:
        records: event records or a frame from :func:`load_events_csv`.
        definition (EndpointDefinition): codes to match.

    Returns:
        pd.DataFrame: indexed by subject id, columns first_event_date and
        first_exclusion_date, NaT where nothing matched.

    Examples:
        >>> records = [
        ...     EventRecord("p1", "I48", "icd10", "2016-03-01"),
        ...     EventRecord("p1", "I21", "icd10", "2015-01-01"),
        ...     EventRecord("p2", "I24.1", "icd10", "2017-05-05"),
        ...     EventRecord("p3", "K57", "icd10", "2018-01-01"),
        ... ]
        >>> table = derive_endpoint(records, EndpointDefinition("af", ["I48", "I241"], ["I21"]))
        >>> str(table.loc["p1", "first_event_date"].date()), str(table.loc["p1", "first_exclusion_date"].date())
        ('2016-03-01', '2015-01-01')
        >>> str(table.loc["p2", "first_event_date"].date())
        '2017-05-05'
        >>> bool(table.loc["p3"].isna().all())
        True
    """
    events = records if isinstance(records, pd.DataFrame) else events_frame(records)
    keys = events["code"].map(normalize_code)
    subjects = pd.Index(pd.unique(events["subject_id"]), name="subject_id")
    table = pd.DataFrame(index=subjects)
    for column, codes in (("first_event_date", definition.event_codes), ("first_exclusion_date", definition.exclusion_codes)):
        hit = _matching(events, keys, codes)
        first = events[hit].groupby("subject_id")["date"].min()
        table[column] = pd.to_datetime(first.reindex(subjects))
    return table


def attach_endpoints(cohort: CohortTable, endpoints: pd.DataFrame) -> CohortTable:
    """Copy each subject's first endpoint date into the cohort."""
    frame = cohort.frame.copy()
    frame["endpoint_date"] = pd.to_datetime(endpoints["first_event_date"].reindex(frame.index))
    return cohort.with_frame(frame)


def apply_baseline_exclusion(cohort: CohortTable, exclusion_dates: Union[pd.Series, dict, None]) -> CohortTable:
    """Remove subjects with an exclusion date on or before their baseline.

    Examples:
        >>> cohort = make_cohort(["a", "b", "c"], ["2015-01-10"] * 3, ["2020-01-01"] * 3)
        >>> kept = apply_baseline_exclusion(cohort, {"a": "2015-01-09", "b": "2015-01-11", "c": "2015-01-10"})
        >>> kept.subject_ids
        ['b']
        >>> apply_baseline_exclusion(cohort, None).subject_ids
        ['a', 'b', 'c']
    """
    if exclusion_dates is None:
        return cohort
    dates = pd.to_datetime(pd.Series(exclusion_dates, dtype=object)).reindex(cohort.frame.index)
    prevalent = (dates <= cohort.frame["baseline_date"]).to_numpy()
    if prevalent.any():
        logger.info("excluded %d subjects with events on or before baseline", int(prevalent.sum()))
    return cohort.with_frame(cohort.frame[~prevalent])


def _days(later: pd.Series, earlier: pd.Series) -> np.ndarray:
    return (later - earlier).dt.days.to_numpy(dtype=float)


def _check_endpoints(frame: pd.DataFrame) -> np.ndarray:
    endpoint_days = _days(frame["endpoint_date"], frame["baseline_date"])
    early = np.flatnonzero(endpoint_days <= 0)
    if len(early):
        raise DateOrderError(
            f"subject {frame.index[early[0]]!r}: endpoint on or before baseline; "
            "apply the baseline exclusion first"
        )
    return endpoint_days


def label_classification(cohort: CohortTable, horizon_years: float) -> CohortTable:
    """Binary label for the endpoint within ``horizon_years`` after baseline.

    Label 1 when the endpoint falls in (baseline, baseline + horizon] and no
    later than the censor date; label 0 otherwise when follow-up reaches the
    horizon. Subjects censored before the horizon without an endpoint are
    dropped.

    Raises:
        ConfigError: horizon is not positive.
        DateOrderError: an endpoint on or before baseline remains.

    Examples:
        >>> cohort = make_cohort(
        ...     ["pos", "short", "neg", "late"], ["2010-01-01"] * 4,
        ...     ["2018-01-01", "2013-01-01", "2016-01-02", "2018-01-01"],
        ...     ["2012-01-01", None, None, "2016-06-01"])
        >>> labelled = label_classification(cohort, 5)
        >>> labelled.frame.label.to_dict()
        {'pos': 1, 'neg': 0, 'late': 0}
        >>> label_classification(cohort, 0)
        Traceback (most recent call last):
        healthfusion.errors.ConfigError: classification horizon must be positive, got 0
    """
    if horizon_years <= 0:
        raise ConfigError(f"classification horizon must be positive, got {horizon_years}")
    frame = cohort.frame.copy()
    horizon_days = horizon_years * DAYS_PER_YEAR
    endpoint_days = _check_endpoints(frame)
    censor_days = _days(frame["censor_date"], frame["baseline_date"])
    positive = (endpoint_days <= horizon_days) & (endpoint_days <= censor_days)
    negative = ~positive & (censor_days >= horizon_days)
    keep = positive | negative
    if (~keep).any():
        logger.info("dropped %d subjects followed for less than %g years", int((~keep).sum()), horizon_years)
    frame["label"] = positive.astype(int)
    return cohort.with_frame(frame[keep])


def build_survival_outcome(cohort: CohortTable) -> CohortTable:
    """Follow-up time in years and event indicator.

    time = (min(endpoint, censor) - baseline) / 365.25 with an event when the
    endpoint is no later than the censor date. Zero times become half a day.

    Raises:
        DateOrderError: censor before baseline, or an endpoint on or before
            baseline.

    Examples:
        >>> cohort = make_cohort(["a", "b", "c"], ["2015-01-01"] * 3,
        ...                      ["2019-01-01", "2016-01-01", "2015-01-01"],
        ...                      ["2016-12-31", None, None])
        >>> outcome = build_survival_outcome(cohort).frame
        >>> np.round(outcome.time_years, 4).tolist(), outcome.event_indicator.tolist()
        ([1.9986, 0.9993, 0.0014], [1, 0, 0])
        >>> build_survival_outcome(make_cohort(["z"], ["2015-01-01"], ["2014-01-01"]))
        Traceback (most recent call last):
        healthfusion.errors.DateOrderError: subject 'z': censor date before baseline
    """
    frame = cohort.frame.copy()
    censor_days = _days(frame["censor_date"], frame["baseline_date"])
    early = np.flatnonzero(censor_days < 0)
    if len(early):
        raise DateOrderError(f"subject {frame.index[early[0]]!r}: censor date before baseline")
    endpoint_days = _check_endpoints(frame)
    event = endpoint_days <= censor_days
    days = np.where(event, endpoint_days, censor_days)
    days = np.where(days == 0, 0.5, days)
    frame["time_years"] = days / DAYS_PER_YEAR
    frame["event_indicator"] = event.astype(int)
    return cohort.with_frame(frame)


def build_cohort(cohort: CohortTable, events: pd.DataFrame, definition: EndpointDefinition) -> CohortTable:
    """Attach endpoints and drop subjects not healthy at baseline.

    A subject is excluded when its first endpoint or first exclusion event
    falls on or before baseline.

    Raises:
        EmptyCohortError: nobody is left.

    Examples:
        Straight-line check of the rules on a scripted 50-subject registry:

        >>> from healthfusion.synthetic import synthetic_registry, sample_ids
        >>> registry, records = synthetic_registry(np.linspace(-3, 3, 50), sample_ids(50), seed=7)
        >>> import tempfile
        >>> registry_path = Path(tempfile.mkdtemp()) / "cohort.csv"
        >>> registry.to_csv(registry_path, index=False)
        >>> table = load_cohort_csv(registry_path, "eid", "baseline_date", "2022-12-31", "censor_date")
        >>> events = events_frame(EventRecord(*row) for row in
        ...     records[["eid", "code", "code_system", "date"]].itertuples(index=False, name=None))
        >>> definition = EndpointDefinition("af", ["I48"], ["I47"])
        >>> built = build_cohort(table, events, definition)
        >>> labels = label_classification(built, 5).frame.label.to_dict()
        >>> survival = build_survival_outcome(built).frame
        >>> expected_labels, expected_times = {}, {}
        >>> for eid, baseline, censor in registry[["eid", "baseline_date", "censor_date"]].itertuples(index=False):
        ...     start = date.fromisoformat(baseline)
        ...     stop = min(date.fromisoformat(censor or "2022-12-31"), date(2022, 12, 31))
        ...     own = [(date.fromisoformat(day), code) for e, code, day in records[["eid", "code", "date"]].itertuples(index=False) if e == eid]
        ...     hits = sorted(day for day, code in own if code.replace(".", "").startswith("I48"))
        ...     blocks = sorted(day for day, code in own if code.replace(".", "").startswith("I47"))
        ...     first = hits[0] if hits else None
        ...     if (first and first <= start) or (blocks and blocks[0] <= start):
        ...         continue
        ...     if first and first <= stop:
        ...         expected_times[eid] = ((first - start).days or 0.5) / 365.25
        ...     else:
        ...         expected_times[eid] = ((stop - start).days or 0.5) / 365.25
        ...     if first and first <= stop and (first - start).days <= 5 * 365.25:
        ...         expected_labels[eid] = 1
        ...     elif (stop - start).days >= 5 * 365.25:
        ...         expected_labels[eid] = 0
        >>> labels == expected_labels
        True
        >>> bool(np.allclose(survival.time_years.to_numpy(), [expected_times[eid] for eid in survival.index]))
        True
        >>> set(labels) <= set(survival.index)
        True
    """
    endpoints = derive_endpoint(events, definition)
    cohort = attach_endpoints(cohort, endpoints)
    first_dates = endpoints.reindex(cohort.frame.index)
    exclusion = first_dates[["first_event_date", "first_exclusion_date"]].min(axis=1)
    before = len(cohort)
    cohort = apply_baseline_exclusion(cohort, exclusion)
    logger.info("cohort %s: %d of %d subjects healthy at baseline", definition.name, len(cohort), before)
    if not len(cohort):
        raise EmptyCohortError(f"no subject of endpoint {definition.name!r} is healthy at baseline")
    return cohort
