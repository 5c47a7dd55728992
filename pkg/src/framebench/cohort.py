"""Longitudinal ward data model: events, admissions, cohorts.

Timestamps are hours since admission (floats), which keeps windowing
arithmetic trivial and the on-disk format timezone-free. An admission's
length of stay is the timestamp of its last recorded event; the synthetic
generator always closes an admission with a discharge-time EWS assessment
so the event CSV round-trips losslessly.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable

import numpy as np

from .params import PARAMETER_INFO

EVENT_CSV_HEADER = ["patient_id", "admission_id", "timestamp_h", "kind", "parameter", "value"]

# Inclusion boundaries: stays shorter than 24 hours or longer than 50 days
# are dropped; equality on either side is kept.
MIN_STAY_HOURS = 24.0
MAX_STAY_HOURS = 1200.0


class CohortError(Exception):
    """Base class for cohort construction problems."""


class ParseError(CohortError):
    """A malformed row in an event CSV. Carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class IntegrityError(CohortError):
    """Structurally inconsistent cohort (e.g. admission owned by two patients)."""


class EventKind(enum.Enum):
    VITAL = "vital"
    LAB = "lab"
    ANTIBIOTIC_ADMIN = "abx"
    CULTURE_SAMPLE = "culture"
    EWS_ASSESSMENT = "ews"


_PARAMETRIC_KINDS = (EventKind.VITAL, EventKind.LAB)


@dataclass(frozen=True, slots=True)
class ClinicalEvent:
    admission_id: str
    timestamp: float
    kind: EventKind
    parameter: str | None = None
    value: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValueError(f"event timestamp must be finite and >= 0, got {self.timestamp}")
        if self.kind in _PARAMETRIC_KINDS:
            if self.parameter is None or self.value is None:
                raise ValueError(f"{self.kind.value} event needs a parameter and a value")
            if self.parameter not in PARAMETER_INFO:
                raise ValueError(f"unknown parameter {self.parameter!r}")
            if PARAMETER_INFO[self.parameter].kind != self.kind.value:
                raise ValueError(f"parameter {self.parameter!r} is not a {self.kind.value}")
            if not math.isfinite(self.value):
                raise ValueError(f"non-finite value for {self.parameter!r}")
        else:
            if self.parameter is not None or self.value is not None:
                raise ValueError(f"{self.kind.value} event must not carry a parameter or value")


class Admission:
    """One inpatient stay: an id pair, a length of stay and its events.

    Events are sorted by timestamp at construction (stable, so equal
    timestamps keep their input order). Per-parameter numpy views are
    built lazily and cached; they make feature extraction and SOFA
    scoring cheap without changing the event-list contract.
    """

    __slots__ = ("admission_id", "patient_id", "length_of_stay", "events", "_param_cache", "_kind_cache")

    def __init__(self, admission_id: str, patient_id: str, length_of_stay: float,
                 events: Iterable[ClinicalEvent]):
        self.admission_id = admission_id
        self.patient_id = patient_id
        self.length_of_stay = float(length_of_stay)
        self.events = tuple(sorted(events, key=lambda e: e.timestamp))
        self._param_cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._kind_cache: dict[EventKind, np.ndarray] = {}

    def parameter_series(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """(times, values) arrays for one parameter, in time order."""
        cached = self._param_cache.get(name)
        if cached is None:
            times = [e.timestamp for e in self.events if e.parameter == name]
            values = [e.value for e in self.events if e.parameter == name]
            cached = (np.asarray(times, dtype=np.float64), np.asarray(values, dtype=np.float64))
            self._param_cache[name] = cached
        return cached

    def event_times(self, kind: EventKind) -> np.ndarray:
        """Timestamps of all events of one kind, in time order."""
        cached = self._kind_cache.get(kind)
        if cached is None:
            cached = np.asarray([e.timestamp for e in self.events if e.kind == kind], dtype=np.float64)
            self._kind_cache[kind] = cached
        return cached

    def __repr__(self):
        return (f"Admission({self.admission_id!r}, patient={self.patient_id!r}, "
                f"los={self.length_of_stay:g}h, {len(self.events)} events)")


@dataclass(frozen=True)
class Cohort:
    admissions: tuple[Admission, ...]
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "admissions", tuple(self.admissions))
        seen: dict[str, str] = {}
        for a in self.admissions:
            if a.admission_id in seen:
                raise IntegrityError(f"duplicate admission_id {a.admission_id!r}")
            seen[a.admission_id] = a.patient_id

    def __len__(self):
        return len(self.admissions)

    def __iter__(self):
        return iter(self.admissions)

    def get(self, admission_id: str) -> Admission:
        for a in self.admissions:
            if a.admission_id == admission_id:
                return a
        raise KeyError(admission_id)


def _parse_float(text: str, line_no: int, what: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(line_no, f"bad {what}: {text!r}") from None
    if not math.isfinite(v):
        raise ParseError(line_no, f"non-finite {what}: {text!r}")
    return v


def parse_event_stream(source: BinaryIO, provenance: str = "") -> Cohort:
    """Read an event CSV into a Cohort.

    Expects the exact header ``patient_id,admission_id,timestamp_h,kind,
    parameter,value``. Events are grouped per admission (first-appearance
    order) and sorted by timestamp; the length of stay is the last event's
    timestamp. Malformed rows raise :class:`ParseError` naming the line;
    an admission id appearing under two patients raises
    :class:`IntegrityError`.
    """
    text = io.TextIOWrapper(source, encoding="utf-8", newline="")
    reader = csv.reader(text)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(1, "missing header") from None
    if header != EVENT_CSV_HEADER:
        raise ParseError(1, f"bad header {header!r}")

    kinds = {k.value: k for k in EventKind}
    owner: dict[str, str] = {}
    events: dict[str, list[ClinicalEvent]] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 6:
            raise ParseError(line_no, f"expected 6 fields, got {len(row)}")
        patient_id, admission_id, ts_text, kind_text, parameter, value_text = row
        if not patient_id or not admission_id:
            raise ParseError(line_no, "empty patient_id or admission_id")
        kind = kinds.get(kind_text)
        if kind is None:
            raise ParseError(line_no, f"unknown kind {kind_text!r}")
        ts = _parse_float(ts_text, line_no, "timestamp")
        if ts < 0:
            raise ParseError(line_no, f"negative timestamp {ts!r}")
        if kind in _PARAMETRIC_KINDS:
            if parameter not in PARAMETER_INFO:
                raise ParseError(line_no, f"unknown parameter {parameter!r}")
            if PARAMETER_INFO[parameter].kind != kind.value:
                raise ParseError(line_no, f"parameter {parameter!r} is not a {kind.value}")
            value = _parse_float(value_text, line_no, "value")
        else:
            if parameter or value_text:
                raise ParseError(line_no, f"{kind_text} rows must leave parameter and value empty")
            parameter, value = None, None
        previous_owner = owner.get(admission_id)
        if previous_owner is None:
            owner[admission_id] = patient_id
            events[admission_id] = []
        elif previous_owner != patient_id:
            raise IntegrityError(
                f"admission {admission_id!r} appears under patients "
                f"{previous_owner!r} and {patient_id!r}")
        events[admission_id].append(ClinicalEvent(admission_id, ts, kind, parameter, value))

    admissions = []
    for admission_id, evs in events.items():
        los = max(e.timestamp for e in evs)
        admissions.append(Admission(admission_id, owner[admission_id], los, evs))
    text.detach()
    return Cohort(tuple(admissions), provenance=provenance)


def write_event_csv(cohort: Cohort, sink: BinaryIO) -> None:
    """Write a cohort in the event-CSV format (inverse of parse_event_stream)."""
    text = io.TextIOWrapper(sink, encoding="utf-8", newline="")
    writer = csv.writer(text, lineterminator="\n")
    writer.writerow(EVENT_CSV_HEADER)
    for adm in cohort.admissions:
        for e in adm.events:
            writer.writerow([
                adm.patient_id,
                adm.admission_id,
                repr(float(e.timestamp)),
                e.kind.value,
                e.parameter or "",
                "" if e.value is None else repr(float(e.value)),
            ])
    text.flush()
    text.detach()


def filter_admissions(cohort: Cohort) -> Cohort:
    """Keep admissions with 24 h <= length of stay <= 1200 h, order preserved."""
    kept = tuple(a for a in cohort.admissions
                 if MIN_STAY_HOURS <= a.length_of_stay <= MAX_STAY_HOURS)
    return Cohort(kept, provenance=cohort.provenance)


@dataclass(frozen=True, slots=True)
class Violation:
    admission_id: str
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def for_admission(self, admission_id: str) -> list[Violation]:
        return [v for v in self.violations if v.admission_id == admission_id]


def validate_cohort(cohort: Cohort) -> ValidationReport:
    """Report structural and plausibility violations without mutating anything.

    Plausibility ranges are deliberately generous; out-of-range values are
    flagged but never dropped or clamped, since no outlier handling is part
    of the pipeline.
    """
    violations: list[Violation] = []
    for adm in cohort.admissions:
        last_ts = -math.inf
        for e in adm.events:
            if e.timestamp < last_ts:
                violations.append(Violation(adm.admission_id, "unsorted",
                                            f"event at {e.timestamp:g}h after {last_ts:g}h"))
            last_ts = e.timestamp
            if e.timestamp > adm.length_of_stay:
                violations.append(Violation(
                    adm.admission_id, "after_discharge",
                    f"event at {e.timestamp:g}h beyond stay of {adm.length_of_stay:g}h"))
            if e.parameter is not None:
                info = PARAMETER_INFO[e.parameter]
                if not (info.plausible_lo <= e.value <= info.plausible_hi):
                    violations.append(Violation(
                        adm.admission_id, "implausible_value",
                        f"{e.parameter}={e.value:g} outside [{info.plausible_lo:g}, "
                        f"{info.plausible_hi:g}]"))
    return ValidationReport(tuple(violations))
