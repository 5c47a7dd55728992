import io

import numpy as np
import pytest

from framebench.cohort import (Admission, ClinicalEvent, Cohort, EventKind,
                               IntegrityError, ParseError, filter_admissions,
                               parse_event_stream, validate_cohort, write_event_csv)

HEADER = "patient_id,admission_id,timestamp_h,kind,parameter,value\n"


def parse(text: str) -> Cohort:
    return parse_event_stream(io.BytesIO(text.encode()))


def test_parse_header_only_gives_empty_cohort():
    assert len(parse(HEADER)) == 0


def test_parse_resorts_events_by_timestamp():
    text = HEADER + ("p1,a1,3.0,vital,spo2,97\n"
                     "p1,a1,1.0,vital,spo2,95\n")
    cohort = parse(text)
    times = [e.timestamp for e in cohort.get("a1").events]
    assert times == [1.0, 3.0]


def test_parse_malformed_value_names_line():
    text = HEADER + "p1,a1,1.0,vital,spo2,96\np1,a1,2.0,vital,spo2,abc\n"
    with pytest.raises(ParseError, match="line 3"):
        parse(text)


@pytest.mark.parametrize("row", [
    "p1,a1,1.0,vital,not_a_parameter,5",
    "p1,a1,-1.0,vital,spo2,96",
    "p1,a1,1.0,zap,spo2,96",
    "p1,a1,1.0,abx,spo2,96",       # abx rows must not carry a parameter
    "p1,a1,1.0,lab,spo2,96",       # spo2 is a vital, not a lab
    "p1,a1,nan,vital,spo2,96",
])
def test_parse_rejects_bad_rows(row):
    with pytest.raises(ParseError, match="line 2"):
        parse(HEADER + row + "\n")


def test_parse_bad_header_rejected():
    with pytest.raises(ParseError, match="line 1"):
        parse("a,b,c\n")


def test_duplicate_admission_across_patients_is_integrity_error():
    text = HEADER + "p1,a1,1.0,ews,,\np2,a1,2.0,ews,,\n"
    with pytest.raises(IntegrityError):
        parse(text)


def test_length_of_stay_is_last_event_time():
    text = HEADER + "p1,a1,5.0,ews,,\np1,a1,47.5,ews,,\n"
    assert parse(text).get("a1").length_of_stay == 47.5


def _admission(admission_id: str, los: float) -> Admission:
    events = [ClinicalEvent(admission_id, 0.5, EventKind.EWS_ASSESSMENT),
              ClinicalEvent(admission_id, los, EventKind.EWS_ASSESSMENT)]
    return Admission(admission_id, f"pt_{admission_id}", los, events)


def test_filter_boundaries_are_inclusive():
    cohort = Cohort((_admission("short", 23.9), _admission("lo", 24.0),
                     _admission("hi", 1200.0), _admission("long", 1201.0)))
    kept = [a.admission_id for a in filter_admissions(cohort)]
    assert kept == ["lo", "hi"]


def test_filter_is_idempotent_and_monotone():
    rng = np.random.default_rng(3)
    cohort = Cohort(tuple(_admission(f"a{i}", float(los))
                          for i, los in enumerate(rng.uniform(1.0, 2000.0, size=40))))
    once = filter_admissions(cohort)
    twice = filter_admissions(once)
    assert [a.admission_id for a in once] == [a.admission_id for a in twice]
    assert len(once) <= len(cohort)
    assert all(24.0 <= a.length_of_stay <= 1200.0 for a in once)


def test_validate_clean_cohort_is_ok():
    cohort = Cohort((_admission("a1", 48.0),))
    assert validate_cohort(cohort).ok


def test_validate_flags_implausible_spo2():
    events = [ClinicalEvent("a1", 1.0, EventKind.VITAL, "spo2", 250.0),
              ClinicalEvent("a1", 30.0, EventKind.EWS_ASSESSMENT)]
    report = validate_cohort(Cohort((Admission("a1", "p1", 30.0, events),)))
    assert not report.ok
    assert any(v.code == "implausible_value" for v in report.violations)


def test_validate_flags_event_after_discharge():
    events = [ClinicalEvent("a1", 40.0, EventKind.EWS_ASSESSMENT)]
    report = validate_cohort(Cohort((Admission("a1", "p1", 30.0, events),)))
    assert any(v.code == "after_discharge" for v in report.violations)


def test_event_invariants_enforced_at_construction():
    with pytest.raises(ValueError):
        ClinicalEvent("a1", 1.0, EventKind.VITAL, "spo2", None)
    with pytest.raises(ValueError):
        ClinicalEvent("a1", 1.0, EventKind.CULTURE_SAMPLE, "spo2", 1.0)
    with pytest.raises(ValueError):
        ClinicalEvent("a1", float("inf"), EventKind.EWS_ASSESSMENT)


def test_round_trip_write_then_parse(small_cohort):
    buf = io.BytesIO()
    write_event_csv(small_cohort, buf)
    buf.seek(0)
    parsed = parse_event_stream(buf)
    assert len(parsed) == len(small_cohort)
    for original, rebuilt in zip(small_cohort, parsed):
        assert rebuilt.admission_id == original.admission_id
        assert rebuilt.patient_id == original.patient_id
        assert rebuilt.length_of_stay == original.length_of_stay
        assert len(rebuilt.events) == len(original.events)
        for e1, e2 in zip(original.events, rebuilt.events):
            assert (e1.timestamp, e1.kind, e1.parameter, e1.value) == \
                   (e2.timestamp, e2.kind, e2.parameter, e2.value)
