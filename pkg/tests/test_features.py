import io

import numpy as np
import pytest

from framebench.cohort import Admission, ClinicalEvent, Cohort, EventKind, IntegrityError
from framebench.features import (build_dataset, extract_features,
                                 missingness_report, read_dataset_csv,
                                 write_dataset_csv)
from framebench.framing import FramingKind, SampleSpec
from framebench.params import FEATURE_NAMES, PARAMETER_INDEX, N_PARAMETERS


def make_admission(vitals, admission_id="a", los=200.0):
    events = [ClinicalEvent(admission_id, float(t), EventKind.VITAL, p, float(v))
              for t, p, v in vitals]
    events.append(ClinicalEvent(admission_id, float(los), EventKind.EWS_ASSESSMENT))
    return Admission(admission_id, f"pt_{admission_id}", los, events)


def sample(t, admission_id="a", label=0):
    return SampleSpec(admission_id, f"pt_{admission_id}", float(t), label,
                      FramingKind.SLIDING_WINDOW)


PULSE = PARAMETER_INDEX["pulse"]


def test_value_and_delta_from_both_timesteps():
    # pulse 80 at t-11 (first timestep) and 100 at t-2 (second timestep)
    admission = make_admission([(89.0, "pulse", 80.0), (98.0, "pulse", 100.0)])
    fv = extract_features(admission, sample(100.0))
    assert fv.values[PULSE] == 100.0
    assert fv.deltas[PULSE] == 20.0


def test_within_hour_mean_and_one_sided_imputation():
    # two measurements in the same hour average to 100; the first timestep is
    # empty, so the value is imputed but the delta stays missing
    admission = make_admission([(97.5, "pulse", 90.0), (97.5, "pulse", 110.0)])
    fv = extract_features(admission, sample(100.0))
    assert fv.values[PULSE] == 100.0
    assert fv.deltas[PULSE] is None


def test_backward_imputation_from_first_timestep():
    admission = make_admission([(89.0, "pulse", 80.0)])
    fv = extract_features(admission, sample(100.0))
    assert fv.values[PULSE] == 80.0
    assert fv.deltas[PULSE] is None


def test_empty_window_gives_missing_value_and_delta():
    admission = make_admission([(10.0, "pulse", 80.0)])
    fv = extract_features(admission, sample(100.0))
    assert fv.values[PULSE] is None
    assert fv.deltas[PULSE] is None


def test_measurement_at_prediction_time_is_included():
    admission = make_admission([(100.0, "pulse", 91.0)])
    fv = extract_features(admission, sample(100.0))
    assert fv.values[PULSE] == 91.0


def test_measurement_at_window_start_is_included():
    admission = make_admission([(88.0, "pulse", 77.0)])
    fv = extract_features(admission, sample(100.0))
    assert fv.values[PULSE] == 77.0


def test_measurement_just_before_window_is_excluded():
    admission = make_admission([(87.9, "pulse", 77.0)])
    fv = extract_features(admission, sample(100.0))
    assert fv.values[PULSE] is None


def test_hourly_means_are_averaged_per_timestep():
    # hours t-12..t-7 hold 60 and 70: timestep mean 65; second timestep 90
    admission = make_admission([(88.5, "pulse", 60.0), (91.5, "pulse", 70.0),
                                (99.5, "pulse", 90.0)])
    fv = extract_features(admission, sample(100.0))
    assert fv.values[PULSE] == 90.0
    assert fv.deltas[PULSE] == 25.0


def test_translation_invariance():
    shift = 256.0
    vitals = [(89.0, "pulse", 80.0), (93.0, "spo2", 97.0), (98.0, "pulse", 100.0)]
    moved = [(t + shift, p, v) for t, p, v in vitals]
    base = extract_features(make_admission(vitals, los=600), sample(100.0))
    shifted = extract_features(make_admission(moved, los=600), sample(100.0 + shift))
    assert base.values == shifted.values
    assert base.deltas == shifted.deltas


def test_feature_vector_as_row_layout():
    admission = make_admission([(89.0, "pulse", 80.0), (98.0, "pulse", 100.0)])
    row = extract_features(admission, sample(100.0)).as_row()
    assert row[PULSE] == 100.0
    assert row[N_PARAMETERS + PULSE] == 20.0
    assert np.isnan(row[0])


def test_build_dataset_preserves_order_and_is_deterministic():
    a1 = make_admission([(89.0, "pulse", 80.0)], admission_id="a1")
    a2 = make_admission([(95.0, "pulse", 99.0)], admission_id="a2")
    cohort = Cohort((a1, a2))
    samples = [sample(100.0, "a2"), sample(100.0, "a1"), sample(120.0, "a2")]
    first = build_dataset(cohort, samples)
    second = build_dataset(cohort, samples)
    assert first.admission_ids == ("a2", "a1", "a2")
    assert np.array_equal(first.X, second.X, equal_nan=True)
    assert len(first) == 3


def test_build_dataset_empty_samples():
    cohort = Cohort((make_admission([]),))
    dataset = build_dataset(cohort, [])
    assert len(dataset) == 0


def test_build_dataset_rejects_dangling_admission():
    cohort = Cohort((make_admission([]),))
    with pytest.raises(IntegrityError):
        build_dataset(cohort, [sample(50.0, "ghost")])


def test_rows_match_single_extraction(small_cohort, small_labels):
    from framebench.framing import FramingConfig, sample_cohort
    cfg = FramingConfig(kind=FramingKind.FIXED_TIME_TO_ONSET, seed=3)
    samples = sample_cohort(small_cohort, small_labels, cfg)[:30]
    dataset = build_dataset(small_cohort, samples)
    by_id = {a.admission_id: a for a in small_cohort}
    for i, s in enumerate(samples):
        row = extract_features(by_id[s.admission_id], s).as_row()
        assert np.array_equal(dataset.X[i], row, equal_nan=True)


# --- missingness ---------------------------------------------------------------

def test_missingness_zero_when_always_present():
    admission = make_admission([(95.0, "pulse", 80.0), (115.0, "pulse", 82.0)])
    dataset = build_dataset(Cohort((admission,)), [sample(100.0), sample(120.0)])
    report = missingness_report(dataset)
    assert report.percent("pulse") == 0.0


def test_missingness_quarter():
    admission = make_admission([(t, "spo2", 97.0) for t in (95.0, 115.0, 135.0)])
    samples = [sample(t) for t in (100.0, 120.0, 140.0, 160.0)]
    dataset = build_dataset(Cohort((admission,)), samples)
    assert missingness_report(dataset).percent("spo2") == 25.0


def test_missingness_empty_dataset_is_error():
    dataset = build_dataset(Cohort((make_admission([]),)), [])
    with pytest.raises(ValueError):
        missingness_report(dataset)


def test_delta_missingness_never_below_value_missingness(small_cohort, small_labels):
    from framebench.framing import FramingConfig, sample_cohort
    cfg = FramingConfig(kind=FramingKind.SLIDING_WINDOW, seed=3)
    samples = sample_cohort(small_cohort, small_labels, cfg)
    report = missingness_report(build_dataset(small_cohort, samples))
    for name in FEATURE_NAMES[:N_PARAMETERS]:
        assert report.percent(f"{name}_delta") >= report.percent(name), name


# --- CSV round trip ---------------------------------------------------------------

def test_dataset_csv_round_trip():
    admission = make_admission([(95.0, "pulse", 80.5), (98.0, "pulse", 81.5)])
    dataset = build_dataset(Cohort((admission,)), [sample(100.0, label=1), sample(150.0)])
    buf = io.BytesIO()
    write_dataset_csv(dataset, buf)
    buf.seek(0)
    loaded = read_dataset_csv(buf)
    assert list(loaded) == [FramingKind.SLIDING_WINDOW.value]
    rebuilt = loaded[FramingKind.SLIDING_WINDOW.value]
    assert np.array_equal(rebuilt.X, dataset.X, equal_nan=True)
    assert np.array_equal(rebuilt.labels, dataset.labels)
    assert rebuilt.patient_ids == dataset.patient_ids
    assert rebuilt.feature_names == dataset.feature_names
