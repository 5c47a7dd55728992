"""Observation-window feature extraction: 25 current values + 25 deltas.

Each sample sees a 12-hour observation window ending at its prediction
time, split into two 6-hour timesteps. Per parameter:

1. measurements are averaged per hour (12 left-closed hourly bins, the
   last one right-closed at the prediction time);
2. each timestep is the mean of its non-empty hourly means;
3. the delta is (second timestep - first timestep), computed only when
   both timesteps contain raw measurements;
4. if exactly one timestep is populated, its value is copied to the other
   (forward/backward imputation); the current value is the second timestep
   after imputation. An empty window leaves both value and delta missing.

Deltas are deliberately computed before imputation: a copied timestep has
no trend information, so imputation fills values but never deltas.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort, Admission, IntegrityError
from .framing import FramingKind, SampleSpec
from .params import FEATURE_NAMES, N_PARAMETERS, PARAMETER_NAMES

DEFAULT_OBSERVATION_WINDOW_H = 12.0
_HOURS = 12  # hourly bins per window; must stay even (two equal timesteps)


@dataclass(frozen=True)
class FeatureVector:
    values: tuple
    deltas: tuple
    label: int
    sample: SampleSpec

    def as_row(self) -> np.ndarray:
        row = np.full(2 * N_PARAMETERS, np.nan)
        for i, v in enumerate(self.values):
            if v is not None:
                row[i] = v
        for i, d in enumerate(self.deltas):
            if d is not None:
                row[N_PARAMETERS + i] = d
        return row


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with missing values carried as NaN, plus row metadata."""

    X: np.ndarray
    labels: np.ndarray
    patient_ids: tuple
    admission_ids: tuple
    prediction_times: np.ndarray
    framing: FramingKind | None = None
    provenance: str = ""
    feature_names: tuple = FEATURE_NAMES

    def __post_init__(self):
        if self.X.shape != (len(self.labels), len(self.feature_names)):
            raise ValueError(f"feature matrix shape {self.X.shape} does not match "
                             f"{len(self.labels)} rows x {len(self.feature_names)} features")

    def __len__(self):
        return len(self.labels)

    def rows_for_patients(self, patients) -> np.ndarray:
        wanted = set(patients)
        return np.asarray([i for i, p in enumerate(self.patient_ids) if p in wanted],
                          dtype=np.int64)

    def subset(self, rows: np.ndarray) -> "Dataset":
        return Dataset(
            X=self.X[rows],
            labels=self.labels[rows],
            patient_ids=tuple(self.patient_ids[i] for i in rows),
            admission_ids=tuple(self.admission_ids[i] for i in rows),
            prediction_times=self.prediction_times[rows],
            framing=self.framing,
            provenance=self.provenance,
            feature_names=self.feature_names,
        )

    @classmethod
    def from_arrays(cls, X, labels, patient_ids=None, feature_names=None,
                    framing=None, provenance="") -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int8)
        n = len(labels)
        if patient_ids is None:
            patient_ids = tuple(f"p{i}" for i in range(n))
        if feature_names is None:
            feature_names = tuple(f"f{j}" for j in range(X.shape[1]))
        return cls(X=X, labels=labels, patient_ids=tuple(patient_ids),
                   admission_ids=tuple(f"a{i}" for i in range(n)),
                   prediction_times=np.zeros(n), framing=framing,
                   provenance=provenance, feature_names=tuple(feature_names))


def _window_stats(times: np.ndarray, values: np.ndarray, pred_times: np.ndarray,
                  window_h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Timestep means and raw-presence flags for one parameter of one admission.

    Returns (first, second, first_present, second_present) arrays over the
    given prediction times; means are NaN where no measurement fell in the
    half-window.
    """
    half = _HOURS // 2
    # Bin edges anchored at the prediction time so the final edge equals it
    # exactly: measurements taken at the prediction time must land in the
    # last (right-closed) hourly bin.
    hours_per_bin = window_h / _HOURS
    offsets = (np.arange(_HOURS + 1, dtype=np.float64) - _HOURS) * hours_per_bin
    edges = pred_times[:, None] + offsets[None, :]
    lo = np.searchsorted(times, edges[:, :-1], side="left")
    hi = np.searchsorted(times, edges[:, 1:], side="left")
    # the final bin is right-closed at the prediction time
    hi[:, -1] = np.searchsorted(times, edges[:, -1], side="right")
    prefix = np.concatenate([[0.0], np.cumsum(values)])
    counts = (hi - lo).astype(np.float64)
    sums = prefix[hi] - prefix[lo]
    with np.errstate(invalid="ignore"):
        hourly = np.where(counts > 0, sums / np.where(counts > 0, counts, 1.0), np.nan)

    def timestep(block):
        present = ~np.isnan(block)
        k = present.sum(axis=1)
        total = np.where(present, block, 0.0).sum(axis=1)
        mean = np.where(k > 0, total / np.where(k > 0, k, 1), np.nan)
        return mean, k > 0

    first, first_present = timestep(hourly[:, :half])
    second, second_present = timestep(hourly[:, half:])
    return first, second, first_present, second_present


def _admission_matrix(admission: Admission, pred_times: np.ndarray,
                      window_h: float) -> np.ndarray:
    """(len(pred_times), 50) feature rows for one admission."""
    n = len(pred_times)
    out = np.full((n, 2 * N_PARAMETERS), np.nan)
    for j, name in enumerate(PARAMETER_NAMES):
        times, values = admission.parameter_series(name)
        first, second, has_first, has_second = _window_stats(times, values, pred_times, window_h)
        delta = np.where(has_first & has_second, second - first, np.nan)
        value = np.where(has_second, second, first)  # backward-impute from the first timestep
        out[:, j] = value
        out[:, N_PARAMETERS + j] = delta
    return out


def extract_features(admission: Admission, sample: SampleSpec,
                     observation_window_h: float = DEFAULT_OBSERVATION_WINDOW_H) -> FeatureVector:
    """Feature vector for one sample of one admission."""
    row = _admission_matrix(admission, np.asarray([sample.prediction_time]),
                            observation_window_h)[0]
    values = tuple(None if np.isnan(v) else float(v) for v in row[:N_PARAMETERS])
    deltas = tuple(None if np.isnan(v) else float(v) for v in row[N_PARAMETERS:])
    return FeatureVector(values=values, deltas=deltas, label=sample.label, sample=sample)


def build_dataset(cohort: Cohort, samples: list[SampleSpec],
                  observation_window_h: float = DEFAULT_OBSERVATION_WINDOW_H,
                  provenance: str = "") -> Dataset:
    """One feature row per sample, in sample order."""
    by_admission = {a.admission_id: a for a in cohort}
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        if s.admission_id not in by_admission:
            raise IntegrityError(f"sample references unknown admission {s.admission_id!r}")
        groups.setdefault(s.admission_id, []).append(i)

    n = len(samples)
    X = np.full((n, 2 * N_PARAMETERS), np.nan)
    for admission_id, rows in groups.items():
        pred_times = np.asarray([samples[i].prediction_time for i in rows])
        X[rows] = _admission_matrix(by_admission[admission_id], pred_times,
                                    observation_window_h)
    framings = {s.framing for s in samples}
    framing = framings.pop() if len(framings) == 1 else None
    return Dataset(
        X=X,
        labels=np.asarray([s.label for s in samples], dtype=np.int8),
        patient_ids=tuple(s.patient_id for s in samples),
        admission_ids=tuple(s.admission_id for s in samples),
        prediction_times=np.asarray([s.prediction_time for s in samples]),
        framing=framing,
        provenance=provenance,
    )


@dataclass(frozen=True)
class MissingnessTable:
    """Per-feature missing percentages, reported to two decimals."""

    percents: dict
    n_rows: int

    def percent(self, feature: str) -> float:
        return self.percents[feature]

    def rows(self):
        return [(name, self.percents[name]) for name in FEATURE_NAMES
                if name in self.percents]


def missingness_report(dataset: Dataset) -> MissingnessTable:
    """Missing rows / total rows per feature, as percentages."""
    if len(dataset) == 0:
        raise ValueError("missingness is undefined for an empty dataset")
    missing = np.isnan(dataset.X).sum(axis=0) / len(dataset) * 100.0
    percents = {name: round(float(pct), 2)
                for name, pct in zip(dataset.feature_names, missing)}
    return MissingnessTable(percents=percents, n_rows=len(dataset))


DATASET_CSV_TRAILER = ["label", "patient_id", "admission_id", "prediction_time_h", "framing"]


def write_dataset_csv(dataset: Dataset, sink, header: bool = True) -> None:
    """Feature CSV: 50 feature columns (empty cell = missing) plus row metadata."""
    text = io.TextIOWrapper(sink, encoding="utf-8", newline="")
    writer = csv.writer(text, lineterminator="\n")
    if header:
        writer.writerow(list(dataset.feature_names) + DATASET_CSV_TRAILER)
    framing_text = dataset.framing.value if dataset.framing else ""
    for i in range(len(dataset)):
        cells = ["" if np.isnan(v) else repr(float(v)) for v in dataset.X[i]]
        cells += [int(dataset.labels[i]), dataset.patient_ids[i], dataset.admission_ids[i],
                  repr(float(dataset.prediction_times[i])), framing_text]
        writer.writerow(cells)
    text.flush()
    text.detach()


def read_dataset_csv(source) -> dict[str, Dataset]:
    """Read a feature CSV back, grouped by framing tag (one Dataset per tag)."""
    text = io.TextIOWrapper(source, encoding="utf-8", newline="")
    reader = csv.reader(text)
    header = next(reader, None)
    if header is None or header[len(header) - len(DATASET_CSV_TRAILER):] != DATASET_CSV_TRAILER:
        raise ValueError("bad feature CSV header")
    feature_names = tuple(header[:len(header) - len(DATASET_CSV_TRAILER)])
    rows_by_framing: dict[str, list] = {}
    for row in reader:
        if not row:
            continue
        n_feat = len(feature_names)
        x = [np.nan if cell == "" else float(cell) for cell in row[:n_feat]]
        label, patient_id, admission_id, pred_time, framing_text = row[n_feat:]
        rows_by_framing.setdefault(framing_text, []).append(
            (x, int(label), patient_id, admission_id, float(pred_time)))
    text.detach()
    out = {}
    for framing_text, rows in rows_by_framing.items():
        framing = FramingKind(framing_text) if framing_text else None
        out[framing_text] = Dataset(
            X=np.asarray([r[0] for r in rows], dtype=np.float64),
            labels=np.asarray([r[1] for r in rows], dtype=np.int8),
            patient_ids=tuple(r[2] for r in rows),
            admission_ids=tuple(r[3] for r in rows),
            prediction_times=np.asarray([r[4] for r in rows]),
            framing=framing,
            feature_names=feature_names,
        )
    return out
