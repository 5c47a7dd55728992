"""Sample generators for the different ways of framing the prediction task.

A framing maps an admission to a list of (prediction time, label) samples.
Six framings are implemented: fixed time to onset, sliding window, sliding
window with dynamic inclusion, on clinical demand, at-event, and random
time to onset. The two sequential framings (whole-admission sequence
models) are intentionally unsupported; their names are listed in
``UNSUPPORTED_FRAMINGS`` so callers get a clear error instead of a typo
message.

No sample is ever emitted at or after onset: a prediction for an event
already under way is clinically meaningless. Observation windows are never
clamped; samples whose window would start before admission are skipped.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .cohort import Admission, Cohort, EventKind
from .sepsis3 import SepsisLabel, SofaSeries


class FramingKind(enum.Enum):
    FIXED_TIME_TO_ONSET = "fixed_time_to_onset"
    SLIDING_WINDOW = "sliding_window"
    SLIDING_WINDOW_DYNAMIC_INCLUSION = "sliding_window_dynamic_inclusion"
    ON_CLINICAL_DEMAND = "on_clinical_demand"
    AT_EVENT = "at_event"
    RANDOM_TIME_TO_ONSET = "random_time_to_onset"


# Sequence-model framings that this pipeline deliberately does not build.
UNSUPPORTED_FRAMINGS = (
    "sequential_with_prediction_window",
    "sequential_entire_admission",
)


def framing_from_name(name: str) -> FramingKind:
    if name in UNSUPPORTED_FRAMINGS:
        raise ValueError(
            f"framing {name!r} requires a sequence model and is not supported")
    try:
        return FramingKind(name)
    except ValueError:
        known = ", ".join(k.value for k in FramingKind)
        raise ValueError(f"unknown framing {name!r}; known framings: {known}") from None


@dataclass(frozen=True)
class FramingConfig:
    kind: FramingKind
    horizon_h: float = 12.0
    chunk_h: float = 8.0
    prediction_window_h: float = 24.0
    observation_window_h: float = 12.0
    seed: int = 0
    horizon_range_h: tuple[float, float] = (3.0, 24.0)

    def __post_init__(self):
        for name in ("horizon_h", "chunk_h", "prediction_window_h", "observation_window_h"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        lo, hi = self.horizon_range_h
        if not (0 < lo <= hi):
            raise ValueError("horizon_range_h must be a non-empty positive interval")


@dataclass(frozen=True, slots=True)
class SampleSpec:
    admission_id: str
    patient_id: str
    prediction_time: float
    label: int
    framing: FramingKind

    def observation_window(self, config: FramingConfig) -> tuple[float, float]:
        return (self.prediction_time - config.observation_window_h, self.prediction_time)


def _admission_rng(seed: int, admission_id: str, stream: int) -> np.random.Generator:
    """Deterministic per-admission generator, stable across runs and platforms."""
    digest = hashlib.sha256(admission_id.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "big")
    return np.random.default_rng([seed, key, stream])


_NEGATIVE_TIME_STREAM = 1
_HORIZON_STREAM = 2


def _negative_onset_time(admission: Admission, config: FramingConfig) -> float | None:
    """Seeded stand-in "onset" for a negative admission (uniform over the stay)."""
    if admission.length_of_stay < config.observation_window_h:
        return None
    rng = _admission_rng(config.seed, admission.admission_id, _NEGATIVE_TIME_STREAM)
    return float(rng.uniform(config.observation_window_h, admission.length_of_stay))


def _window_label(t: float, onset: float | None, config: FramingConfig) -> int:
    if onset is None:
        return 0
    return int(t < onset <= t + config.prediction_window_h)


def sample_fixed_time_to_onset(admission: Admission, label: SepsisLabel,
                               config: FramingConfig) -> list[SampleSpec]:
    """At most one sample: a fixed number of hours before (stand-in) onset."""
    if label.is_positive:
        t = label.onset - config.horizon_h
        if t < config.observation_window_h:
            return []
        return [SampleSpec(admission.admission_id, admission.patient_id, t, 1, config.kind)]
    t = _negative_onset_time(admission, config)
    if t is None:
        return []
    return [SampleSpec(admission.admission_id, admission.patient_id, t, 0, config.kind)]


def sample_random_time_to_onset(admission: Admission, label: SepsisLabel,
                                config: FramingConfig) -> list[SampleSpec]:
    """Fixed-time framing with the positive horizon drawn per admission."""
    if not label.is_positive:
        return sample_fixed_time_to_onset(admission, label, config)
    rng = _admission_rng(config.seed, admission.admission_id, _HORIZON_STREAM)
    lo, hi = config.horizon_range_h
    horizon = float(rng.uniform(lo, hi))
    t = label.onset - horizon
    if t < config.observation_window_h:
        return []
    return [SampleSpec(admission.admission_id, admission.patient_id, t, 1, config.kind)]


def _chunk_times(admission: Admission, label: SepsisLabel, config: FramingConfig) -> list[float]:
    """Prediction times on the chunk grid, from the first multiple of chunk_h
    that leaves room for the observation window, up to the stay (and strictly
    before onset for positive admissions)."""
    k = math.ceil(config.observation_window_h / config.chunk_h)
    limit = admission.length_of_stay
    onset = label.onset if label.is_positive else None
    times = []
    while True:
        t = k * config.chunk_h
        if t > limit:
            break
        if onset is not None and t >= onset:
            break
        times.append(t)
        k += 1
    return times


def sample_sliding_window(admission: Admission, label: SepsisLabel,
                          config: FramingConfig) -> list[SampleSpec]:
    """One sample per chunk of the stay, labelled by the prediction window."""
    onset = label.onset
    return [
        SampleSpec(admission.admission_id, admission.patient_id, t,
                   _window_label(t, onset, config), config.kind)
        for t in _chunk_times(admission, label, config)
    ]


def sample_sliding_window_dynamic(admission: Admission, label: SepsisLabel,
                                  sofa: SofaSeries, config: FramingConfig) -> list[SampleSpec]:
    """Sliding-window samples restricted to times at or after the first SOFA > 0."""
    start = sofa.first_positive_hour()
    if start is None:
        return []
    onset = label.onset
    return [
        SampleSpec(admission.admission_id, admission.patient_id, t,
                   _window_label(t, onset, config), config.kind)
        for t in _chunk_times(admission, label, config)
        if t >= start
    ]


def _demand_samples(admission: Admission, label: SepsisLabel, config: FramingConfig,
                    trigger_times, kind: FramingKind) -> list[SampleSpec]:
    onset = label.onset if label.is_positive else None
    limit = admission.length_of_stay
    out = []
    for t in trigger_times:
        t = float(t)
        if t < config.observation_window_h or t > limit:
            continue
        if onset is not None and t >= onset:
            continue
        out.append(SampleSpec(admission.admission_id, admission.patient_id, t,
                              _window_label(t, onset, config), kind))
    return out


def sample_on_clinical_demand(admission: Admission, label: SepsisLabel,
                              config: FramingConfig) -> list[SampleSpec]:
    """One sample per early-warning-score assessment performed by staff."""
    ews_times = admission.event_times(EventKind.EWS_ASSESSMENT)
    return _demand_samples(admission, label, config, ews_times, config.kind)


def sample_at_event(admission: Admission, label: SepsisLabel, config: FramingConfig,
                    trigger: EventKind | None = None) -> list[SampleSpec]:
    """Samples anchored at a chosen event kind.

    With no trigger kind, a single sample is taken as soon as a full
    observation window is available after admission.
    """
    if trigger is None:
        times = [config.observation_window_h]
    else:
        times = admission.event_times(trigger)
    return _demand_samples(admission, label, config, times, FramingKind.AT_EVENT)


def sample_admission(admission: Admission, label: SepsisLabel, config: FramingConfig,
                     sofa: SofaSeries | None = None) -> list[SampleSpec]:
    """Dispatch to the sampler for config.kind."""
    kind = config.kind
    if kind is FramingKind.FIXED_TIME_TO_ONSET:
        return sample_fixed_time_to_onset(admission, label, config)
    if kind is FramingKind.SLIDING_WINDOW:
        return sample_sliding_window(admission, label, config)
    if kind is FramingKind.SLIDING_WINDOW_DYNAMIC_INCLUSION:
        if sofa is None:
            from .sepsis3 import sofa_series
            sofa = sofa_series(admission)
        return sample_sliding_window_dynamic(admission, label, sofa, config)
    if kind is FramingKind.ON_CLINICAL_DEMAND:
        return sample_on_clinical_demand(admission, label, config)
    if kind is FramingKind.AT_EVENT:
        return sample_at_event(admission, label, config)
    if kind is FramingKind.RANDOM_TIME_TO_ONSET:
        return sample_random_time_to_onset(admission, label, config)
    raise ValueError(f"unsupported framing kind {kind}")


def sample_cohort(cohort: Cohort, labels: dict[str, SepsisLabel], config: FramingConfig,
                  sofa_by_admission: dict[str, SofaSeries] | None = None) -> list[SampleSpec]:
    """Samples for every admission, concatenated in cohort order."""
    out: list[SampleSpec] = []
    for admission in cohort:
        sofa = None
        if sofa_by_admission is not None:
            sofa = sofa_by_admission.get(admission.admission_id)
        out.extend(sample_admission(admission, labels[admission.admission_id], config, sofa))
    return out


@dataclass(frozen=True)
class ClassBalance:
    positives: int
    negatives: int

    @property
    def negatives_per_positive(self) -> float:
        if self.positives == 0:
            return math.inf
        return self.negatives / self.positives

    @property
    def all_negative(self) -> bool:
        return self.positives == 0

    def ratio_text(self) -> str:
        if self.positives == 0:
            return "1:inf (no positives)"
        return f"1:{self.negatives_per_positive:.2f}"


def class_balance(samples: list[SampleSpec]) -> ClassBalance:
    """Exact positive/negative counts and the 1:n imbalance ratio."""
    positives = sum(1 for s in samples if s.label == 1)
    return ClassBalance(positives=positives, negatives=len(samples) - positives)


SAMPLES_CSV_HEADER = ["admission_id", "patient_id", "prediction_time_h", "label", "framing"]


def write_samples_csv(samples: list[SampleSpec], sink) -> None:
    import csv
    import io

    text = io.TextIOWrapper(sink, encoding="utf-8", newline="")
    writer = csv.writer(text, lineterminator="\n")
    writer.writerow(SAMPLES_CSV_HEADER)
    for s in samples:
        writer.writerow([s.admission_id, s.patient_id, repr(float(s.prediction_time)),
                         int(s.label), s.framing.value])
    text.flush()
    text.detach()


def read_samples_csv(source) -> list[SampleSpec]:
    import csv
    import io

    text = io.TextIOWrapper(source, encoding="utf-8", newline="")
    reader = csv.reader(text)
    header = next(reader, None)
    if header != SAMPLES_CSV_HEADER:
        raise ValueError(f"bad samples CSV header: {header!r}")
    samples = []
    for row in reader:
        if not row:
            continue
        admission_id, patient_id, t, label, framing = row
        samples.append(SampleSpec(admission_id, patient_id, float(t), int(label),
                                  FramingKind(framing)))
    text.detach()
    return samples
