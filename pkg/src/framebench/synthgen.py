"""Seed-driven synthetic ward cohort generator.

The generator reproduces the structure of general-ward data rather than any
real cohort: vitals arrive mostly bundled with clinician-initiated EWS
assessments (five vitals always, temperature usually), labs arrive in
sparse panels, and stays are log-uniform across the inclusion range.

Septic admissions follow a script that the labeling rules are guaranteed
to recover: one coherent culture/antibiotic pair anchored at the scripted
onset, clean (SOFA-zero) values before deterioration begins 24 hours ahead
of onset, and explicit platelet and creatinine measurements shortly after
onset that force a two-point SOFA rise inside the Sepsis-3 window. A
fraction of negative admissions carry near-miss culture/antibiotic events
(lone, or paired outside the coherence windows), transient deterioration
episodes that resolve, or chronic mild single-organ abnormalities, so the
downstream pipeline is exercised against realistic confounders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cohort import Admission, ClinicalEvent, Cohort, EventKind, write_event_csv
from .params import EWS_PANEL_VITALS

# population model per parameter: (baseline mean, between-patient sd,
# baseline clip band, measurement noise sd)
_PARAM_MODEL = {
    "systolic_bp": (126.0, 9.0, (105.0, 150.0), 7.0),
    "diastolic_bp": (76.0, 6.0, (62.0, 92.0), 5.0),
    "respiratory_frequency": (15.5, 1.6, (12.0, 20.0), 1.6),
    "pulse": (78.0, 8.0, (58.0, 100.0), 6.0),
    "spo2": (97.2, 0.9, (95.5, 99.3), 0.8),
    "temperature": (36.9, 0.25, (36.3, 37.4), 0.25),
    "pab_hydrogen_carbonate": (24.0, 1.6, (21.0, 27.0), 1.2),
    "pab_po2": (11.9, 0.7, (10.9, 13.5), 0.7),
    "pab_pco2": (5.3, 0.4, (4.6, 6.1), 0.35),
    "pab_ph": (7.40, 0.02, (7.36, 7.44), 0.02),
    "pab_lactate": (1.1, 0.25, (0.6, 1.7), 0.25),
    "pab_sodium": (139.0, 2.0, (134.0, 144.0), 1.8),
    "pab_chloride": (103.0, 2.0, (98.0, 108.0), 1.8),
    "pab_potassium": (4.1, 0.25, (3.6, 4.7), 0.22),
    "b_leukocytes": (7.4, 1.5, (4.5, 10.5), 1.2),
    "b_neutrophils": (4.4, 1.1, (2.2, 7.0), 0.9),
    "b_platelets": (255.0, 40.0, (175.0, 370.0), 14.0),
    "p_sodium": (139.0, 2.0, (134.0, 144.0), 1.8),
    "p_albumin": (40.0, 2.5, (34.0, 46.0), 2.0),
    "p_creatinine": (0.90, 0.10, (0.65, 1.08), 0.06),
    "p_bilirubin": (0.65, 0.12, (0.35, 0.95), 0.10),
    "p_potassium": (4.1, 0.25, (3.6, 4.7), 0.22),
    "p_glucose": (6.1, 0.9, (4.5, 8.5), 0.7),
    "p_crp": (8.0, 5.0, (1.0, 25.0), 4.0),
    "egfr": (86.0, 9.0, (66.0, 108.0), 5.0),
}

# full-ramp deterioration deltas for septic admissions (scaled per admission)
_SEPSIS_DRIFT = {
    "respiratory_frequency": 6.0,
    "pulse": 18.0,
    "spo2": -4.0,
    "systolic_bp": -18.0,
    "diastolic_bp": -11.0,
    "temperature": 1.3,
    "p_crp": 140.0,
    "pab_lactate": 1.8,
    "b_leukocytes": 6.5,
    "b_neutrophils": 5.5,
    "b_platelets": -150.0,
    "p_creatinine": 1.2,
    "p_bilirubin": 0.8,
    "pab_po2": -2.6,
    "pab_hydrogen_carbonate": -3.0,
    "pab_ph": -0.05,
    "egfr": -30.0,
}

# transient infection-like episodes in negative admissions: vitals and
# inflammation markers move, organ-failure labs stay put
_EPISODE_DRIFT = {
    "respiratory_frequency": 5.0,
    "pulse": 15.0,
    "spo2": -3.0,
    "systolic_bp": -13.0,
    "diastolic_bp": -8.0,
    "temperature": 1.1,
    "p_crp": 100.0,
    "b_leukocytes": 4.5,
    "b_neutrophils": 4.0,
    "pab_lactate": 0.8,
}

# values a scripted admission may show before deterioration starts: all
# SOFA subscores stay at zero so the pre-onset baseline is clean
_PRE_ONSET_SAFE = {
    "b_platelets": (155.0, None),
    "p_creatinine": (None, 1.15),
    "p_bilirubin": (None, 1.15),
    "spo2": (94.5, None),
    "pab_po2": (10.8, None),
    "systolic_bp": (103.0, None),
    "diastolic_bp": (61.0, None),
    "egfr": (62.0, None),
}

_COMMON_LABS = ("p_sodium", "p_potassium", "p_creatinine", "p_albumin",
                "b_leukocytes", "p_crp")
_SECONDARY_LABS = (("p_glucose", 0.35), ("egfr", 0.35), ("b_platelets", 0.15),
                   ("p_bilirubin", 0.12), ("b_neutrophils", 0.004))
_BLOOD_GASES = ("pab_hydrogen_carbonate", "pab_po2", "pab_pco2", "pab_ph",
                "pab_lactate", "pab_sodium", "pab_chloride", "pab_potassium")

# chronic abnormality options for negatives: (parameter, value range);
# the ranges overlap what deterioration produces, so no single lab value
# separates the classes on its own
_CHRONIC_OPTIONS = (("p_creatinine", (1.3, 2.6)), ("b_platelets", (85.0, 142.0)),
                    ("p_bilirubin", (1.3, 2.2)))

_CHAIN_PROB = 0.15        # chance an admission belongs to the previous patient
_NEAR_MISS_RATE = 0.20    # negatives with incoherent culture/antibiotic events
_EPISODE_RATE = 0.35      # negatives with a transient deterioration episode
_CHRONIC_RATE = 0.40      # negatives with one mild chronic abnormality
_MIN_SEPSIS_LOS_H = 72.0
_ONSET_MIN_H = 36.0
_ONSET_MAX_H = 400.0
_DETERIORATION_LEAD_H = 20.0


@dataclass(frozen=True)
class SynthConfig:
    n_admissions: int
    sepsis_prevalence: float = 0.0625
    los_hours: tuple = (24.0, 1200.0)
    vitals_per_day: tuple = (1.0, 8.0)
    labs_per_day: tuple = (1.0, 3.0)
    ews_assessments_per_day: tuple = (1.0, 8.0)
    temperature_at_ews_prob: float = 0.94
    seed: int = 0

    def __post_init__(self):
        if self.n_admissions < 0:
            raise ValueError("n_admissions must be >= 0")
        if not (0.0 <= self.sepsis_prevalence <= 1.0):
            raise ValueError("sepsis_prevalence must be in [0, 1]")
        for name in ("los_hours", "vitals_per_day", "labs_per_day", "ews_assessments_per_day"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must be a non-empty positive range")
        if not (0.0 <= self.temperature_at_ews_prob <= 1.0):
            raise ValueError("temperature_at_ews_prob must be in [0, 1]")


@dataclass(frozen=True)
class SepsisScript:
    onset_time: float
    si_culture_time: float
    si_abx_time: float
    sofa_step_times: tuple  # (time, parameter, value) measurements forcing the rise
    deterioration_start: float

    def __post_init__(self):
        gap = self.si_abx_time - self.si_culture_time
        coherent = (0.0 <= gap <= 72.0) or (0.0 < -gap <= 24.0)
        if not coherent:
            raise ValueError("scripted culture/antibiotic pair is not coherent")
        if min(self.si_culture_time, self.si_abx_time) != self.onset_time:
            raise ValueError("scripted onset must equal the SI index time")
        if self.onset_time < 12.0:
            raise ValueError("scripted onset must be at least 12 h into the stay")
        for t, _, _ in self.sofa_step_times:
            if not (self.onset_time - 48.0 <= t <= self.onset_time + 24.0):
                raise ValueError("SOFA step outside the Sepsis-3 window")


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    if lo == hi:
        return lo
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def _schedule(rng: np.random.Generator, start: float, end: float, mean_gap_h: float,
              min_gap_h: float = 0.3) -> list:
    times = []
    t = start
    while t < end:
        times.append(t)
        t += max(min_gap_h, float(rng.exponential(mean_gap_h)))
    return times


class _AdmissionState:
    """Per-admission value model shared by all schedules."""

    def __init__(self, rng, script: SepsisScript | None, episode: tuple | None,
                 chronic: tuple | None):
        self.rng = rng
        self.script = script
        self.episode = episode       # (start, end, severity) or None
        self.severity = float(rng.uniform(0.45, 1.1)) if script is not None else 0.0
        self.chronic_parameter = None
        self.baseline = {}
        for name, (mean, sd, band, _) in _PARAM_MODEL.items():
            self.baseline[name] = float(np.clip(rng.normal(mean, sd), band[0], band[1]))
        if chronic is not None:
            name, (lo, hi) = chronic
            self.chronic_parameter = name
            self.baseline[name] = float(rng.uniform(lo, hi))

    def _ramp(self, t: float) -> float:
        if self.script is None:
            return 0.0
        start = self.script.deterioration_start
        onset = self.script.onset_time
        if t < start:
            return 0.0
        if t <= onset + 12.0:
            return min(1.0, (t - start) / _DETERIORATION_LEAD_H)
        return max(0.0, 1.0 - (t - onset - 12.0) / 48.0)

    def _episode_ramp(self, t: float) -> float:
        if self.episode is None:
            return 0.0
        start, end, severity = self.episode
        if not (start <= t <= end):
            return 0.0
        mid = (start + end) / 2.0
        half = (end - start) / 2.0
        return severity * (1.0 - abs(t - mid) / half)

    def measure(self, name: str, t: float) -> float:
        mean, _, _, noise = _PARAM_MODEL[name]
        ramp = self._ramp(t)
        v = self.baseline[name]
        v += _SEPSIS_DRIFT.get(name, 0.0) * self.severity * ramp
        v += _EPISODE_DRIFT.get(name, 0.0) * self._episode_ramp(t)
        v += float(self.rng.normal(0.0, noise))
        if self.script is not None and ramp == 0.0 and name != self.chronic_parameter:
            lo, hi = _PRE_ONSET_SAFE.get(name, (None, None))
            if lo is not None:
                v = max(v, lo)
            if hi is not None:
                v = min(v, hi)
        if self.script is not None:
            # inside the assurance window any platelet or creatinine value
            # stays at the scripted organ-failure level, so later random
            # draws cannot undo the SOFA rise before it is observed
            onset = self.script.onset_time
            if onset - 2.0 <= t <= onset + 8.0:
                if name == "b_platelets":
                    v = min(v, 95.0)
                elif name == "p_creatinine":
                    v = max(v, 2.05)
        if name == "spo2":
            v = min(v, 100.0)
        if name in ("pab_lactate", "p_crp", "p_creatinine", "p_bilirubin",
                    "b_leukocytes", "b_neutrophils", "b_platelets", "egfr"):
            v = max(v, 0.05)
        return float(v)


def _build_script(rng: np.random.Generator, los: float) -> SepsisScript:
    onset = float(rng.uniform(_ONSET_MIN_H, min(los - 12.0, _ONSET_MAX_H)))
    if rng.random() < 0.5:
        culture = onset
        abx = onset + float(rng.uniform(1.0, min(48.0, los - onset - 0.1)))
    else:
        abx = onset
        culture = onset + float(rng.uniform(0.5, min(20.0, los - onset - 0.1)))
    steps = [
        (onset + 4.0, "b_platelets", float(rng.uniform(60.0, 90.0))),
        (onset + 4.5, "p_creatinine", float(rng.uniform(2.1, 2.6))),
    ]
    # about half the cases show a thrombocyte dip while deteriorating
    if rng.random() < 0.5:
        steps.append((onset - 17.0, "b_platelets", float(rng.uniform(125.0, 145.0))))
    steps = tuple(steps)
    return SepsisScript(onset_time=onset, si_culture_time=culture, si_abx_time=abx,
                        sofa_step_times=steps,
                        deterioration_start=onset - _DETERIORATION_LEAD_H)


def _build_admission(rng: np.random.Generator, admission_id: str, patient_id: str,
                     cfg: SynthConfig) -> Admission:
    is_sepsis = rng.random() < cfg.sepsis_prevalence
    los = _log_uniform(rng, *cfg.los_hours)
    script = None
    episode = None
    chronic = None
    near_miss = None
    if rng.random() < _CHRONIC_RATE:
        chronic = _CHRONIC_OPTIONS[int(rng.integers(len(_CHRONIC_OPTIONS)))]
    if is_sepsis:
        los = max(los, _MIN_SEPSIS_LOS_H)
        script = _build_script(rng, los)
    else:
        if rng.random() < _EPISODE_RATE and los > 30.0:
            start = float(rng.uniform(4.0, los - 26.0))
            duration = float(rng.uniform(18.0, 42.0))
            episode = (start, min(start + duration, los - 1.0),
                       float(rng.uniform(0.4, 1.0)))
        if rng.random() < _NEAR_MISS_RATE:
            near_miss = int(rng.integers(4))
    state = _AdmissionState(rng, script, episode, chronic)

    events: list[ClinicalEvent] = []

    def vital_panel(t: float, with_temperature_prob: float) -> None:
        events.append(ClinicalEvent(admission_id, t, EventKind.EWS_ASSESSMENT))
        for name in EWS_PANEL_VITALS:
            events.append(ClinicalEvent(admission_id, t, EventKind.VITAL, name,
                                        state.measure(name, t)))
        if rng.random() < with_temperature_prob:
            events.append(ClinicalEvent(admission_id, t, EventKind.VITAL, "temperature",
                                        state.measure("temperature", t)))

    # EWS assessments: clinician-driven cadence, denser while a patient looks
    # ill; stable patients sit near the low end of the configured range
    lo, hi = cfg.ews_assessments_per_day
    ews_rate = float(lo * (hi / lo) ** (rng.random() ** 2.2)) if hi > lo else float(lo)
    ews_times = _schedule(rng, float(rng.uniform(0.25, min(6.0, los / 2))), los - 0.25,
                          24.0 / ews_rate)
    if script is not None:
        t = script.deterioration_start
        stop = min(script.onset_time + 12.0, los - 0.3)
        while t < stop:
            ews_times.append(max(t, 0.3))
            t += float(rng.uniform(2.0, 4.5))
    if episode is not None:
        t = episode[0]
        while t < episode[1]:
            ews_times.append(t)
            t += float(rng.uniform(3.0, 6.0))
    for t in sorted(ews_times):
        vital_panel(t, cfg.temperature_at_ews_prob)
    vital_panel(los, cfg.temperature_at_ews_prob)  # discharge assessment closes the stay

    # sporadic standalone vitals beyond the assessment-driven cadence
    vitals_rate = _log_uniform(rng, *cfg.vitals_per_day)
    extra_rate = max(0.0, vitals_rate - ews_rate)
    if extra_rate > 0:
        vital_names = list(EWS_PANEL_VITALS) + ["temperature"]
        for t in _schedule(rng, float(rng.uniform(0.5, 12.0)), los - 0.1, 24.0 / extra_rate):
            name = vital_names[int(rng.integers(len(vital_names)))]
            events.append(ClinicalEvent(admission_id, t, EventKind.VITAL, name,
                                        state.measure(name, t)))

    # lab panels: common chemistries most of the time, the rest sparse
    labs_rate = _log_uniform(rng, *cfg.labs_per_day)
    lab_times = _schedule(rng, float(rng.uniform(2.0, 26.0)), los - 0.1, 24.0 / labs_rate)
    if script is not None:
        lab_times.append(max(0.5, script.onset_time - float(rng.uniform(2.0, 8.0))))
    for t in sorted(lab_times):
        deteriorating = script is not None and state._ramp(t) > 0.3
        for name in _COMMON_LABS:
            if rng.random() < 0.85:
                events.append(ClinicalEvent(admission_id, t, EventKind.LAB, name,
                                            state.measure(name, t)))
        for name, prob in _SECONDARY_LABS:
            if rng.random() < prob:
                events.append(ClinicalEvent(admission_id, t, EventKind.LAB, name,
                                            state.measure(name, t)))
        gas_prob = 0.5 if deteriorating else 0.08
        if rng.random() < gas_prob:
            for name in _BLOOD_GASES:
                events.append(ClinicalEvent(admission_id, t, EventKind.LAB, name,
                                            state.measure(name, t)))

    if script is not None:
        for t, name, value in script.sofa_step_times:
            t = min(max(t, 0.5), los - 0.2)
            events.append(ClinicalEvent(admission_id, t, EventKind.LAB, name, value))
        events.append(ClinicalEvent(admission_id, script.si_culture_time,
                                    EventKind.CULTURE_SAMPLE))
        events.append(ClinicalEvent(admission_id, script.si_abx_time,
                                    EventKind.ANTIBIOTIC_ADMIN))
    if near_miss is not None:
        t0 = float(rng.uniform(2.0, max(2.5, los - 2.0)))
        if near_miss == 2 and t0 + 90.0 < los:
            events.append(ClinicalEvent(admission_id, t0, EventKind.CULTURE_SAMPLE))
            events.append(ClinicalEvent(admission_id, t0 + float(rng.uniform(73.0, 90.0)),
                                        EventKind.ANTIBIOTIC_ADMIN))
        elif near_miss == 3 and t0 + 40.0 < los:
            events.append(ClinicalEvent(admission_id, t0, EventKind.ANTIBIOTIC_ADMIN))
            events.append(ClinicalEvent(admission_id, t0 + float(rng.uniform(24.5, 40.0)),
                                        EventKind.CULTURE_SAMPLE))
        elif near_miss % 2 == 0:
            events.append(ClinicalEvent(admission_id, t0, EventKind.CULTURE_SAMPLE))
        else:
            events.append(ClinicalEvent(admission_id, t0, EventKind.ANTIBIOTIC_ADMIN))

    return Admission(admission_id, patient_id, los, events), script


def generate_cohort_with_scripts(cfg: SynthConfig) -> tuple[Cohort, dict]:
    """Cohort plus the SepsisScript of every scripted admission.

    The script dict is what makes the generator testable as a labeling
    oracle: the labeler must return exactly the scripted onsets.
    """
    chain_rng = np.random.default_rng([cfg.seed, 0])
    chained = chain_rng.random(cfg.n_admissions) < _CHAIN_PROB if cfg.n_admissions else []
    admissions = []
    scripts: dict[str, SepsisScript] = {}
    patient_index = -1
    for i in range(cfg.n_admissions):
        if i == 0 or not chained[i]:
            patient_index += 1
        rng = np.random.default_rng([cfg.seed, 1, i])
        admission, script = _build_admission(rng, f"a{i:05d}", f"p{patient_index:05d}", cfg)
        admissions.append(admission)
        if script is not None:
            scripts[admission.admission_id] = script
    provenance = f"synthetic seed={cfg.seed} n={cfg.n_admissions}"
    return Cohort(tuple(admissions), provenance=provenance), scripts


def generate_cohort(cfg: SynthConfig) -> Cohort:
    """Deterministic synthetic cohort; each admission derives its own sub-seed."""
    return generate_cohort_with_scripts(cfg)[0]


def emit_event_csv(cohort: Cohort, sink) -> None:
    """Write the cohort in the event-CSV format; round-trips through parsing."""
    write_event_csv(cohort, sink)


def parse_synth_config(text: str) -> SynthConfig:
    """Flat key = value lines; ranges given as two comma-separated numbers."""
    values: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {line_no}: expected key = value")
        key, _, rhs = line.partition("=")
        key = key.strip()
        rhs = rhs.strip()
        if key in ("n_admissions", "seed"):
            values[key] = int(rhs)
        elif key in ("sepsis_prevalence", "temperature_at_ews_prob"):
            values[key] = float(rhs)
        elif key in ("los_hours", "vitals_per_day", "labs_per_day",
                     "ews_assessments_per_day"):
            parts = [p for p in rhs.replace(",", " ").split() if p]
            if len(parts) != 2:
                raise ValueError(f"config line {line_no}: {key} needs two numbers")
            values[key] = (float(parts[0]), float(parts[1]))
        else:
            raise ValueError(f"config line {line_no}: unknown key {key!r}")
    if "n_admissions" not in values:
        raise ValueError("config must set n_admissions")
    return SynthConfig(**values)
