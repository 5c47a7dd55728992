"""Sepsis-3 labeling: suspected infection, hourly SOFA, onset decision.

Suspected infection (SI) pairs a culture sample with an antibiotic
administration: culture first requires the antibiotic within 72 hours,
antibiotic first requires the culture within 24 hours. An admission is
labelled septic when, around some SI index time, the total SOFA score
rises by two or more points inside the window [index - 48 h, index + 24 h]
relative to the score at the window start. Onset is anchored at the SI
index time of the first qualifying episode.

The SOFA score here is a partial score driven by what the ward data
carries: no GCS (CNS always 0), no vasopressor doses (cardiovascular
capped at 1 via mean arterial pressure < 70), respiration from pO2 with
an SpO2 proxy before the first blood gas, renal from creatinine with an
eGFR proxy before the first creatinine. Coagulation and liver use the
standard platelet and bilirubin bands.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .cohort import Admission, EventKind

CULTURE_TO_ABX_MAX_H = 72.0
ABX_TO_CULTURE_MAX_H = 24.0
SI_WINDOW_BEFORE_H = 48.0
SI_WINDOW_AFTER_H = 24.0
SOFA_RISE_POINTS = 2

SOFA_ORGANS = ("respiration", "coagulation", "liver", "cardiovascular", "renal")

# Keep in report metadata next to any label-derived numbers: this is a
# partial SOFA, not the full bedside score.
SOFA_METHOD_NOTE = (
    "partial SOFA: CNS always 0 (no GCS), cardiovascular capped at 1 via "
    "MAP=(sys+2*dia)/3 < 70 (no vasopressor data), respiration from pO2 "
    "(<10.7 kPa: 1, <8.0: 2) with SpO2 proxy before the first blood gas "
    "(<94: 1, <90: 2), renal from creatinine with eGFR proxy before the "
    "first creatinine, standard platelet and bilirubin bands"
)


class SIOrdering(enum.Enum):
    CULTURE_FIRST = "culture_first"
    ABX_FIRST = "abx_first"


@dataclass(frozen=True, slots=True)
class SIEpisode:
    index_time: float
    culture_time: float
    abx_time: float
    ordering: SIOrdering

    def __post_init__(self):
        gap = self.abx_time - self.culture_time
        if self.ordering is SIOrdering.CULTURE_FIRST:
            if not (0.0 <= gap <= CULTURE_TO_ABX_MAX_H):
                raise ValueError(f"culture-first gap {gap:g}h outside [0, 72]")
        else:
            if not (0.0 < -gap <= ABX_TO_CULTURE_MAX_H):
                raise ValueError(f"abx-first gap {-gap:g}h outside (0, 24]")
        if self.index_time != min(self.culture_time, self.abx_time):
            raise ValueError("index_time must be the earlier of culture and abx")


@dataclass(frozen=True)
class SofaSeries:
    """Total SOFA and per-organ subscores sampled at integer hours 0..floor(los)."""

    values: np.ndarray
    subscores: dict[str, np.ndarray]
    step: float = 1.0

    def __len__(self):
        return len(self.values)

    def value_at(self, t: float) -> int:
        """Piecewise-constant value at hour floor(t), clipped to the grid."""
        k = min(max(int(math.floor(t)), 0), len(self.values) - 1)
        return int(self.values[k])

    def first_positive_hour(self) -> float | None:
        nz = np.nonzero(self.values > 0)[0]
        if len(nz) == 0:
            return None
        return float(nz[0])


@dataclass(frozen=True)
class SepsisLabel:
    onset: float | None
    si_episodes: tuple[SIEpisode, ...]
    triggering_episode: int | None

    @property
    def is_positive(self) -> bool:
        return self.onset is not None


def detect_suspected_infection(admission: Admission) -> list[SIEpisode]:
    """All SI episodes, deduplicated greedily and sorted by index time.

    Events are scanned in time order (culture before antibiotic at equal
    times); each unused event claims its earliest valid unused partner, so
    every culture and antibiotic participates in at most one episode.
    """
    cultures = [float(t) for t in admission.event_times(EventKind.CULTURE_SAMPLE)]
    abx = [float(t) for t in admission.event_times(EventKind.ANTIBIOTIC_ADMIN)]
    stream = sorted(
        [(t, 0, i) for i, t in enumerate(cultures)]
        + [(t, 1, i) for i, t in enumerate(abx)])
    used_culture = np.zeros(len(cultures), dtype=bool)
    used_abx = np.zeros(len(abx), dtype=bool)
    episodes: list[SIEpisode] = []
    for t, is_abx, idx in stream:
        if is_abx:
            if used_abx[idx]:
                continue
            # earliest unused culture in (t, t + 24]
            for j, ct in enumerate(cultures):
                if used_culture[j] or ct <= t:
                    continue
                if ct - t > ABX_TO_CULTURE_MAX_H:
                    break
                used_abx[idx] = True
                used_culture[j] = True
                episodes.append(SIEpisode(t, ct, t, SIOrdering.ABX_FIRST))
                break
        else:
            if used_culture[idx]:
                continue
            # earliest unused antibiotic in [t, t + 72]
            for j, at in enumerate(abx):
                if used_abx[j] or at < t:
                    continue
                if at - t > CULTURE_TO_ABX_MAX_H:
                    break
                used_culture[idx] = True
                used_abx[j] = True
                episodes.append(SIEpisode(t, t, at, SIOrdering.CULTURE_FIRST))
                break
    episodes.sort(key=lambda e: e.index_time)
    return episodes


def _locf(times: np.ndarray, values: np.ndarray, hours: np.ndarray) -> np.ndarray:
    """Latest value at or before each hour; NaN before the first measurement."""
    out = np.full(len(hours), np.nan)
    if len(times) == 0:
        return out
    idx = np.searchsorted(times, hours, side="right") - 1
    have = idx >= 0
    out[have] = values[np.clip(idx, 0, None)][have]
    return out


def _band(series: np.ndarray, edges: list[float], ascending: bool) -> np.ndarray:
    """Map a measurement series onto 0..len(edges) subscore points.

    ``ascending=True`` scores high values (edges are lower bounds),
    ``ascending=False`` scores low values (edges are upper bounds).
    Hours without a measurement score 0.
    """
    score = np.zeros(len(series), dtype=np.int64)
    have = ~np.isnan(series)
    for points, edge in enumerate(edges, start=1):
        if ascending:
            score[have & (series >= edge)] = points
        else:
            score[have & (series < edge)] = points
    return score


def sofa_series(admission: Admission) -> SofaSeries:
    """Hourly partial SOFA series over the whole stay.

    Each subscore is piecewise constant, driven by the most recent relevant
    measurement; it is 0 before the first measurement exists.
    """
    n_hours = int(math.floor(admission.length_of_stay)) + 1
    hours = np.arange(n_hours, dtype=np.float64)

    platelets = _locf(*admission.parameter_series("b_platelets"), hours)
    coagulation = _band(platelets, [150.0, 100.0, 50.0, 20.0], ascending=False)

    bilirubin = _locf(*admission.parameter_series("p_bilirubin"), hours)
    liver = _band(bilirubin, [1.2, 2.0, 6.0, 12.0], ascending=True)

    creatinine = _locf(*admission.parameter_series("p_creatinine"), hours)
    egfr = _locf(*admission.parameter_series("egfr"), hours)
    renal = _band(creatinine, [1.2, 2.0, 3.5, 5.0], ascending=True)
    egfr_band = _band(egfr, [60.0, 45.0, 30.0, 15.0], ascending=False)
    no_creatinine = np.isnan(creatinine)
    renal[no_creatinine] = egfr_band[no_creatinine]

    sys_bp = _locf(*admission.parameter_series("systolic_bp"), hours)
    dia_bp = _locf(*admission.parameter_series("diastolic_bp"), hours)
    mean_arterial = (sys_bp + 2.0 * dia_bp) / 3.0
    cardiovascular = np.zeros(n_hours, dtype=np.int64)
    cardiovascular[~np.isnan(mean_arterial) & (mean_arterial < 70.0)] = 1

    po2 = _locf(*admission.parameter_series("pab_po2"), hours)
    spo2 = _locf(*admission.parameter_series("spo2"), hours)
    respiration = _band(po2, [10.7, 8.0], ascending=False)
    spo2_band = _band(spo2, [94.0, 90.0], ascending=False)
    no_po2 = np.isnan(po2)
    respiration[no_po2] = spo2_band[no_po2]

    subscores = {
        "respiration": respiration,
        "coagulation": coagulation,
        "liver": liver,
        "cardiovascular": cardiovascular,
        "renal": renal,
    }
    total = sum(subscores.values())
    return SofaSeries(values=total, subscores=subscores)


def _episode_qualifies(episode: SIEpisode, sofa: SofaSeries, length_of_stay: float) -> bool:
    start = episode.index_time - SI_WINDOW_BEFORE_H
    end = min(episode.index_time + SI_WINDOW_AFTER_H, length_of_stay)
    baseline = 0 if start < 0 else sofa.value_at(start)
    k0 = int(math.ceil(max(start, 0.0)))
    k1 = min(int(math.floor(end)), len(sofa.values) - 1)
    if k0 > k1:
        return False
    peak = int(np.max(sofa.values[k0:k1 + 1]))
    return peak - baseline >= SOFA_RISE_POINTS


def sepsis_onset(admission: Admission) -> SepsisLabel:
    """Label one admission: onset at the first SI episode with a SOFA rise >= 2."""
    episodes = tuple(detect_suspected_infection(admission))
    if not episodes:
        return SepsisLabel(None, episodes, None)
    sofa = sofa_series(admission)
    for i, episode in enumerate(episodes):
        if _episode_qualifies(episode, sofa, admission.length_of_stay):
            return SepsisLabel(episode.index_time, episodes, i)
    return SepsisLabel(None, episodes, None)


def label_cohort(cohort) -> dict[str, SepsisLabel]:
    """Labels per admission id, in cohort order."""
    return {a.admission_id: sepsis_onset(a) for a in cohort}
