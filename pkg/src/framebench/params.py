"""Registry of the 25 clinical parameters tracked per admission.

Six vital signs plus nineteen laboratory parameters. Values are carried
unitless end to end; the plausibility ranges below are only used for
report-style validation (warn, never drop or clamp).
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True, slots=True)
class ParameterInfo:
    name: str
    kind: str  # "vital" or "lab"
    plausible_lo: float
    plausible_hi: float


VITAL_PARAMETERS = (
    ParameterInfo("systolic_bp", "vital", 30.0, 300.0),
    ParameterInfo("diastolic_bp", "vital", 10.0, 200.0),
    ParameterInfo("respiratory_frequency", "vital", 2.0, 80.0),
    ParameterInfo("pulse", "vital", 10.0, 300.0),
    ParameterInfo("spo2", "vital", 0.0, 100.0),
    ParameterInfo("temperature", "vital", 25.0, 45.0),
)

LAB_PARAMETERS = (
    ParameterInfo("pab_hydrogen_carbonate", "lab", 2.0, 60.0),
    ParameterInfo("pab_po2", "lab", 1.0, 80.0),
    ParameterInfo("pab_pco2", "lab", 0.5, 30.0),
    ParameterInfo("pab_ph", "lab", 6.5, 8.0),
    ParameterInfo("pab_lactate", "lab", 0.0, 40.0),
    ParameterInfo("pab_sodium", "lab", 90.0, 200.0),
    ParameterInfo("pab_chloride", "lab", 60.0, 160.0),
    ParameterInfo("pab_potassium", "lab", 1.0, 12.0),
    ParameterInfo("b_leukocytes", "lab", 0.0, 300.0),
    ParameterInfo("b_neutrophils", "lab", 0.0, 200.0),
    ParameterInfo("b_platelets", "lab", 0.0, 2000.0),
    ParameterInfo("p_sodium", "lab", 90.0, 200.0),
    ParameterInfo("p_albumin", "lab", 5.0, 80.0),
    ParameterInfo("p_creatinine", "lab", 0.05, 25.0),
    ParameterInfo("p_bilirubin", "lab", 0.0, 50.0),
    ParameterInfo("p_potassium", "lab", 1.0, 12.0),
    ParameterInfo("p_glucose", "lab", 0.5, 80.0),
    ParameterInfo("p_crp", "lab", 0.0, 800.0),
    ParameterInfo("egfr", "lab", 0.0, 250.0),
)

ALL_PARAMETERS = VITAL_PARAMETERS + LAB_PARAMETERS

PARAMETER_NAMES = tuple(p.name for p in ALL_PARAMETERS)
PARAMETER_INDEX = {p.name: i for i, p in enumerate(ALL_PARAMETERS)}
PARAMETER_INFO = {p.name: p for p in ALL_PARAMETERS}

VITAL_NAMES = tuple(p.name for p in VITAL_PARAMETERS)
LAB_NAMES = tuple(p.name for p in LAB_PARAMETERS)

# Vitals recorded together with every early-warning-score assessment.
# Temperature is taken at most assessments but not guaranteed.
EWS_PANEL_VITALS = (
    "pulse",
    "respiratory_frequency",
    "spo2",
    "systolic_bp",
    "diastolic_bp",
)

# Fixed order of the 50 model features: the 25 current values followed by
# the 25 deltas between the two 6-hour timesteps of the observation window.
FEATURE_NAMES = PARAMETER_NAMES + tuple(f"{n}_delta" for n in PARAMETER_NAMES)

N_PARAMETERS = len(PARAMETER_NAMES)
N_FEATURES = len(FEATURE_NAMES)
