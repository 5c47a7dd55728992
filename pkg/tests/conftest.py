import pytest

from framebench import sepsis3
from framebench.synthgen import SynthConfig, generate_cohort

# The default synthetic cohort used by the acceptance suite and the heavier
# structural tests: 2000 admissions, seed 7.
DEFAULT_N = 2000
DEFAULT_SEED = 7


@pytest.fixture(scope="session")
def default_cohort():
    return generate_cohort(SynthConfig(n_admissions=DEFAULT_N, seed=DEFAULT_SEED))


@pytest.fixture(scope="session")
def default_labels(default_cohort):
    return sepsis3.label_cohort(default_cohort)


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(SynthConfig(n_admissions=250, seed=11))


@pytest.fixture(scope="session")
def small_labels(small_cohort):
    return sepsis3.label_cohort(small_cohort)


@pytest.fixture(scope="session")
def default_sofa(default_cohort):
    return {a.admission_id: sepsis3.sofa_series(a) for a in default_cohort}
