"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Golden arithmetic is checked against published fold tables; everything that
depends on data runs on the default synthetic cohort (2000 admissions,
seed 7) with a fixed seed, so the whole suite is deterministic.
"""

import contextlib
import json
import time

import numpy as np
import pytest

from framebench import sepsis3
from framebench.cli import main as cli_main
from framebench.evaluation import auprc, auroc, fold_ci, run_experiment
from framebench.features import Dataset, build_dataset, missingness_report
from framebench.framing import (ClassBalance, FramingConfig, FramingKind,
                                class_balance, sample_cohort)
from framebench.gbdt import HyperParams, load_model, save_model, train
from framebench.params import EWS_PANEL_VITALS, PARAMETER_NAMES
from framebench.treeshap import TreeShapExplainer, brute_force_shap, shap_values

from oracles import auroc_pairwise, average_precision_walk, sepsis_onset_brute
from test_sepsis3 import make_admission, random_small_admission
from test_treeshap import random_ensemble, random_rows

SEED = 7

EVALUATED_FRAMINGS = (FramingKind.FIXED_TIME_TO_ONSET, FramingKind.SLIDING_WINDOW,
                      FramingKind.SLIDING_WINDOW_DYNAMIC_INCLUSION,
                      FramingKind.ON_CLINICAL_DEMAND)

# light but fully real hyperparameters keep the experiment inside the
# acceptance runtime budget; orderings do not depend on long training
EXPERIMENT_HP = HyperParams(n_rounds=60, max_depth=3, learning_rate=0.2, seed=SEED)


@contextlib.contextmanager
def criterion(number: int, name: str):
    start = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} ({name}): FAIL [{time.monotonic() - start:.1f}s]")
        raise
    print(f"ACCEPTANCE {number} ({name}): PASS [{time.monotonic() - start:.1f}s]")


@pytest.fixture(scope="module")
def experiment(default_cohort):
    framings = [FramingConfig(kind=k) for k in EVALUATED_FRAMINGS]
    start = time.monotonic()
    report = run_experiment(default_cohort, framings, EXPERIMENT_HP, seed=SEED)
    report.metadata["elapsed_s"] = time.monotonic() - start
    return report


def test_criterion_1_ci_golden():
    with criterion(1, "t-based CI reproduces published fold tables"):
        start = time.monotonic()
        mean, half = fold_ci([0.400, 0.390, 0.348, 0.385, 0.390])
        assert abs(mean - 0.3825) <= 0.0005
        assert abs(half - 0.0251) <= 0.001
        mean, half = fold_ci([0.8181, 0.8259, 0.8101, 0.8173, 0.8192])
        assert abs(mean - 0.8181) <= 0.0005
        assert abs(half - 0.0070) <= 0.0005
        assert time.monotonic() - start < 1.0


def test_criterion_2_class_ratios(default_cohort, default_labels, default_sofa):
    with criterion(2, "class-ratio reproduction"):
        start = time.monotonic()
        assert ClassBalance(positives=1250, negatives=18726).ratio_text() == "1:14.98"

        fixed = class_balance(sample_cohort(
            default_cohort, default_labels,
            FramingConfig(kind=FramingKind.FIXED_TIME_TO_ONSET, seed=SEED)))
        assert 15.0 * 0.7 <= fixed.negatives_per_positive <= 15.0 * 1.3, fixed.ratio_text()

        sliding = class_balance(sample_cohort(
            default_cohort, default_labels,
            FramingConfig(kind=FramingKind.SLIDING_WINDOW, seed=SEED), default_sofa))
        assert sliding.negatives_per_positive > 100.0, sliding.ratio_text()
        assert time.monotonic() - start < 30.0


def test_criterion_3_missingness_structure(default_cohort, default_labels, default_sofa):
    with criterion(3, "missingness structure across framings"):
        start = time.monotonic()
        reports = {}
        for kind in EVALUATED_FRAMINGS:
            config = FramingConfig(kind=kind, seed=SEED)
            samples = sample_cohort(default_cohort, default_labels, config, default_sofa)
            reports[kind] = missingness_report(build_dataset(default_cohort, samples))

        ocd = reports[FramingKind.ON_CLINICAL_DEMAND]
        for vital in EWS_PANEL_VITALS:
            assert ocd.percent(vital) == 0.0, vital
        six_vitals = list(EWS_PANEL_VITALS) + ["temperature"]
        for kind in EVALUATED_FRAMINGS:
            if kind is FramingKind.ON_CLINICAL_DEMAND:
                continue
            for vital in six_vitals:
                assert ocd.percent(vital) < reports[kind].percent(vital), (kind, vital)
        for kind, report in reports.items():
            for name in PARAMETER_NAMES:
                assert report.percent(f"{name}_delta") >= report.percent(name), \
                    (kind, name)
        assert time.monotonic() - start < 120.0


def test_criterion_4_metric_ordering(experiment):
    with criterion(4, "AUPRC ordering with similar AUROC"):
        results = experiment.framings
        auprc_means = {k: results[k.value].auprc_mean for k in EVALUATED_FRAMINGS}
        auroc_means = {k: results[k.value].auroc_mean for k in EVALUATED_FRAMINGS}
        assert all(v is not None for v in auprc_means.values()), auprc_means
        assert all(v is not None for v in auroc_means.values()), auroc_means

        assert auprc_means[FramingKind.FIXED_TIME_TO_ONSET] > \
            auprc_means[FramingKind.ON_CLINICAL_DEMAND] > \
            auprc_means[FramingKind.SLIDING_WINDOW], auprc_means

        spread = max(auroc_means.values()) - min(auroc_means.values())
        assert spread <= 0.15, (auroc_means, spread)
        assert experiment.metadata["elapsed_s"] < 600.0


def test_auroc_varies_less_than_auprc_across_framings(experiment):
    # population-level performance looks similar across framings while the
    # average precision separates them sharply
    results = experiment.framings
    aurocs = [results[k.value].auroc_mean for k in EVALUATED_FRAMINGS]
    auprcs = [results[k.value].auprc_mean for k in EVALUATED_FRAMINGS]
    assert max(aurocs) / min(aurocs) < max(auprcs) / min(auprcs)


def test_criterion_5_metric_oracles():
    with criterion(5, "AUROC/AUPRC against brute-force oracles"):
        assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75,
                                                                           abs=1e-12)
        rng = np.random.default_rng(SEED)
        checked = 0
        while checked < 1000:
            n = int(rng.integers(2, 51))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                continue
            scores = np.round(rng.random(n), 2)
            assert abs(auroc(scores, labels)
                       - auroc_pairwise(scores, labels)) <= 1e-12
            checked += 1

        checked = 0
        while checked < 1000:
            n = int(rng.integers(1, 13))
            labels = rng.integers(0, 2, size=n)
            if labels.max() == 0:
                labels[int(rng.integers(n))] = 1
            scores = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=n)
            assert abs(auprc(scores, labels)
                       - average_precision_walk(scores, labels)) <= 1e-12
            checked += 1


def test_criterion_6_shap_exactness(default_cohort, default_labels):
    with criterion(6, "SHAP brute-force equality and local accuracy"):
        start = time.monotonic()
        rng = np.random.default_rng(23)
        for _ in range(200):
            n_features = int(rng.integers(1, 9))
            model = random_ensemble(rng, n_features=n_features,
                                    n_trees=int(rng.integers(1, 4)),
                                    depth=int(rng.integers(1, 5)))
            background = random_rows(rng, int(rng.integers(1, 20)), n_features)
            x = random_rows(rng, 1, n_features)[0]
            fast = shap_values(model, x, background)
            slow = brute_force_shap(model, x, background)
            assert np.max(np.abs(fast.phis - slow.phis)) <= 1e-9

        config = FramingConfig(kind=FramingKind.FIXED_TIME_TO_ONSET, seed=SEED)
        samples = sample_cohort(default_cohort, default_labels, config)
        dataset = build_dataset(default_cohort, samples)
        model = train(dataset, HyperParams(n_rounds=40, max_depth=3, seed=SEED))
        explainer = TreeShapExplainer(model, dataset.X)
        explanations = explainer.explain_matrix(dataset.X)
        assert len(explanations) >= 1000
        assert explanations.local_accuracy_gaps().max() <= 1e-9
        assert time.monotonic() - start < 120.0


def test_criterion_7_labeler_oracle():
    with criterion(7, "Sepsis-3 labeler vs exhaustive evaluator on 10000 admissions"):
        rng = np.random.default_rng(41)
        agree = 0
        for _ in range(10000):
            admission, cultures, abx, values, los = random_small_admission(rng)
            expected = sepsis_onset_brute(cultures, abx, values, los)
            got = sepsis3.sepsis_onset(admission).onset
            assert got == expected, (cultures, abx, values, los)
            agree += 1
        assert agree == 10000

        # exact window and rise boundaries
        assert sepsis3.sepsis_onset(make_admission(
            cultures=[0], abx=[72], labs=[(10, "b_platelets", 99)])).onset == 0
        assert sepsis3.sepsis_onset(make_admission(
            cultures=[0], abx=[72.01], labs=[(10, "b_platelets", 99)])).onset is None
        assert sepsis3.sepsis_onset(make_admission(
            cultures=[24], abx=[0], labs=[(10, "b_platelets", 99)])).onset == 0
        assert sepsis3.sepsis_onset(make_admission(
            cultures=[24.01], abx=[0], labs=[(10, "b_platelets", 99)])).onset is None
        assert sepsis3.sepsis_onset(make_admission(
            cultures=[60], abx=[70], labs=[(70, "b_platelets", 99)])).onset == 60
        assert sepsis3.sepsis_onset(make_admission(
            cultures=[60], abx=[70], labs=[(70, "b_platelets", 101)])).onset is None


def test_criterion_8_gbdt_sanity(default_cohort, default_labels):
    with criterion(8, "boosting sanity: loss, separable toy, round trip"):
        config = FramingConfig(kind=FramingKind.FIXED_TIME_TO_ONSET, seed=SEED)
        samples = sample_cohort(default_cohort, default_labels, config)
        dataset = build_dataset(default_cohort, samples)
        model = train(dataset, HyperParams(n_rounds=50, max_depth=3, seed=SEED))
        losses = np.asarray(model.train_losses)
        assert np.all(np.diff(losses) <= 1e-12)

        rng = np.random.default_rng(2)
        x = np.concatenate([rng.uniform(-2, -0.1, 30), rng.uniform(0.1, 2, 30)])
        y = (x > 0).astype(int)
        toy = train(Dataset.from_arrays(x[:, None], y),
                    HyperParams(n_rounds=50, max_depth=1, min_child_weight=0.0))
        predictions = (toy.predict_proba(x[:, None]) > 0.5).astype(int)
        assert np.array_equal(predictions, y)

        import io
        buf = io.BytesIO()
        save_model(model, buf)
        buf.seek(0)
        loaded = load_model(buf)
        gap = np.max(np.abs(loaded.predict_margin(dataset.X)
                            - model.predict_margin(dataset.X)))
        assert gap <= 1e-12


REPORT_SYNTH_CFG = "n_admissions = 140\nsepsis_prevalence = 0.10\nlos_hours = 24, 400\nseed = 5\n"
REPORT_RUN_CFG = ("n_rounds = 8\nmax_depth = 2\nlearning_rate = 0.3\n"
                  "framings = fixed_time_to_onset, sliding_window\nseed = 5\n")


def test_criterion_9_byte_identical_reports(tmp_path):
    with criterion(9, "byte-identical report re-runs"):
        (tmp_path / "synth.cfg").write_text(REPORT_SYNTH_CFG)
        (tmp_path / "run.cfg").write_text(REPORT_RUN_CFG)
        assert cli_main(["synth", "--config", str(tmp_path / "synth.cfg"),
                         "--out", str(tmp_path / "cohort.csv")]) == 0
        outputs = []
        for run in ("one", "two"):
            out = tmp_path / run
            assert cli_main(["report", "--in", str(tmp_path / "cohort.csv"),
                             "--config", str(tmp_path / "run.cfg"),
                             "--out", str(out)]) == 0
            files = sorted(p.name for p in out.iterdir())
            outputs.append({name: (out / name).read_bytes() for name in files})
        assert outputs[0].keys() == outputs[1].keys()
        assert "report.json" in outputs[0]
        assert any(name.endswith(".svg") for name in outputs[0])
        for name in outputs[0]:
            assert outputs[0][name] == outputs[1][name], name
