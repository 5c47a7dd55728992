"""Patient-grouped cross-validation, ranking metrics and the experiment driver.

Five folds: patients are shuffled once and cut into five equal blocks.
Fold i holds out block i, splitting it into validation and test halves
(10% each of all patients), and trains on the remaining 80%. All samples
of a patient stay on one side of every cut, so no patient leaks between
partitions; across the five folds the test sets are disjoint.

AUROC is the Mann-Whitney pairwise-ranking probability with ties counted
as one half. AUPRC is step-wise average precision: the mean over positives
of the precision at each positive's rank, with descending stable ordering
so equally-scored rows keep their input order. Confidence intervals over
fold values use the t distribution with 4 degrees of freedom.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import sepsis3
from .cohort import Cohort
from .features import Dataset, MissingnessTable, build_dataset, missingness_report
from .framing import (ClassBalance, FramingConfig, FramingKind, class_balance,
                      sample_cohort)
from .gbdt import HyperParams, train
from .treeshap import (SHAP_SCALE_NOTE, ImportanceTable, TreeShapExplainer,
                       global_importance)

N_FOLDS = 5
BACKGROUND_CAP = 2048

CI_METHOD_NOTE = ("95% CI half-width = t(0.975, df=4) * sd / sqrt(5) over the five "
                  "fold values; the t-based form reproduces the published "
                  "supplementary interval arithmetic")


def thread_count() -> int:
    """Parallelism cap from FRAMEBENCH_THREADS (0 or unset = serial)."""
    raw = os.environ.get("FRAMEBENCH_THREADS", "0")
    try:
        return max(0, int(raw))
    except ValueError:
        return 0


@dataclass(frozen=True)
class Fold:
    index: int
    train: tuple
    validation: tuple
    test: tuple


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)


def cv_split(dataset: Dataset, seed: int) -> FoldPlan:
    """Deterministic grouped split: 80% train / 10% validation / 10% test."""
    patients = sorted(set(dataset.patient_ids))
    if len(patients) < 2 * N_FOLDS:
        raise ValueError(f"need at least {2 * N_FOLDS} patients, got {len(patients)}")
    rng = np.random.default_rng(seed)
    order = [patients[i] for i in rng.permutation(len(patients))]
    blocks = [list(b) for b in np.array_split(np.arange(len(order)), N_FOLDS)]
    folds = []
    for i in range(N_FOLDS):
        held = [order[j] for j in blocks[i]]
        half = len(held) // 2
        validation = tuple(held[:half])
        test = tuple(held[half:])
        train_ids = tuple(p for j, p in enumerate(order) if j not in set(blocks[i]))
        folds.append(Fold(index=i, train=train_ids, validation=validation, test=test))
    return FoldPlan(folds=tuple(folds), seed=seed)


def auroc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    boundaries = np.flatnonzero(np.r_[True, np.diff(sorted_scores) != 0])
    counts = np.diff(np.r_[boundaries, len(scores)])
    group_rank = boundaries + (counts - 1) / 2.0 + 1.0  # 1-based average rank per tie group
    group_of = np.repeat(np.arange(len(boundaries)), counts)
    ranks = np.empty(len(scores))
    ranks[order] = group_rank[group_of]
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Average precision: mean precision at each positive's rank, scores descending."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise ValueError("AUPRC needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    y = (labels[order] == 1)
    hits = np.cumsum(y)
    ranks = np.arange(1, len(y) + 1)
    return float(np.mean(hits[y] / ranks[y]))


def fold_ci(values, level: float = 0.95) -> tuple[float, float]:
    """(mean, half-width) of the t-based confidence interval over 5 fold values."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) != N_FOLDS:
        raise ValueError(f"expected {N_FOLDS} fold values, got {len(values)}")
    mean = float(np.mean(values))
    sd = float(np.std(values, ddof=1))
    t = float(stats.t.ppf((1.0 + level) / 2.0, df=len(values) - 1))
    return mean, t * sd / math.sqrt(len(values))


@dataclass(frozen=True)
class FoldMetrics:
    index: int
    n_test: int
    n_pos: int
    auroc: float | None
    auprc: float | None
    val_auroc: float | None
    val_auprc: float | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class FramingResult:
    framing: FramingKind
    config: FramingConfig
    folds: tuple
    auroc_mean: float | None
    auroc_half_width: float | None
    auprc_mean: float | None
    auprc_half_width: float | None
    balance: ClassBalance
    missingness: MissingnessTable
    importance: ImportanceTable
    explanation_parts: tuple
    pooled_test: Dataset


@dataclass(frozen=True)
class MetricsReport:
    framings: dict
    seed: int
    hyperparams: HyperParams
    metadata: dict


def _safe_metric(fn, scores, labels) -> float | None:
    try:
        return fn(scores, labels)
    except ValueError:
        return None


def _run_fold(dataset: Dataset, fold: Fold, hp: HyperParams, seed: int):
    train_ds = dataset.subset(dataset.rows_for_patients(fold.train))
    val_ds = dataset.subset(dataset.rows_for_patients(fold.validation))
    test_ds = dataset.subset(dataset.rows_for_patients(fold.test))
    n_pos = int((test_ds.labels == 1).sum())
    if len(test_ds) == 0 or n_pos in (0, len(test_ds)):
        metrics = FoldMetrics(fold.index, len(test_ds), n_pos, None, None, None, None,
                              error="single-class test partition")
        return metrics, None
    try:
        model = train(train_ds, replace(hp, seed=hp.seed + fold.index))
    except ValueError as exc:
        metrics = FoldMetrics(fold.index, len(test_ds), n_pos, None, None, None, None,
                              error=str(exc))
        return metrics, None
    test_scores = model.predict_proba(test_ds.X)
    val_scores = model.predict_proba(val_ds.X) if len(val_ds) else np.empty(0)
    metrics = FoldMetrics(
        index=fold.index,
        n_test=len(test_ds),
        n_pos=n_pos,
        auroc=auroc(test_scores, test_ds.labels),
        auprc=auprc(test_scores, test_ds.labels),
        val_auroc=_safe_metric(auroc, val_scores, val_ds.labels) if len(val_ds) else None,
        val_auprc=_safe_metric(auprc, val_scores, val_ds.labels) if len(val_ds) else None,
    )
    background = train_ds.X
    if len(background) > BACKGROUND_CAP:
        rng = np.random.default_rng([seed, 101, fold.index])
        rows = np.sort(rng.choice(len(background), BACKGROUND_CAP, replace=False))
        background = background[rows]
    explanations = TreeShapExplainer(model, background).explain_matrix(test_ds.X)
    return metrics, (explanations, test_ds)


def evaluate_dataset(dataset: Dataset, hp: HyperParams, seed: int,
                     config: FramingConfig | None = None,
                     balance: ClassBalance | None = None) -> FramingResult:
    """Cross-validate one framed dataset: per-fold metrics, CIs, pooled SHAP."""
    if balance is None:
        positives = int((dataset.labels == 1).sum())
        balance = ClassBalance(positives=positives, negatives=len(dataset) - positives)
    missing = missingness_report(dataset)
    plan = cv_split(dataset, seed)

    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda f: _run_fold(dataset, f, hp, seed), plan.folds))
    else:
        outcomes = [_run_fold(dataset, f, hp, seed) for f in plan.folds]

    fold_metrics = tuple(m for m, _ in outcomes)
    parts = [p for _, p in outcomes if p is not None]
    explanation_parts = tuple(e for e, _ in parts)
    if parts:
        pooled_test = _concat_datasets([ds for _, ds in parts])
    else:
        pooled_test = dataset.subset(np.empty(0, dtype=np.int64))

    valid = [m for m in fold_metrics if m.ok]
    if len(valid) == N_FOLDS:
        auroc_mean, auroc_hw = fold_ci([m.auroc for m in valid])
        auprc_mean, auprc_hw = fold_ci([m.auprc for m in valid])
    else:
        auroc_mean = auroc_hw = auprc_mean = auprc_hw = None

    if explanation_parts:
        importance = global_importance(list(explanation_parts))
    else:
        importance = ImportanceTable(entries=tuple((n, 0.0) for n in dataset.feature_names))

    return FramingResult(
        framing=dataset.framing,
        config=config if config is not None else FramingConfig(kind=dataset.framing),
        folds=fold_metrics,
        auroc_mean=auroc_mean,
        auroc_half_width=auroc_hw,
        auprc_mean=auprc_mean,
        auprc_half_width=auprc_hw,
        balance=balance,
        missingness=missing,
        importance=importance,
        explanation_parts=explanation_parts,
        pooled_test=pooled_test,
    )


def _concat_datasets(parts: list) -> Dataset:
    return Dataset(
        X=np.vstack([p.X for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        patient_ids=tuple(pid for p in parts for pid in p.patient_ids),
        admission_ids=tuple(a for p in parts for a in p.admission_ids),
        prediction_times=np.concatenate([p.prediction_times for p in parts]),
        framing=parts[0].framing,
        provenance=parts[0].provenance,
        feature_names=parts[0].feature_names,
    )


def run_experiment(cohort: Cohort, framings: list, hp: HyperParams,
                   seed: int) -> MetricsReport:
    """Label the cohort once, then frame / featurize / cross-validate per framing."""
    if not framings:
        raise ValueError("no framings requested")
    labels = sepsis3.label_cohort(cohort)
    sofa_cache = None
    results: dict[str, FramingResult] = {}
    for config in framings:
        config = replace(config, seed=seed)
        if config.kind is FramingKind.SLIDING_WINDOW_DYNAMIC_INCLUSION and sofa_cache is None:
            sofa_cache = {a.admission_id: sepsis3.sofa_series(a) for a in cohort}
        samples = sample_cohort(cohort, labels, config, sofa_cache)
        if not samples:
            raise ValueError(f"framing {config.kind.value} produced no samples")
        dataset = build_dataset(cohort, samples,
                                observation_window_h=config.observation_window_h,
                                provenance=cohort.provenance)
        results[config.kind.value] = evaluate_dataset(
            dataset, hp, seed, config=config, balance=class_balance(samples))
    metadata = {
        "seed": seed,
        "sofa_method": sepsis3.SOFA_METHOD_NOTE,
        "shap_scale": SHAP_SCALE_NOTE,
        "ci_method": CI_METHOD_NOTE,
    }
    return MetricsReport(framings=results, seed=seed, hyperparams=hp, metadata=metadata)


def _round6(x) -> float | None:
    return None if x is None else round(float(x), 6)


def report_to_json_dict(report: MetricsReport) -> dict:
    """Report as a JSON-ready dict: one key per framing plus 'metadata'."""
    doc: dict = {}
    for name, res in report.framings.items():
        folds = []
        for m in res.folds:
            entry = {
                "auroc": _round6(m.auroc),
                "auprc": _round6(m.auprc),
                "n_test": m.n_test,
                "n_pos": m.n_pos,
                "val_auroc": _round6(m.val_auroc),
                "val_auprc": _round6(m.val_auprc),
            }
            if m.error is not None:
                entry["error"] = m.error
            folds.append(entry)
        doc[name] = {
            "folds": folds,
            "auroc_mean": _round6(res.auroc_mean),
            "auroc_ci": _round6(res.auroc_half_width),
            "auprc_mean": _round6(res.auprc_mean),
            "auprc_ci": _round6(res.auprc_half_width),
            "class_ratio": res.balance.ratio_text(),
            "n_positive": res.balance.positives,
            "n_negative": res.balance.negatives,
            "missingness": {k: round(v, 2) for k, v in res.missingness.percents.items()},
        }
    doc["metadata"] = {
        "seed": report.seed,
        "hyperparams": {
            "n_rounds": report.hyperparams.n_rounds,
            "max_depth": report.hyperparams.max_depth,
            "learning_rate": report.hyperparams.learning_rate,
            "min_child_weight": report.hyperparams.min_child_weight,
            "l2_reg": report.hyperparams.l2_reg,
            "subsample": report.hyperparams.subsample,
            "seed": report.hyperparams.seed,
        },
        "notes": {k: v for k, v in report.metadata.items() if k != "seed"},
    }
    return doc
