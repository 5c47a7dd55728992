"""Command-line pipeline: synth, label, frame, featurize, train, evaluate,
explain, report, plot.

Every subcommand is a pure function of its inputs and the seed: no clock,
no system entropy, byte-identical outputs on re-runs. Exit codes: 0 on
success, 1 on usage errors, 2 on data errors (unparseable files, schema
mismatches, inconsistent cohorts).

Ingested cohorts are always passed through the admission-length filter
(24 h to 50 days) before labeling or sampling.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import svgplot
from .cohort import (CohortError, Cohort, filter_admissions, parse_event_stream,
                     validate_cohort)
from .evaluation import (MetricsReport, evaluate_dataset, report_to_json_dict,
                         run_experiment)
from .features import (Dataset, build_dataset, read_dataset_csv, write_dataset_csv)
from .framing import (FramingConfig, FramingKind, framing_from_name, read_samples_csv,
                      sample_cohort, write_samples_csv)
from .gbdt import HyperParams, ModelFormatError, load_model, save_model, train
from .sepsis3 import label_cohort, sofa_series
from .synthgen import emit_event_csv, generate_cohort, parse_synth_config
from .treeshap import (ImportanceTable, TreeShapExplainer, dependence_data,
                       global_importance, summary_data)

DEFAULT_FRAMINGS = (
    FramingKind.FIXED_TIME_TO_ONSET,
    FramingKind.SLIDING_WINDOW,
    FramingKind.SLIDING_WINDOW_DYNAMIC_INCLUSION,
    FramingKind.ON_CLINICAL_DEMAND,
)

_HP_INT_KEYS = ("n_rounds", "max_depth")
_HP_FLOAT_KEYS = ("learning_rate", "min_child_weight", "l2_reg", "subsample")
_WINDOW_KEYS = ("prediction_window_h", "chunk_h", "horizon_h", "observation_window_h")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    framings: tuple = DEFAULT_FRAMINGS
    seed: int = 0
    plots: bool = True
    hyperparams: HyperParams = field(default_factory=HyperParams)
    window_overrides: dict = field(default_factory=dict)          # global window params
    per_framing_overrides: dict = field(default_factory=dict)     # framing -> {key: value}


def parse_run_config(text: str) -> RunConfig:
    """Flat key = value config for the experiment driver.

    Window keys may be prefixed with a framing name (dotted) to override a
    single framing, e.g. ``sliding_window.chunk_h = 6``.
    """
    cfg = RunConfig()
    hp_kwargs: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {line_no}: expected key = value")
        key, _, rhs = line.partition("=")
        key = key.strip()
        rhs = rhs.strip()
        if key == "seed":
            cfg.seed = int(rhs)
        elif key == "plots":
            cfg.plots = rhs.lower() in ("1", "true", "yes", "on")
        elif key == "framings":
            names = [n.strip() for n in rhs.replace(",", " ").split() if n.strip()]
            cfg.framings = tuple(framing_from_name(n) for n in names)
        elif key in _HP_INT_KEYS:
            hp_kwargs[key] = int(rhs)
        elif key in _HP_FLOAT_KEYS:
            hp_kwargs[key] = float(rhs)
        elif key in _WINDOW_KEYS:
            cfg.window_overrides[key] = float(rhs)
        elif "." in key:
            framing_name, _, sub = key.partition(".")
            framing_from_name(framing_name)
            if sub not in _WINDOW_KEYS:
                raise ValueError(f"config line {line_no}: unknown framing key {sub!r}")
            cfg.per_framing_overrides.setdefault(framing_name, {})[sub] = float(rhs)
        else:
            raise ValueError(f"config line {line_no}: unknown key {key!r}")
    if hp_kwargs:
        cfg.hyperparams = HyperParams(**hp_kwargs)
    return cfg


def _framing_configs(cfg: RunConfig, args) -> list:
    names = args.framing if getattr(args, "framing", None) else [k.value for k in cfg.framings]
    overrides = dict(cfg.window_overrides)
    for key, flag in (("prediction_window_h", "prediction_window_h"),
                      ("chunk_h", "chunk_h"), ("horizon_h", "horizon_h"),
                      ("observation_window_h", "observation_window_h")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    out = []
    for name in names:
        kind = framing_from_name(name)
        kwargs = dict(overrides)
        kwargs.update(cfg.per_framing_overrides.get(name, {}))
        out.append(FramingConfig(kind=kind, seed=cfg.seed, **kwargs))
    return out


def _load_cohort(path: str) -> Cohort:
    with open(path, "rb") as fh:
        cohort = parse_event_stream(fh, provenance=path)
    return filter_admissions(cohort)


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = parse_run_config(Path(args.config).read_text(encoding="utf-8"))
    else:
        cfg = RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.hyperparams = replace(cfg.hyperparams, seed=cfg.seed)
    return cfg


def _pick_dataset(datasets: dict, requested: list | None, what: str) -> Dataset:
    if requested:
        name = requested[0]
        if name not in datasets:
            raise ValueError(f"{what} has no rows for framing {name!r}")
        return datasets[name]
    if len(datasets) != 1:
        raise ValueError(f"{what} contains framings {sorted(datasets)}; "
                         f"pick one with --framing")
    return next(iter(datasets.values()))


def _cmd_synth(args) -> int:
    cfg = parse_synth_config(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cohort = generate_cohort(cfg)
    with open(args.out, "wb") as fh:
        emit_event_csv(cohort, fh)
    report = validate_cohort(cohort)
    print(f"wrote {len(cohort)} admissions to {args.out} "
          f"({len(report.violations)} validation warnings)")
    return 0


def _cmd_label(args) -> int:
    cohort = _load_cohort(args.infile)
    labels = label_cohort(cohort)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["admission_id", "onset_h"])
        for admission in cohort:
            label = labels[admission.admission_id]
            writer.writerow([admission.admission_id,
                             "" if label.onset is None else repr(label.onset)])
    n_pos = sum(1 for v in labels.values() if v.is_positive)
    print(f"labelled {len(cohort)} admissions: {n_pos} septic")
    return 0


def _cmd_frame(args) -> int:
    cfg = _load_run_config(args)
    cohort = _load_cohort(args.infile)
    labels = label_cohort(cohort)
    samples = []
    for fconfig in _framing_configs(cfg, args):
        sofa = None
        if fconfig.kind is FramingKind.SLIDING_WINDOW_DYNAMIC_INCLUSION:
            sofa = {a.admission_id: sofa_series(a) for a in cohort}
        samples.extend(sample_cohort(cohort, labels, fconfig, sofa))
    with open(args.out, "wb") as fh:
        write_samples_csv(samples, fh)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _cmd_featurize(args) -> int:
    cohort = _load_cohort(args.infile)
    with open(args.samples, "rb") as fh:
        samples = read_samples_csv(fh)
    obs = args.observation_window_h if args.observation_window_h is not None else 12.0
    groups: dict[str, list] = {}
    for s in samples:
        groups.setdefault(s.framing.value, []).append(s)
    with open(args.out, "wb") as fh:
        first = True
        for name, group in groups.items():
            dataset = build_dataset(cohort, group, observation_window_h=obs,
                                    provenance=args.infile)
            write_dataset_csv(dataset, fh, header=first)
            first = False
    print(f"wrote {len(samples)} feature rows to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_run_config(args)
    with open(args.infile, "rb") as fh:
        datasets = read_dataset_csv(fh)
    dataset = _pick_dataset(datasets, args.framing, args.infile)
    model = train(dataset, cfg.hyperparams)
    with open(args.out, "wb") as fh:
        save_model(model, fh)
    print(f"trained on {len(dataset)} rows; final train log-loss "
          f"{model.train_losses[-1]:.6f}" if model.train_losses else
          f"trained on {len(dataset)} rows")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load_run_config(args)
    with open(args.infile, "rb") as fh:
        datasets = read_dataset_csv(fh)
    dataset = _pick_dataset(datasets, args.framing, args.infile)
    result = evaluate_dataset(dataset, cfg.hyperparams, cfg.seed)
    report = MetricsReport(framings={dataset.framing.value if dataset.framing else "all":
                                     result},
                           seed=cfg.seed, hyperparams=cfg.hyperparams,
                           metadata={"seed": cfg.seed})
    doc = report_to_json_dict(report)
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"wrote metrics to {args.out}")
    return 0


def _cmd_explain(args) -> int:
    with open(args.model, "rb") as fh:
        model = load_model(fh)
    with open(args.infile, "rb") as fh:
        datasets = read_dataset_csv(fh)
    dataset = _pick_dataset(datasets, args.framing, args.infile)
    background = dataset.X
    if len(background) > 2048:
        rng = np.random.default_rng([args.seed if args.seed is not None else 0, 101])
        background = background[np.sort(rng.choice(len(background), 2048, replace=False))]
    explanations = TreeShapExplainer(model, background).explain_matrix(dataset.X)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "shap_values.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"phi_{n}" for n in model.feature_names] + ["base_value", "margin"])
        for i in range(len(explanations)):
            writer.writerow([repr(float(v)) for v in explanations.phis[i]]
                            + [repr(float(explanations.base_value)),
                               repr(float(explanations.margins[i]))])
    table = global_importance(explanations)
    with open(out_dir / "importance.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature", "mean_abs_shap"])
        for name, value in table.entries:
            writer.writerow([name, repr(float(value))])
    print(f"wrote explanations for {len(explanations)} rows to {out_dir}")
    return 0


def _cmd_report(args) -> int:
    cfg = _load_run_config(args)
    if args.infile.endswith(".csv"):
        cohort = _load_cohort(args.infile)
    else:
        synth_cfg = parse_synth_config(Path(args.infile).read_text(encoding="utf-8"))
        cohort = filter_admissions(generate_cohort(synth_cfg))
    framing_configs = _framing_configs(cfg, args)
    report = run_experiment(cohort, framing_configs, cfg.hyperparams, cfg.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = report_to_json_dict(report)
    (out_dir / "report.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if cfg.plots:
        (out_dir / "metrics.svg").write_text(svgplot.plot_metrics(doc), encoding="utf-8")
        for name, res in report.framings.items():
            parts = list(res.explanation_parts)
            if not parts:
                continue
            (out_dir / f"importance_{name}.svg").write_text(
                svgplot.plot_importance(res.importance), encoding="utf-8")
            summary = summary_data(parts, res.pooled_test)
            top = [n for n, _ in res.importance.top(10)]
            (out_dir / f"summary_{name}.svg").write_text(
                svgplot.plot_summary(summary, features=top), encoding="utf-8")
            dependence = dependence_data(parts, res.pooled_test, "spo2")
            if dependence:
                (out_dir / f"dependence_spo2_{name}.svg").write_text(
                    svgplot.plot_dependence(dependence, "spo2"), encoding="utf-8")
    print(f"wrote report to {out_dir}")
    return 0


def _cmd_plot(args) -> int:
    out = Path(args.out)
    if args.kind == "metrics":
        doc = json.loads(Path(args.infile).read_text(encoding="utf-8"))
        out.write_text(svgplot.plot_metrics(doc), encoding="utf-8")
    elif args.kind == "importance":
        entries = []
        with open(args.infile, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["feature", "mean_abs_shap"]:
                raise ValueError(f"bad importance CSV header: {header!r}")
            for row in reader:
                entries.append((row[0], float(row[1])))
        out.write_text(svgplot.plot_importance(ImportanceTable(entries=tuple(entries))),
                       encoding="utf-8")
    else:
        phis, names = _read_shap_csv(args.infile)
        if not args.data:
            raise ValueError(f"plot --kind {args.kind} needs --data features.csv")
        with open(args.data, "rb") as fh:
            datasets = read_dataset_csv(fh)
        dataset = _pick_dataset(datasets, args.framing, args.data)
        if len(dataset) != len(phis):
            raise ValueError(f"{len(phis)} explanation rows vs {len(dataset)} data rows")
        if args.kind == "summary":
            means = np.abs(phis).mean(axis=0)
            order = sorted(range(len(names)), key=lambda j: (-means[j], j))[:10]
            data = {}
            for j in order:
                column = dataset.X[:, j]
                data[names[j]] = [(float(phis[i, j]),
                                   None if np.isnan(column[i]) else float(column[i]),
                                   bool(np.isnan(column[i]))) for i in range(len(phis))]
            out.write_text(svgplot.plot_summary(data, features=[names[j] for j in order]),
                           encoding="utf-8")
        else:  # dependence
            feature = args.feature or "spo2"
            if feature not in names:
                raise ValueError(f"unknown feature {feature!r}")
            j = names.index(feature)
            column = dataset.X[:, j]
            pairs = sorted((float(column[i]), float(phis[i, j]))
                           for i in range(len(phis)) if not np.isnan(column[i]))
            out.write_text(svgplot.plot_dependence(pairs, feature), encoding="utf-8")
    print(f"wrote {out}")
    return 0


def _read_shap_csv(path: str):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-2:] != ["base_value", "margin"] or not all(
                c.startswith("phi_") for c in header[:-2]):
            raise ValueError(f"bad SHAP CSV header in {path}")
        names = [c[len("phi_"):] for c in header[:-2]]
        rows = [[float(c) for c in row[:len(names)]] for row in reader if row]
    return np.asarray(rows, dtype=np.float64), names


def _build_parser() -> _Parser:
    parser = _Parser(prog="framebench",
                     description="Sepsis risk-prediction framing benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        return p

    p = add("synth", _cmd_synth, "generate a synthetic cohort CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = add("label", _cmd_label, "write per-admission sepsis onset labels")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)

    p = add("frame", _cmd_frame, "emit prediction-time samples for framings")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--framing", action="append", default=None)
    p.add_argument("--prediction-window-h", dest="prediction_window_h", type=float)
    p.add_argument("--chunk-h", dest="chunk_h", type=float)
    p.add_argument("--horizon-h", dest="horizon_h", type=float)
    p.add_argument("--observation-window-h", dest="observation_window_h", type=float)

    p = add("featurize", _cmd_featurize, "turn samples into 50-feature rows")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--observation-window-h", dest="observation_window_h", type=float)

    p = add("train", _cmd_train, "train the boosted-tree model on a feature CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--framing", action="append", default=None)

    p = add("evaluate", _cmd_evaluate, "cross-validate a feature CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--framing", action="append", default=None)

    p = add("explain", _cmd_explain, "per-row attributions and importance table")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--framing", action="append", default=None)

    p = add("report", _cmd_report, "full experiment: report JSON plus figures")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--framing", action="append", default=None)
    p.add_argument("--prediction-window-h", dest="prediction_window_h", type=float)
    p.add_argument("--chunk-h", dest="chunk_h", type=float)
    p.add_argument("--horizon-h", dest="horizon_h", type=float)
    p.add_argument("--observation-window-h", dest="observation_window_h", type=float)

    p = add("plot", _cmd_plot, "re-emit a figure from saved artifacts")
    p.add_argument("--kind", required=True,
                   choices=["metrics", "importance", "summary", "dependence"])
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--feature", default=None)
    p.add_argument("--framing", action="append", default=None)

    return parser


def main(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except (CohortError, ModelFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main(sys.argv[1:]))
