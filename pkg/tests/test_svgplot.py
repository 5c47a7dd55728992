import pytest

from framebench.svgplot import (plot_dependence, plot_importance, plot_metrics,
                                plot_summary)
from framebench.treeshap import ImportanceTable


def importance_table(n=12):
    return ImportanceTable(entries=tuple((f"f{i}", 1.0 / (i + 1)) for i in range(n)))


def test_importance_renders_top_ten_bars():
    svg = plot_importance(importance_table())
    assert svg.startswith("<svg")
    assert svg.count('fill="#3b6fb6"') == 10
    assert "f0" in svg and "f9" in svg and "f10" not in svg


def test_importance_is_deterministic():
    assert plot_importance(importance_table()) == plot_importance(importance_table())


def test_importance_empty_is_error():
    with pytest.raises(ValueError):
        plot_importance(ImportanceTable(entries=()))


def _summary_data(n_rows=40):
    return {
        "a": [(0.01 * i, float(i), False) for i in range(n_rows)],
        "b": [(-0.005 * i, None, True) for i in range(n_rows)],
    }


def test_summary_has_one_strip_per_feature():
    svg = plot_summary(_summary_data())
    assert svg.count("<circle") == 80
    assert ">a<" in svg and ">b<" in svg


def test_summary_empty_is_error():
    with pytest.raises(ValueError):
        plot_summary({})


def test_dependence_scatter():
    pairs = [(float(v), 0.1 * v) for v in range(30)]
    svg = plot_dependence(pairs, "spo2")
    assert svg.count("<circle") == 30
    assert "spo2" in svg
    with pytest.raises(ValueError):
        plot_dependence([], "spo2")


REPORT_DOC = {
    "fixed_time_to_onset": {"auroc_mean": 0.82, "auroc_ci": 0.01,
                            "auprc_mean": 0.385, "auprc_ci": 0.025},
    "sliding_window": {"auroc_mean": 0.78, "auroc_ci": 0.009,
                       "auprc_mean": 0.007, "auprc_ci": 0.002},
    "metadata": {"seed": 0},
}


def test_metrics_plot_has_zoom_panel_bounded_at_004():
    svg = plot_metrics(REPORT_DOC)
    assert "AUPRC (0 to 0.04)" in svg
    assert svg.count("fixed_time_to_onset") == 3  # one label per panel


def test_metrics_plot_handles_unavailable_means():
    doc = dict(REPORT_DOC)
    doc["broken"] = {"auroc_mean": None, "auroc_ci": None,
                     "auprc_mean": None, "auprc_ci": None}
    svg = plot_metrics(doc)
    assert "n/a" in svg


def test_metrics_plot_is_deterministic():
    assert plot_metrics(REPORT_DOC) == plot_metrics(REPORT_DOC)
