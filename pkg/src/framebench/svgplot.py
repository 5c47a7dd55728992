"""Dependency-free SVG emitters for the report figures.

All geometry is formatted with fixed precision and no entropy enters the
layout, so a given input always produces byte-identical SVG; the files
diff cleanly in golden tests. Dense scatters are thinned by a
deterministic stride, never by sampling.
"""

from __future__ import annotations

import math

_FONT = "font-family=\"Helvetica, Arial, sans-serif\""

MAX_POINTS_PER_STRIP = 1500
ZOOM_PANEL_YMAX = 0.04


def _f(x: float) -> str:
    return f"{x:.2f}"


def _esc(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def _svg(width: int, height: int, body: list) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>',
                      *body, "</svg>"]) + "\n"


def _text(x: float, y: float, s: str, size: int = 11, anchor: str = "start",
          color: str = "#222222") -> str:
    return (f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}" '
            f'fill="{color}" {_FONT}>{_esc(s)}</text>')


def _line(x1, y1, x2, y2, color="#555555", width=1.0) -> str:
    return (f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
            f'stroke="{color}" stroke-width="{_f(width)}"/>')


def _rect(x, y, w, h, color) -> str:
    return (f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
            f'fill="{color}"/>')


def _circle(x, y, r, color, opacity=0.8) -> str:
    return (f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r)}" fill="{color}" '
            f'fill-opacity="{_f(opacity)}"/>')


def _stride(n: int, cap: int) -> int:
    return max(1, int(math.ceil(n / cap)))


def plot_importance(table, max_features: int = 10) -> str:
    """Horizontal bars of mean |phi|, largest on top."""
    entries = list(table.entries)[:max_features]
    if not entries:
        raise ValueError("importance table is empty")
    width, row_h, left, right_pad, top = 640, 26, 210, 70, 40
    height = top + row_h * len(entries) + 30
    vmax = max(v for _, v in entries) or 1.0
    span = width - left - right_pad
    body = [_text(left, 22, "Mean |attribution| (margin scale)", size=13)]
    for i, (name, value) in enumerate(entries):
        y = top + i * row_h
        body.append(_text(left - 8, y + 15, name, anchor="end"))
        body.append(_rect(left, y + 4, span * value / vmax, row_h - 10, "#3b6fb6"))
        body.append(_text(left + span * value / vmax + 5, y + 15, f"{value:.4f}", size=10,
                          color="#555555"))
    body.append(_line(left, top - 4, left, top + row_h * len(entries)))
    return _svg(width, height, body)


def _value_color(value, lo: float, hi: float) -> str:
    """Blue for low, purple for mid, red for high; gray for missing."""
    if value is None:
        return "#9e9e9e"
    if hi <= lo:
        return "#7f4fa3"
    f = (value - lo) / (hi - lo)
    if f < 1.0 / 3.0:
        return "#2a66c8"
    if f < 2.0 / 3.0:
        return "#7f4fa3"
    return "#d13838"


def plot_summary(data: dict, features: list | None = None,
                 max_features: int = 10) -> str:
    """One dot strip per feature: x is the attribution, color the raw value tercile."""
    if not data:
        raise ValueError("summary data is empty")
    if features is None:
        ranked = sorted(data, key=lambda k: (-_mean_abs(data[k]), list(data).index(k)))
        features = ranked[:max_features]
    else:
        features = list(features)[:max_features]
    width, row_h, left, right_pad, top = 760, 34, 210, 40, 46
    height = top + row_h * len(features) + 34
    phis = [p for f in features for p, _, _ in data[f]]
    if not phis:
        raise ValueError("summary data has no rows")
    pmax = max(abs(min(phis)), abs(max(phis))) or 1.0
    span = width - left - right_pad
    mid_x = left + span / 2.0

    def x_of(phi):
        return mid_x + (phi / pmax) * (span / 2.0)

    body = [_text(left, 22, "Attribution per row, colored by the raw value", size=13),
            _line(mid_x, top - 6, mid_x, top + row_h * len(features), color="#bbbbbb")]
    for i, name in enumerate(features):
        rows = data[name]
        y0 = top + i * row_h + row_h / 2.0
        body.append(_text(left - 8, y0 + 4, name, anchor="end"))
        present = [v for _, v, missing in rows if not missing]
        lo = min(present) if present else 0.0
        hi = max(present) if present else 0.0
        step = _stride(len(rows), MAX_POINTS_PER_STRIP)
        for k in range(0, len(rows), step):
            phi, value, missing = rows[k]
            jitter = ((k * 2654435761) % 1000) / 1000.0 - 0.5
            body.append(_circle(x_of(phi), y0 + jitter * (row_h - 12), 1.6,
                                _value_color(None if missing else value, lo, hi),
                                opacity=0.65))
    body.append(_text(mid_x, height - 12, "0", size=10, anchor="middle"))
    body.append(_text(left, height - 12, f"{-pmax:.3f}", size=10))
    body.append(_text(width - right_pad, height - 12, f"{pmax:.3f}", size=10, anchor="end"))
    return _svg(width, height, body)


def _mean_abs(rows) -> float:
    if not rows:
        return 0.0
    return sum(abs(p) for p, _, _ in rows) / len(rows)


def plot_dependence(pairs: list, feature: str) -> str:
    """Raw value vs attribution scatter for one feature."""
    if not pairs:
        raise ValueError("dependence data is empty")
    width, height = 560, 420
    left, right, top, bottom = 70, 20, 40, 50
    xs = [v for v, _ in pairs]
    ys = [p for _, p in pairs]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    pw, ph = width - left - right, height - top - bottom

    def px(v):
        return left + (v - x_lo) / (x_hi - x_lo) * pw

    def py(p):
        return top + (y_hi - p) / (y_hi - y_lo) * ph

    body = [_text(left, 22, f"Attribution vs {feature}", size=13),
            _line(left, height - bottom, width - right, height - bottom),
            _line(left, top, left, height - bottom)]
    if y_lo < 0 < y_hi:
        body.append(_line(left, py(0.0), width - right, py(0.0), color="#cccccc"))
    step = _stride(len(pairs), 4 * MAX_POINTS_PER_STRIP)
    for k in range(0, len(pairs), step):
        v, p = pairs[k]
        body.append(_circle(px(v), py(p), 1.8, "#3b6fb6", opacity=0.5))
    body.append(_text(left, height - 18, f"{x_lo:.3g}", size=10))
    body.append(_text(width - right, height - 18, f"{x_hi:.3g}", size=10, anchor="end"))
    body.append(_text(left - 6, py(y_lo) + 4, f"{y_lo:.3f}", size=10, anchor="end"))
    body.append(_text(left - 6, py(y_hi) + 4, f"{y_hi:.3f}", size=10, anchor="end"))
    body.append(_text((left + width - right) / 2, height - 8, feature, size=11,
                      anchor="middle"))
    return _svg(width, height, body)


def plot_metrics(report_doc: dict, zoom_y_max: float = ZOOM_PANEL_YMAX) -> str:
    """AUROC and AUPRC bars with CI whiskers, plus a magnified AUPRC panel."""
    framings = [k for k in report_doc if k != "metadata"]
    if not framings:
        raise ValueError("report has no framings")
    panel_w, height = 360, 360
    left, top, bottom = 56, 56, 96
    width = panel_w * 3 + 40
    panels = [("AUROC", "auroc_mean", "auroc_ci", 1.0),
              ("AUPRC", "auprc_mean", "auprc_ci", 1.0),
              (f"AUPRC (0 to {zoom_y_max:g})", "auprc_mean", "auprc_ci", zoom_y_max)]
    body = []
    for pi, (title, mean_key, ci_key, y_max) in enumerate(panels):
        x0 = 20 + pi * panel_w
        ph = height - top - bottom
        pw = panel_w - left - 24
        body.append(_text(x0 + left, 30, title, size=13))
        body.append(_line(x0 + left, top, x0 + left, top + ph))
        body.append(_line(x0 + left, top + ph, x0 + left + pw, top + ph))
        for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
            y = top + ph * (1 - frac)
            body.append(_line(x0 + left - 3, y, x0 + left, y))
            body.append(_text(x0 + left - 6, y + 4, f"{y_max * frac:.3g}", size=9,
                              anchor="end"))
        bar_w = pw / max(1, len(framings)) * 0.6
        for bi, name in enumerate(framings):
            entry = report_doc[name]
            mean = entry.get(mean_key)
            ci = entry.get(ci_key)
            cx = x0 + left + pw * (bi + 0.5) / len(framings)
            label_y = top + ph + 14 + (bi % 2) * 12
            body.append(_text(cx, label_y, name, size=8, anchor="middle"))
            if mean is None:
                body.append(_text(cx, top + ph - 6, "n/a", size=9, anchor="middle",
                                  color="#a33333"))
                continue
            frac = min(1.0, max(0.0, mean / y_max))
            bar_h = ph * frac
            body.append(_rect(cx - bar_w / 2, top + ph - bar_h, bar_w, bar_h, "#3b6fb6"))
            if ci is not None:
                y_hi = top + ph * (1 - min(1.0, (mean + ci) / y_max))
                y_lo = top + ph * (1 - min(1.0, max(0.0, mean - ci) / y_max))
                body.append(_line(cx, y_hi, cx, y_lo, color="#222222", width=1.4))
                body.append(_line(cx - 4, y_hi, cx + 4, y_hi, color="#222222", width=1.4))
                body.append(_line(cx - 4, y_lo, cx + 4, y_lo, color="#222222", width=1.4))
    return _svg(width, height, body)
