"""Result charts as standalone SVG, plus gnuplot-compatible TSV dumps."""

from __future__ import annotations

import xml.etree.ElementTree as ET

from .bench import RunRecord, summarize

_WIDTH, _HEIGHT = 640, 420
_MARGIN = 60
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]


def summary_tsv(records: list[RunRecord]) -> str:
    """One row per (method, budget): method, budget, mean, se."""
    lines = ["method\tbudget\tmean\tse"]
    for (method, budget), (mean, se) in sorted(summarize(records).items()):
        lines.append(f"{method}\t{budget}\t{mean:.6f}\t{se:.6f}")
    return "\n".join(lines) + "\n"


def _el(parent, tag, text=None, **attrs):
    attrib = {k.replace("_", "-"): str(v) for k, v in attrs.items()}
    node = ET.SubElement(parent, tag, attrib)
    if text is not None:
        node.text = text
    return node


def _scale(v, lo, hi, out_lo, out_hi):
    if hi == lo:
        return (out_lo + out_hi) / 2.0
    return out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)


def accuracy_vs_budget_svg(records: list[RunRecord], title: str = "validation accuracy vs budget") -> str:
    """Line chart with standard-error bars, one series per method."""
    if not records:
        raise ValueError("no records to plot")
    summary = summarize(records)
    methods = sorted({m for m, _ in summary})
    budgets = sorted({b for _, b in summary})
    means = [v[0] for v in summary.values()]
    ses = [v[1] for v in summary.values()]
    y_lo = min(m - s for m, s in zip(means, ses)) - 0.01
    y_hi = max(m + s for m, s in zip(means, ses)) + 0.01
    x_lo, x_hi = min(budgets), max(budgets)

    svg = ET.Element("svg", {"xmlns": "http://www.w3.org/2000/svg", "width": str(_WIDTH), "height": str(_HEIGHT)})
    _el(svg, "rect", x=0, y=0, width=_WIDTH, height=_HEIGHT, fill="white")
    _el(svg, "text", text=title, x=_WIDTH // 2, y=24, text_anchor="middle", font_size=16)

    def px(b):
        return _scale(b, x_lo, x_hi, _MARGIN, _WIDTH - _MARGIN)

    def py(a):
        return _scale(a, y_lo, y_hi, _HEIGHT - _MARGIN, _MARGIN)

    _el(svg, "line", x1=_MARGIN, y1=_HEIGHT - _MARGIN, x2=_WIDTH - _MARGIN, y2=_HEIGHT - _MARGIN, stroke="black")
    _el(svg, "line", x1=_MARGIN, y1=_MARGIN, x2=_MARGIN, y2=_HEIGHT - _MARGIN, stroke="black")
    for b in budgets:
        _el(svg, "text", text=str(b), x=f"{px(b):.1f}", y=_HEIGHT - _MARGIN + 18, text_anchor="middle", font_size=11)
    for frac in (0.0, 0.5, 1.0):
        a = y_lo + frac * (y_hi - y_lo)
        _el(svg, "text", text=f"{a:.3f}", x=_MARGIN - 6, y=f"{py(a) + 4:.1f}", text_anchor="end", font_size=11)

    for mi, method in enumerate(methods):
        color = _COLORS[mi % len(_COLORS)]
        pts = [(b, *summary[(method, b)]) for b in budgets if (method, b) in summary]
        path = " ".join(
            f"{'M' if i == 0 else 'L'}{px(b):.1f},{py(mean):.1f}" for i, (b, mean, _) in enumerate(pts)
        )
        _el(svg, "path", d=path, stroke=color, fill="none", stroke_width=2)
        for b, mean, se in pts:
            _el(svg, "line", x1=f"{px(b):.1f}", y1=f"{py(mean - se):.1f}", x2=f"{px(b):.1f}", y2=f"{py(mean + se):.1f}", stroke=color)
            _el(svg, "circle", cx=f"{px(b):.1f}", cy=f"{py(mean):.1f}", r=3, fill=color)
        _el(svg, "text", text=method, x=_WIDTH - _MARGIN + 6, y=_MARGIN + 16 * mi + 10, font_size=12, fill=color)

    return ET.tostring(svg, encoding="unicode")


def lambda_sweep_svg(rows: list[dict], title: str = "validation accuracy vs lambda_ot") -> str:
    """Chart for the OT-weight sweep; rows carry lambda_ot/B/mean/se."""
    if not rows:
        raise ValueError("no sweep rows to plot")
    fake = [
        RunRecord(
            seed=0, method=f"lambda={r['lambda_ot']:g}", dataset="", k=0, B=r["B"],
            lambda_ot=r["lambda_ot"], bilevel=True, ot=True, ranknet=True,
            val_accuracy=r["mean"], test_accuracy=0.0, pretrain_seconds=0.0, acquire_seconds=0.0,
        )
        for r in rows
    ]
    return accuracy_vs_budget_svg(fake, title=title)
