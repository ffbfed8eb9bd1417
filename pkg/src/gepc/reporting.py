"""Static CSV and SVG renderings of a decision list's test coverage.

The CSV carries one row per rule (train count and test proportion) plus
"(uncovered)" and "(no explanation)" bucket rows, so the proportion
column always sums to 1. The charts are self-contained SVG 1.1 documents:
a bar chart on an absolute 0..1 scale and a pie chart with one slice per
nonzero bucket. All output is deterministic, byte for byte, for a given
decision list and report.
"""

import csv
import io
import math
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

from .cover import CoverageReport, DecisionList
from .errors import InvalidInputError
from .symbolic import SymbolicMsx

UNCOVERED_LABEL = "(uncovered)"
NO_EXPLANATION_LABEL = "(no explanation)"

_PALETTE = (
    "#4e79a7",
    "#f28e2b",
    "#59a14f",
    "#e15759",
    "#b07aa1",
    "#edc948",
    "#76b7b2",
    "#ff9da7",
    "#9c755f",
    "#bab0ac",
)
_UNCOVERED_COLOR = "#8c8c8c"
_NO_EXPLANATION_COLOR = "#d9d9d9"


def rule_label(rule) -> str:
    """Human-readable conjunction form of a rule."""
    if isinstance(rule, SymbolicMsx):
        return " & ".join(rule.parts)
    return " & ".join(f"{a} {pred} {b}" for a, pred, b in sorted(rule.relations))


def _check_pair(dlist: DecisionList, report: CoverageReport) -> None:
    if not dlist.entries:
        raise InvalidInputError("empty decision list: nothing to report")
    if report.mode != dlist.mode or report.rules != dlist.rules:
        raise InvalidInputError(
            "decision list and coverage report disagree on rules or mode"
        )


def _rows(dlist: DecisionList, report: CoverageReport) -> list:
    """(label, train_count or None, proportion, color) per CSV/chart row."""
    rows = []
    for i, (rule, train_count) in enumerate(dlist.entries):
        rows.append(
            (
                rule_label(rule),
                train_count,
                report.rule_counts[i] / report.n_test,
                _PALETTE[i % len(_PALETTE)],
            )
        )
    rows.append(
        (UNCOVERED_LABEL, None, report.uncovered_proportion, _UNCOVERED_COLOR)
    )
    rows.append(
        (
            NO_EXPLANATION_LABEL,
            None,
            report.no_explanation_proportion,
            _NO_EXPLANATION_COLOR,
        )
    )
    return rows


def _num(value: float) -> str:
    return f"{value:.10g}"


def coverage_csv(dlist: DecisionList, report: CoverageReport) -> str:
    _check_pair(dlist, report)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rule", "train_count", "test_proportion"])
    for label, train_count, proportion, _ in _rows(dlist, report):
        writer.writerow(
            [label, "" if train_count is None else train_count, _num(proportion)]
        )
    return buf.getvalue()


def _svg_open(width: int, height: int) -> str:
    return (
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">'
    )


def _text(x: float, y: float, content: str, cls: str, anchor: str = "middle") -> str:
    return (
        f'<text class={quoteattr(cls)} x="{x:.2f}" y="{y:.2f}" '
        f'text-anchor="{anchor}" font-family="sans-serif" font-size="11">'
        f"{escape(content)}</text>"
    )


def bar_chart_svg(dlist: DecisionList, report: CoverageReport) -> str:
    """Bar per rule and bucket, height = test proportion on a 0..1 scale."""
    _check_pair(dlist, report)
    rows = _rows(dlist, report)
    width, height = 640, 400
    left, right, top, bottom = 60, 20, 36, 44
    plot_w = width - left - right
    plot_h = height - top - bottom
    base_y = top + plot_h
    parts = [_svg_open(width, height)]
    parts.append(_text(width / 2, 20, "Test coverage by rule", "chart-title"))
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = base_y - plot_h * tick
        parts.append(
            f'<line x1="{left}" y1="{y:.2f}" x2="{left + plot_w}" y2="{y:.2f}" '
            'stroke="#cccccc" stroke-width="1"/>'
        )
        parts.append(_text(left - 8, y + 4, _num(tick), "tick", anchor="end"))
    slot = plot_w / len(rows)
    bar_w = slot * 0.7
    for i, (label, train_count, proportion, color) in enumerate(rows):
        bar_h = plot_h * proportion
        x = left + slot * i + (slot - bar_w) / 2
        y = base_y - bar_h
        detail = f"{label}: {100 * proportion:.1f}%"
        if train_count is not None:
            detail += f" (train count {train_count})"
        parts.append(
            f'<rect class="bar" x="{x:.2f}" y="{y:.2f}" '
            f'width="{bar_w:.2f}" height="{bar_h:.2f}" fill="{color}">'
            f"<title>{escape(detail)}</title></rect>"
        )
        parts.append(
            _text(left + slot * (i + 0.5), base_y + 16, f"R{i + 1}", "label")
        )
    legend_y = base_y + 32
    legend = "  ".join(
        f"R{i + 1}={label}" for i, (label, _, _, _) in enumerate(rows)
    )
    parts.append(_text(width / 2, legend_y, legend[:110], "legend"))
    parts.append("</svg>")
    return "".join(parts) + "\n"


def pie_chart_svg(dlist: DecisionList, report: CoverageReport) -> str:
    """One slice per nonzero bucket; a lone full bucket renders as a circle."""
    _check_pair(dlist, report)
    rows = [r for r in _rows(dlist, report) if r[2] > 0.0]
    width, height = 480, 400
    cx, cy, radius = 200.0, 200.0, 150.0
    parts = [_svg_open(width, height)]
    parts.append(_text(width / 2, 20, "Test coverage", "chart-title"))
    if len(rows) == 1:
        label, _, proportion, color = rows[0]
        parts.append(
            f'<circle class="slice" cx="{cx:.2f}" cy="{cy:.2f}" r="{radius:.2f}" '
            f'fill="{color}"><title>{escape(f"{label}: {100 * proportion:.1f}%")}'
            "</title></circle>"
        )
    else:
        angle = -90.0
        for label, _, proportion, color in rows:
            span = 360.0 * proportion
            a0 = math.radians(angle)
            a1 = math.radians(angle + span)
            x0, y0 = cx + radius * math.cos(a0), cy + radius * math.sin(a0)
            x1, y1 = cx + radius * math.cos(a1), cy + radius * math.sin(a1)
            large = 1 if span > 180.0 else 0
            parts.append(
                f'<path class="slice" d="M {cx:.2f} {cy:.2f} L {x0:.2f} {y0:.2f} '
                f'A {radius:.2f} {radius:.2f} 0 {large} 1 {x1:.2f} {y1:.2f} Z" '
                f'fill="{color}" stroke="#ffffff" stroke-width="1">'
                f'<title>{escape(f"{label}: {100 * proportion:.1f}%")}</title></path>'
            )
            angle += span
    for i, (label, _, proportion, color) in enumerate(rows):
        y = 60.0 + 18.0 * i
        parts.append(
            f'<rect class="swatch" x="370" y="{y - 9:.2f}" width="12" height="12" '
            f'fill="{color}"/>'
        )
        parts.append(
            _text(388, y, f"{label[:24]} {100 * proportion:.1f}%", "legend", "start")
        )
    parts.append("</svg>")
    return "".join(parts) + "\n"


FORMATS = ("csv", "svg", "all")


def emit_report(
    dlist: DecisionList, report: CoverageReport, out_dir, fmt: str = "all"
) -> list:
    """Write coverage.csv and/or the two SVG charts into out_dir."""
    if fmt not in FORMATS:
        raise InvalidInputError(f"unknown report format {fmt!r}; pick from {FORMATS}")
    _check_pair(dlist, report)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("csv", "all"):
        path = out_dir / "coverage.csv"
        path.write_text(coverage_csv(dlist, report))
        written.append(path)
    if fmt in ("svg", "all"):
        bar = out_dir / "coverage_bar.svg"
        bar.write_text(bar_chart_svg(dlist, report))
        written.append(bar)
        pie = out_dir / "coverage_pie.svg"
        pie.write_text(pie_chart_svg(dlist, report))
        written.append(pie)
    return written
