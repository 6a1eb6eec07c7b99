"""CSV and SVG output for benchmark records.

Everything here is a pure function of its inputs: rows are sorted, numbers
are formatted with ``repr``-style shortest round-trip strings, and the SVG is
assembled by hand, so identical records give identical bytes.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from .bench import AGG_FIELDS, RunRecord, aggregate

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT = 640, 400
MARGIN = 56


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row[h]) for h in header])
    return buf.getvalue()


def _sorted(records):
    return sorted(records, key=lambda r: (r.problem, r.method, r.seed))


def records_csv(records) -> str:
    return _csv_text(RunRecord.CSV_FIELDS, [r.row() for r in _sorted(records)])


def aggregate_csv(records) -> str:
    return _csv_text(AGG_FIELDS, aggregate(records))


def history_csv(history) -> str:
    """Best-cost history of one plan: iteration, time and the three costs."""
    header = ("iteration", "wall_time_s", "running_cost", "terminal_cost", "total_cost")
    return _csv_text(header, [dict(zip(header, h)) for h in history])


def read_records_csv(path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [RunRecord.from_row(r) for r in rows]


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _n(v: float) -> str:
    # fixed precision keeps coordinates stable and short
    return f"{v:.2f}"


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    x0, y0, x1, y1 = MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN // 2, MARGIN // 2
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="16" text-anchor="middle">{_esc(title)}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) // 2}" y="{HEIGHT - 12}" text-anchor="middle">{_esc(xlabel)}</text>',
        f'<text x="14" y="{(y0 + y1) // 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {(y0 + y1) // 2})">{_esc(ylabel)}</text>',
    ]


def _ticks(lo: float, hi: float, axis: str) -> list[str]:
    x0, y0, x1, y1 = MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN // 2, MARGIN // 2
    out = []
    for i in range(5):
        v = lo + (hi - lo) * i / 4
        if axis == "x":
            px = x0 + (x1 - x0) * i / 4
            out.append(f'<text x="{_n(px)}" y="{y0 + 16}" text-anchor="middle">{v:.3g}</text>')
        else:
            py = y0 - (y0 - y1) * i / 4
            out.append(f'<text x="{x0 - 6}" y="{_n(py + 4)}" text-anchor="end">{v:.3g}</text>')
    return out


def line_chart_svg(series: dict, title: str = "best cost vs time", xlabel: str = "time [s]",
                   ylabel: str = "total cost") -> str:
    """Step lines, one per key of ``series`` (``name -> [(x, y), ...]``)."""
    parts = _frame(title, xlabel, ylabel)
    pts = [(x, y) for s in series.values() for x, y in s if math.isfinite(x) and math.isfinite(y)]
    if pts:
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        xlo, xhi = 0.0, max(xs) or 1.0
        ylo, yhi = min(0.0, min(ys)), max(ys) or 1.0
        parts += _ticks(xlo, xhi, "x") + _ticks(ylo, yhi, "y")
        x0, y0, x1, y1 = MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN // 2, MARGIN // 2

        def px(x):
            return x0 + (x1 - x0) * (x - xlo) / (xhi - xlo)

        def py(y):
            return y0 - (y0 - y1) * (y - ylo) / ((yhi - ylo) or 1.0)

        for k, name in enumerate(sorted(series)):
            s = [(x, y) for x, y in series[name] if math.isfinite(x) and math.isfinite(y)]
            if not s:
                continue
            path = []
            for i, (x, y) in enumerate(s):
                if i:
                    path.append(f"{_n(px(x))},{_n(py(s[i - 1][1]))}")
                path.append(f"{_n(px(x))},{_n(py(y))}")
            path.append(f"{_n(px(xhi))},{_n(py(s[-1][1]))}")
            color = PALETTE[k % len(PALETTE)]
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(path)}"/>')
            parts.append(
                f'<text x="{x1 - 4}" y="{MARGIN // 2 + 14 * (k + 1)}" text-anchor="end" fill="{color}">{_esc(name)}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_chart_svg(values: dict, title: str = "success rate by method", ylabel: str = "success rate") -> str:
    """One bar per key; values are clipped to ``[0, 1]`` axis range unless larger."""
    parts = _frame(title, "method", ylabel)
    names = sorted(values)
    if names:
        hi = max(1.0, max(v for v in values.values() if math.isfinite(v)) if any(
            math.isfinite(v) for v in values.values()) else 1.0)
        parts += _ticks(0.0, hi, "y")
        x0, y0, x1, y1 = MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN // 2, MARGIN // 2
        slot = (x1 - x0) / len(names)
        for k, name in enumerate(names):
            v = values[name] if math.isfinite(values[name]) else 0.0
            h = (y0 - y1) * v / hi
            bx = x0 + slot * k + slot * 0.15
            parts.append(
                f'<rect x="{_n(bx)}" y="{_n(y0 - h)}" width="{_n(slot * 0.7)}" height="{_n(h)}" '
                f'fill="{PALETTE[k % len(PALETTE)]}"/>'
            )
            parts.append(f'<text x="{_n(bx + slot * 0.35)}" y="{y0 + 16}" text-anchor="middle">{_esc(name)}</text>')
            parts.append(f'<text x="{_n(bx + slot * 0.35)}" y="{_n(y0 - h - 4)}" text-anchor="middle">{v:.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_outputs(records, out_dir) -> dict:
    """Write records/aggregate CSVs and the two charts; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = _sorted(records)
    paths = {
        "records": out / "records.csv",
        "aggregate": out / "aggregate.csv",
        "cost_vs_time": out / "cost_vs_time.svg",
        "success": out / "success.svg",
    }
    paths["records"].write_text(records_csv(records))
    paths["aggregate"].write_text(aggregate_csv(records))
    series = {}
    for r in records:
        if r.history:
            series[f"{r.method} p{r.problem} s{r.seed}"] = [(h[1], h[4]) for h in r.history]
    paths["cost_vs_time"].write_text(line_chart_svg(series))
    success = {a["method"]: a["success_all"] for a in aggregate(records)}
    paths["success"].write_text(bar_chart_svg(success))
    return paths
