"""Metric CSVs and dependency-free SVG line plots."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

THRESHOLD = "THRESHOLD"
MAX_EPOCHS = "MAX_EPOCHS"

METRIC_COLUMNS = ("epoch", "train_cost", "train_acc", "val_acc")
SWEEP_COLUMNS = ("param", "value", "seed", "final_val_acc", "exit_epoch", "exit_reason")


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    train_cost: float
    train_acc: float
    val_acc: float


@dataclass
class RunRecord:
    rows: list[EpochRow] = field(default_factory=list)
    exit_epoch: int = 0
    exit_reason: str = MAX_EPOCHS
    name: str = ""

    @property
    def final(self) -> EpochRow:
        return self.rows[-1]

    def costs(self) -> list[float]:
        return [r.train_cost for r in self.rows]

    def epochs_to(self, threshold: float) -> int | None:
        """First epoch whose mean cost is at or below ``threshold``."""
        for r in self.rows:
            if r.train_cost <= threshold:
                return r.epoch
        return None

    def __eq__(self, other):
        if not isinstance(other, RunRecord):
            return NotImplemented
        return (self.rows, self.exit_epoch, self.exit_reason) == (other.rows, other.exit_epoch, other.exit_reason)


def metrics_csv(record: RunRecord) -> str:
    """Header, one row per epoch, then a ``#exit_epoch=..,exit_reason=..`` trailer."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in record.rows:
        w.writerow([r.epoch, repr(float(r.train_cost)), repr(float(r.train_acc)), repr(float(r.val_acc))])
    buf.write(f"#exit_epoch={record.exit_epoch},exit_reason={record.exit_reason}\n")
    return buf.getvalue()


def emit_metrics(record: RunRecord, path: str | Path) -> None:
    Path(path).write_text(metrics_csv(record), encoding="utf-8")


def parse_metrics(text: str, name: str = "") -> RunRecord:
    lines = text.splitlines()
    trailer = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    reader = csv.DictReader(body)
    if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
        raise ValueError(f"unexpected metrics header {reader.fieldnames}")
    rows = [EpochRow(int(r["epoch"]), float(r["train_cost"]), float(r["train_acc"]), float(r["val_acc"]))
            for r in reader]
    record = RunRecord(rows, rows[-1].epoch if rows else 0, MAX_EPOCHS, name)
    for ln in trailer:
        for item in ln[1:].split(","):
            key, _, value = item.partition("=")
            if key == "exit_epoch":
                record.exit_epoch = int(value)
            elif key == "exit_reason":
                record.exit_reason = value
    return record


def read_metrics(path: str | Path) -> RunRecord:
    return parse_metrics(Path(path).read_text(encoding="utf-8"), Path(path).stem)


def write_sweep_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)


# --------------------------------------------------------------------------
# SVG
# --------------------------------------------------------------------------

PALETTE = ("#1f77b4", "#2ca02c", "#d62728", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


@dataclass
class Series:
    name: str
    x: Sequence[float]
    y: Sequence[float]
    markers: bool = False
    line: bool = True


def _nice_range(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def svg_plot(series: Sequence[Series], title: str, xlabel: str, ylabel: str,
             xticks: Sequence[tuple[float, str]] | None = None,
             width: int = 640, height: int = 420) -> str:
    """Render series as polylines (and optional point markers) with axes and a legend."""
    left, right, top, bottom = 70, 170, 40, 55
    pw, ph = width - left - right, height - top - bottom
    xs = [float(v) for s in series for v in s.x] or [0.0, 1.0]
    ys = [float(v) for s in series for v in s.y] or [0.0, 1.0]
    x0, x1 = _nice_range(xs)
    y0, y1 = _nice_range(ys)

    def px(x):
        return left + (float(x) - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (float(y) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {top + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    ticks = xticks if xticks is not None else [(x0 + (x1 - x0) * i / 5, f"{x0 + (x1 - x0) * i / 5:.3g}")
                                               for i in range(6)]
    for xv, label in ticks:
        out.append(f'<line x1="{px(xv):.1f}" y1="{top + ph}" x2="{px(xv):.1f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(xv):.1f}" y="{top + ph + 18}" text-anchor="middle">{escape(label)}</text>')
    for i in range(6):
        yv = y0 + (y1 - y0) * i / 5
        out.append(f'<line x1="{left - 5}" y1="{py(yv):.1f}" x2="{left}" y2="{py(yv):.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')

    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(s.x, s.y))
        if s.line and pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        if s.markers:
            for x, y in zip(s.x, s.y):
                out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="{color}"/>')
        ly = top + 14 + 18 * i
        lx = left + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{escape(s.name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(records: Sequence[RunRecord], path: str | Path, metric: str = "val_acc",
              title: str | None = None, max_epoch: int | None = None) -> None:
    """One polyline per run of ``metric`` against epoch."""
    series = []
    for rec in records:
        rows = [r for r in rec.rows if max_epoch is None or r.epoch <= max_epoch]
        series.append(Series(rec.name or "run", [r.epoch for r in rows], [getattr(r, metric) for r in rows]))
    label = {"val_acc": "validation accuracy", "train_acc": "training accuracy",
             "train_cost": "training cost"}.get(metric, metric)
    Path(path).write_text(svg_plot(series, title or f"{label} vs epoch", "epoch", label), encoding="utf-8")
