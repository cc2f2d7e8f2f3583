"""Report emission for :class:`~pcbview.metrics.MetricsReport`."""

from __future__ import annotations

import csv
import io
import json
from typing import Optional

from .metrics import MetricsReport

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _header(report: MetricsReport, config: Optional[dict]) -> str:
    lines = ["# pcbview evaluation report", f"# ap_method: {report.ap_method}"]
    if config is not None:
        lines.append("# config: " + json.dumps(config, sort_keys=True))
    return "\n".join(lines) + "\n"


def summary_csv(report: MetricsReport, config: Optional[dict] = None) -> str:
    buf = io.StringIO()
    buf.write(_header(report, config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    conf = "" if report.conf_threshold is None else f"{report.conf_threshold:.6f}"
    for key, val in (
        ("precision", f"{report.precision:.6f}"),
        ("recall", f"{report.recall:.6f}"),
        ("map50", f"{report.map50:.6f}"),
        ("map50_95", f"{report.map50_95:.6f}"),
        ("tp", report.tp),
        ("fp", report.fp),
        ("fn", report.fn),
        ("conf_threshold", conf),
    ):
        w.writerow([key, val])
    return buf.getvalue()


def per_class_csv(report: MetricsReport, config: Optional[dict] = None) -> str:
    buf = io.StringIO()
    buf.write(_header(report, config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class_id", "class", "num_gt", "num_det", "evaluated"] + [f"ap{round(t * 100)}" for t in report.thresholds] + ["ap50_95"])
    per_class = report.class_map50_95()
    for c, name in enumerate(report.class_names):
        row = [c, name, int(report.num_gt[c]), int(report.num_det[c]), int(report.evaluated[c])]
        row += [f"{v:.6f}" for v in report.ap[c]] + [f"{per_class[c]:.6f}"]
        w.writerow(row)
    return buf.getvalue()


def format_table(report: MetricsReport, method: str = "model", config: Optional[dict] = None) -> str:
    """Aligned plain-text table; scalar metrics as percentages with one decimal."""
    out = [_header(report, config).rstrip("\n"), ""]
    cols = ("Method", "Precision", "Recall", "mAP50", "mAP50-95")
    width = max(len(method), len(cols[0]))
    out.append(f"{cols[0]:<{width}} | " + "  ".join(f"{c:>9}" for c in cols[1:]))
    out.append("-" * width + "-+-" + "-" * (11 * len(cols[1:]) - 2))
    vals = (report.precision, report.recall, report.map50, report.map50_95)
    out.append(f"{method:<{width}} | " + "  ".join(f"{100 * v:>9.1f}" for v in vals))
    out.append("")

    name_w = max([len("Class")] + [len(n) for n in report.class_names])
    out.append(f"{'Class':<{name_w}}  {'GT':>5}  {'Det':>5}  {'AP50':>6}  {'AP75':>6}  {'AP50-95':>7}")
    per_class = report.class_map50_95()
    j75 = report.thresholds.index(0.75)
    for c, name in enumerate(report.class_names):
        if not report.evaluated[c]:
            continue
        out.append(
            f"{name:<{name_w}}  {report.num_gt[c]:>5d}  {report.num_det[c]:>5d}  "
            f"{report.ap[c, 0]:>6.3f}  {report.ap[c, j75]:>6.3f}  {per_class[c]:>7.3f}"
        )
    out.append("")
    conf = "n/a" if report.conf_threshold is None else f"{report.conf_threshold:.3f}"
    out.append(
        f"mAP50 = {report.map50:.3f}  mAP50-95 = {report.map50_95:.3f}  "
        f"P = {report.precision:.3f}  R = {report.recall:.3f}  "
        f"(TP {report.tp}, FP {report.fp}, FN {report.fn}, conf >= {conf})"
    )
    return "\n".join(out) + "\n"


def pr_curves_csv(report: MetricsReport, config: Optional[dict] = None) -> str:
    buf = io.StringIO()
    buf.write(_header(report, config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class_id", "class", "rank", "recall", "precision"])
    for c, pts in sorted(report.pr_curves.items()):
        for k, (r, p) in enumerate(pts):
            w.writerow([c, report.class_names[c], k, f"{r:.6f}", f"{p:.6f}"])
    return buf.getvalue()


def pr_curves_svg(report: MetricsReport, width: int = 480, height: int = 360, config: Optional[dict] = None) -> str:
    """Precision-recall curves at IoU 0.5 as a standalone SVG line plot."""
    ml, mr, mt, mb = 50, 140, 20, 40
    pw, ph = width - ml - mr, height - mt - mb

    def sx(r):
        return ml + r * pw

    def sy(p):
        return mt + (1 - p) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if config is not None:
        parts.insert(1, f"<desc>{_escape(_header(report, config).rstrip())}</desc>")
    for t in range(6):
        v = t / 5
        parts.append(f'<text x="{sx(v):.1f}" y="{mt + ph + 15}" font-size="10" text-anchor="middle">{v:.1f}</text>')
        parts.append(f'<text x="{ml - 5}" y="{sy(v) + 3:.1f}" font-size="10" text-anchor="end">{v:.1f}</text>')
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 5}" font-size="11" text-anchor="middle">recall</text>')
    parts.append(f'<text x="12" y="{mt + ph / 2:.1f}" font-size="11" text-anchor="middle" transform="rotate(-90 12 {mt + ph / 2:.1f})">precision</text>')
    legend_y = mt + 10
    for c, pts in sorted(report.pr_curves.items()):
        if not pts or not report.evaluated[c]:
            continue
        color = _PALETTE[c % len(_PALETTE)]
        # start at recall 0 with the first precision so single-point curves are visible
        coords = [(0.0, pts[0][1])] + list(pts)
        path = " ".join(f"{sx(r):.2f},{sy(p):.2f}" for r, p in coords)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        parts.append(f'<line x1="{ml + pw + 10}" y1="{legend_y}" x2="{ml + pw + 25}" y2="{legend_y}" stroke="{color}" stroke-width="2"/>')
        label = f"{report.class_names[c]} {report.ap[c, 0]:.3f}"
        parts.append(f'<text x="{ml + pw + 30}" y="{legend_y + 3}" font-size="10">{_escape(label)}</text>')
        legend_y += 14
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
