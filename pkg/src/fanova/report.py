"""Report serialization and SVG plots (display only)."""

from __future__ import annotations

import csv
import io
import json
from xml.sax.saxutils import escape

import numpy as np

from .curves import FunctionalDataset, group_means
from .errors import ValidationError

__all__ = ["render_report", "load_report", "plot_means", "plot_power", "SvgFrame"]


def _as_dict(report) -> dict:
    return report.to_dict() if hasattr(report, "to_dict") else report


def _mark(flag) -> str:
    return " *" if flag else ""


def _text(rep: dict) -> str:
    cfg = rep["config"]
    alpha = cfg["alpha"]
    lines = [
        f"FANOVA closure analysis  (alpha={alpha}, permutations={cfg['permutations']}, "
        f"seed={cfg['seed']}, method={cfg['method']})",
        "'*' marks hypotheses rejected at alpha",
        "",
    ]
    for d in rep["datasets"]:
        lines.append(
            f"{d['name']}: global p={d['global_raw_p']:.3f}  Bonferroni p={d['bonferroni_p']:.3f}"
            f"{_mark(d['rejected_at_alpha'])}"
        )
        if d["status"] != "analysed":
            lines.append(f"  {d['status']}")
            continue
        bounds = {iv["name"]: (iv["a"], iv["b"]) for iv in d["intervals"]}
        for h in d["interval_tests"]:
            a, b = bounds[h["name"]]
            lines.append(
                f"  +- {h['name']} [{a:g}, {b:g}]: raw p={h['raw_p']:.3f}  adjusted p={h['adjusted_p']:.3f}"
                f"{_mark(h['rejected_at_alpha'])}"
            )
            pw = h.get("pairwise")
            if pw is None:
                continue
            for q in pw["hypotheses"]:
                lines.append(
                    f"  |    +- {q['name']}: raw p={q['raw_p']:.3f}  adjusted p={q['adjusted_p']:.3f}"
                    f"{_mark(q['rejected_at_alpha'])}"
                )
    return "\n".join(lines) + "\n"


def _csv(rep: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "level", "interval", "hypothesis", "raw_p", "adjusted_p", "rejected"])
    for d in rep["datasets"]:
        w.writerow([d["name"], "dataset", "", "global", f"{d['global_raw_p']:.6g}",
                    f"{d['bonferroni_p']:.6g}", int(d["rejected_at_alpha"])])
        for h in d.get("interval_tests", []):
            w.writerow([d["name"], "interval", h["name"], h["name"], f"{h['raw_p']:.6g}",
                        f"{h['adjusted_p']:.6g}", int(h["rejected_at_alpha"])])
            for q in (h.get("pairwise") or {}).get("hypotheses", []):
                w.writerow([d["name"], "pairwise", h["name"], q["name"], f"{q['raw_p']:.6g}",
                            f"{q['adjusted_p']:.6g}", int(q["rejected_at_alpha"])])
    return buf.getvalue()


def render_report(report, fmt: str = "json", path=None) -> str:
    """Serialize an analysis report as json, text or csv; optionally write it."""
    rep = _as_dict(report)
    if fmt == "json":
        out = json.dumps(rep, indent=2, sort_keys=True) + "\n"
    elif fmt == "text":
        out = _text(rep)
    elif fmt == "csv":
        out = _csv(rep)
    else:
        raise ValidationError(f"unknown report format {fmt!r}")
    if path is not None:
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(out)
        except OSError as exc:
            raise ValidationError(f"cannot write report to {path}: {exc}") from None
    return out


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# svg

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


class SvgFrame:
    """Linear map from data coordinates onto a fixed plotting rectangle."""

    width, height = 640, 400
    left, right, top, bottom = 60, 620, 30, 350

    def __init__(self, xlim, ylim):
        self.x0, self.x1 = map(float, xlim)
        y0, y1 = map(float, ylim)
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y0 + 0.5
        pad = 0.05 * (y1 - y0)
        self.y0, self.y1 = y0 - pad, y1 + pad

    def x(self, v):
        return self.left + (np.asarray(v, float) - self.x0) / (self.x1 - self.x0) * (self.right - self.left)

    def y(self, v):
        return self.bottom - (np.asarray(v, float) - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)


def _svg(frame: SvgFrame, body: list[str], title: str, xlabel: str, ylabel: str) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{frame.width}" height="{frame.height}" '
        f'viewBox="0 0 {frame.width} {frame.height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{frame.width / 2:.0f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line class="axis" x1="{frame.left}" y1="{frame.bottom}" x2="{frame.right}" y2="{frame.bottom}" stroke="black"/>',
        f'<line class="axis" x1="{frame.left}" y1="{frame.top}" x2="{frame.left}" y2="{frame.bottom}" stroke="black"/>',
        f'<text x="{(frame.left + frame.right) / 2:.0f}" y="{frame.height - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{(frame.top + frame.bottom) / 2:.0f}" font-size="12" '
        f'transform="rotate(-90 14 {(frame.top + frame.bottom) / 2:.0f})" text-anchor="middle">{escape(ylabel)}</text>',
    ]
    for v in np.linspace(frame.x0, frame.x1, 5):
        head.append(f'<text x="{frame.x(v):.2f}" y="{frame.bottom + 16}" text-anchor="middle" font-size="10">{v:g}</text>')
    for v in np.linspace(frame.y0, frame.y1, 5):
        head.append(f'<text x="{frame.left - 6}" y="{frame.y(v):.2f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _path(frame, xs, ys, color, cls, label):
    pts = " L ".join(f"{x:.3f},{y:.3f}" for x, y in zip(frame.x(xs), frame.y(ys)))
    return (f'<path class="{cls}" data-label="{escape(label)}" d="M {pts}" fill="none" '
            f'stroke="{color}" stroke-width="1.8"/>')


def _legend(frame, labels):
    out = []
    for i, lab in enumerate(labels):
        y = frame.top + 12 + 14 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<line x1="{frame.right - 120}" y1="{y}" x2="{frame.right - 100}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{frame.right - 95}" y="{y + 4}" font-size="11">{escape(lab)}</text>')
    return out


def plot_means(ds: FunctionalDataset, outfile=None, partition=None, title: str = "Group mean curves") -> str:
    """Group-mean curves, with interval boundaries drawn as vertical rules."""
    means, _ = group_means(ds)
    frame = SvgFrame(ds.domain, (means.min(), means.max()))
    body = []
    if partition is not None:
        for v in sorted({b for pair in partition.bounds() for b in pair}):
            x = float(frame.x(v))
            body.append(f'<line class="interval-rule" data-t="{v:g}" x1="{x:.3f}" y1="{frame.top}" '
                        f'x2="{x:.3f}" y2="{frame.bottom}" stroke="#999" stroke-dasharray="4 3"/>')
    for j, name in enumerate(ds.group_names):
        body.append(_path(frame, ds.grid, means[j], PALETTE[j % len(PALETTE)], "group-mean", name))
    body += _legend(frame, ds.group_names)
    svg = _svg(frame, body, title, "t", "mean response")
    if outfile is not None:
        with open(outfile, "w", encoding="utf-8") as fh:
            fh.write(svg)
    return svg


def plot_power(table, outfile=None, title: str = "Rejection rate") -> str:
    """Rejection rate against beta, one line per (interval, hypothesis)."""
    series: dict[str, list[tuple[float, float]]] = {}
    for r in table.rows:
        key = f"I{r.interval}" + ("" if r.hypothesis == "H0" else f" {r.hypothesis}")
        series.setdefault(key, []).append((r.beta, r.rate))
    betas = [r.beta for r in table.rows]
    frame = SvgFrame((min(betas), max(betas) if max(betas) > min(betas) else min(betas) + 1), (0.0, 1.0))
    body = []
    labels = list(series)
    for i, key in enumerate(labels):
        pts = sorted(series[key])
        xs, ys = zip(*pts)
        body.append(_path(frame, xs, ys, PALETTE[i % len(PALETTE)], "power-curve", key))
    body += _legend(frame, labels)
    svg = _svg(frame, body, title, "beta", "rejection rate")
    if outfile is not None:
        with open(outfile, "w", encoding="utf-8") as fh:
            fh.write(svg)
    return svg
