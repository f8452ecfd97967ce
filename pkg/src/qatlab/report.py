"""Run summaries and diagnostic plots.

Plots are written as small standalone SVG files built from line/scatter
primitives; no plotting stack is involved, so the artifacts stay diffable.
"""

from __future__ import annotations

import os

import numpy as np

from .traceio import TraceFormatError, TraceFile, read_trace

__all__ = ["emit_report", "summarize", "line_plot_svg", "scatter_svg"]

_W, _H = 640, 480
_ML, _MR, _MT, _MB = 70, 20, 40, 50  # margins


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo
    if span <= 0:
        span = 1.0
    return out_lo + (np.asarray(values, dtype=np.float64) - lo) * (out_hi - out_lo) / span


def _frame(title, x_label, y_label, x_lo, x_hi, y_lo, y_hi):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="24" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{title}</text>',
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" '
        f'stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>',
        f'<text x="{(_ML + _W - _MR) // 2}" y="{_H - 12}" text-anchor="middle" '
        f'font-size="12" font-family="sans-serif">{x_label}</text>',
        f'<text x="16" y="{(_MT + _H - _MB) // 2}" text-anchor="middle" '
        f'font-size="12" font-family="sans-serif" '
        f'transform="rotate(-90 16 {(_MT + _H - _MB) // 2})">{y_label}</text>',
        f'<text x="{_ML}" y="{_H - _MB + 16}" font-size="10" '
        f'font-family="sans-serif">{x_lo:.4g}</text>',
        f'<text x="{_W - _MR}" y="{_H - _MB + 16}" text-anchor="end" font-size="10" '
        f'font-family="sans-serif">{x_hi:.4g}</text>',
        f'<text x="{_ML - 4}" y="{_H - _MB}" text-anchor="end" font-size="10" '
        f'font-family="sans-serif">{y_lo:.4g}</text>',
        f'<text x="{_ML - 4}" y="{_MT + 10}" text-anchor="end" font-size="10" '
        f'font-family="sans-serif">{y_hi:.4g}</text>',
    ]
    return parts


def line_plot_svg(path, xs, ys, title, x_label, y_label):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    x_lo, x_hi = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    y_lo, y_hi = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    parts = _frame(title, x_label, y_label, x_lo, x_hi, y_lo, y_hi)
    if xs.size:
        px = _scale(xs, x_lo, x_hi, _ML, _W - _MR)
        py = _scale(ys, y_lo, y_hi, _H - _MB, _MT)
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f5fbf" '
                     f'stroke-width="1.5"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def scatter_svg(path, xs, ys, title, x_label, y_label):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size:
        lo = float(min(xs.min(), ys.min()))
        hi = float(max(xs.max(), ys.max()))
    else:
        lo, hi = 0.0, 1.0
    parts = _frame(title, x_label, y_label, lo, hi, lo, hi)
    if xs.size:
        px = _scale(xs, lo, hi, _ML, _W - _MR)
        py = _scale(ys, lo, hi, _H - _MB, _MT)
        # reference diagonal: perfectly aligned weights land on it
        parts.append(f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_MT}" '
                     f'stroke="#bbbbbb" stroke-dasharray="4 3"/>')
        for x, y in zip(px, py):
            parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.2" '
                         f'fill="#c03a2b" fill-opacity="0.6"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def _final(tf: TraceFile, column: str, default=float("nan")):
    col = tf.column(column)
    return float(col[-1]) if len(col) else default


def summarize(named_traces) -> str:
    """Fixed-width summary table over (name, TraceFile) pairs."""
    header = (f"{'run':<28} {'E_norm':>12} {'agreement':>10} {'loss_qhat':>10} "
              f"{'loss_ste':>10} {'min_slack':>12}")
    lines = [header, "-" * len(header)]
    for name, tf in named_traces:
        slack = tf.column("slack_min")
        min_slack = float(slack.min()) if len(slack) else float("nan")
        lines.append(f"{name:<28} {_final(tf, 'e_norm_mean'):>12.6g} "
                     f"{_final(tf, 'agreement'):>10.4f} "
                     f"{_final(tf, 'loss_qhat'):>10.4f} "
                     f"{_final(tf, 'loss_ste'):>10.4f} {min_slack:>12.4g}")
    return "\n".join(lines)


def emit_report(trace_paths, out_dir) -> str:
    """Summary table plus one alignment plot and one final-weight scatter per
    readable trace. Unreadable traces are skipped and listed as warnings in
    the summary. Returns the summary text (also written to summary.txt)."""
    os.makedirs(out_dir, exist_ok=True)
    readable = []
    warnings = []
    for path in trace_paths:
        try:
            readable.append((path, read_trace(path)))
        except (OSError, TraceFormatError) as exc:
            warnings.append(f"warning: skipped {path}: {exc}")
    if not readable:
        raise TraceFormatError("no readable traces")

    names = [os.path.splitext(os.path.basename(p))[0] for p, _ in readable]
    for name, (path, tf) in zip(names, readable):
        if len(tf.rows):
            line_plot_svg(os.path.join(out_dir, f"{name}_alignment.svg"),
                          tf.column("t"), tf.column("e_norm_mean"),
                          f"{name}: normalized alignment error",
                          "step", "mean E / range length")
        wq = tf.floats("final_weights_qhat")
        ws = tf.floats("final_weights_ste")
        if wq.size and wq.size == ws.size:
            scatter_svg(os.path.join(out_dir, f"{name}_weights.svg"),
                        wq, ws, f"{name}: final weights", "qhat-net weight",
                        "ste-net weight")

    summary = summarize(zip(names, (tf for _, tf in readable)))
    if warnings:
        summary = summary + "\n" + "\n".join(warnings)
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary + "\n")
    return summary
