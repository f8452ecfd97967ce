"""Trace persistence: '#'-prefixed key=value header lines followed by a CSV
body with a fixed column order. Reals carry 17 significant digits so a
write/read round trip is exact for every finite double."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bisim import BisimTrace

__all__ = ["TraceFormatError", "TraceFile", "TRACE_COLUMNS",
           "build_trace_file", "write_trace", "read_trace"]

TRACE_COLUMNS = ("t", "e_mean", "e_norm_mean", "grad_err", "conv_err",
                 "slack_min", "agreement", "loss_qhat", "loss_ste", "lr")


class TraceFormatError(ValueError):
    """Malformed trace file."""


@dataclass
class TraceFile:
    header: dict[str, str]
    rows: np.ndarray  # (steps, len(TRACE_COLUMNS))

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, TRACE_COLUMNS.index(name)]

    def floats(self, key: str) -> np.ndarray:
        raw = self.header.get(key, "")
        if not raw:
            return np.empty(0)
        return np.array([float(v) for v in raw.split(",")])


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _fmt_list(values) -> str:
    return ",".join(_fmt(v) for v in values)


def build_trace_file(trace: BisimTrace, config_echo: dict | None = None,
                     version: str = "") -> TraceFile:
    """Assemble the persisted form of one run. config_echo entries land in
    the header under config.* keys."""
    header: dict[str, str] = {}
    header["version"] = version
    for key, value in (config_echo or {}).items():
        header[f"config.{key}"] = str(value)
    header["warmup_steps"] = str(trace.warmup_steps)
    header["diverged"] = str(trace.diverged).lower()
    header["biases_quantized"] = "false"
    header["initial_e_mean"] = _fmt(trace.initial_e_mean)
    header["initial_agreement"] = _fmt(trace.initial_agreement)
    for i, (a, c, d, rl) in enumerate(zip(trace.alphas, trace.constants,
                                          trace.deltas, trace.range_lengths)):
        header[f"alpha.{i}"] = _fmt(a)
        header[f"l_minus.{i}"] = _fmt(c.l_minus)
        header[f"l_plus.{i}"] = _fmt(c.l_plus)
        header[f"l_prime.{i}"] = _fmt(c.l_prime)
        header[f"delta.{i}"] = _fmt(d)
        header[f"range_length.{i}"] = _fmt(rl)
    if trace.g_plus_empirical is not None:
        header["g_plus_empirical"] = _fmt(trace.g_plus_empirical)
    header["final_weights_qhat"] = _fmt_list(trace.final_weights_qhat)
    header["final_weights_ste"] = _fmt_list(trace.final_weights_ste)

    cols = [trace.t.astype(np.float64), trace.e_mean, trace.e_norm_mean,
            trace.grad_err, trace.conv_err, trace.slack_min, trace.agreement,
            trace.loss_qhat, trace.loss_ste, trace.lr]
    rows = np.column_stack(cols) if len(trace.t) else np.empty((0, len(TRACE_COLUMNS)))
    return TraceFile(header=header, rows=rows)


def write_trace(path, tf: TraceFile):
    lines = [f"# {key} = {value}" for key, value in tf.header.items()]
    lines.append(",".join(TRACE_COLUMNS))
    for row in tf.rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace(path) -> TraceFile:
    header: dict[str, str] = {}
    rows = []
    saw_columns = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if saw_columns:
                    raise TraceFormatError(f"{path}:{lineno}: header after body")
                body = line[1:].strip()
                key, sep, value = body.partition("=")
                if not sep:
                    raise TraceFormatError(f"{path}:{lineno}: header line without '='")
                header[key.strip()] = value.strip()
                continue
            if not saw_columns:
                if tuple(line.split(",")) != TRACE_COLUMNS:
                    raise TraceFormatError(f"{path}:{lineno}: unexpected column row")
                saw_columns = True
                continue
            parts = line.split(",")
            if len(parts) != len(TRACE_COLUMNS):
                raise TraceFormatError(
                    f"{path}: row {len(rows)}: expected {len(TRACE_COLUMNS)} fields, "
                    f"got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise TraceFormatError(f"{path}: row {len(rows)}: {exc}") from exc
    if not saw_columns:
        raise TraceFormatError(f"{path}: missing column row")
    body = np.array(rows) if rows else np.empty((0, len(TRACE_COLUMNS)))
    return TraceFile(header=header, rows=body)
