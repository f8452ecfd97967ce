"""Command-line surface.

  qatlab run <config> [--output trace.csv]
  qatlab sweep <config> --etas 1e-2,3e-3,1e-3,3e-4,1e-4
  qatlab constants
  qatlab report <trace.csv ...> [--output-dir report]

Exit codes: 0 success, 1 configuration error, 2 training divergence,
3 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .bisim import eta_sweep, run_experiment
from .config import ConfigError, load_config
from .datasets import IdxFormatError, gen_synthetic, load_idx
from .estimator import EstimatorSpec, dsq_bound, lipschitz_constants
from .optim import TrainingDiverged
from .quantizer import QuantizerConfig
from .report import emit_report
from .traceio import TraceFormatError, build_trace_file, write_trace

# (k, bits) pairs of the reference tanh-estimator table; delta = 2/(2^bits - 1)
CONSTANTS_TABLE = ((8.0, 8), (6.0, 4), (4.0, 3), (2.0, 2))
DSQ_SHAPES = (0.25, 0.11)


def _load_dataset(config):
    ds = config.dataset
    if ds.kind == "synthetic":
        x, y = gen_synthetic(ds.n_samples, ds.n_features, ds.n_classes,
                             ds.blob_spread, ds.seed)
    else:
        x, y = load_idx(ds.images_path, ds.labels_path)
    if ds.subset_size:
        if ds.subset_size > x.shape[0]:
            raise ConfigError(f"dataset.subset_size {ds.subset_size} exceeds "
                              f"dataset size {x.shape[0]}")
        x, y = x[:ds.subset_size], y[:ds.subset_size]
    if config.batch_size > x.shape[0]:
        raise ConfigError("run.batch_size exceeds dataset size")
    return x, y


def cmd_run(args) -> int:
    config = load_config(args.config)
    x, y = _load_dataset(config)
    n_classes = int(y.max()) + 1
    shapes = config.shapes(x.shape[1], max(n_classes, config.dataset.n_classes))
    trace = run_experiment(config.bisim, shapes, x, y, config.batch_size)
    tf = build_trace_file(trace, config_echo=config.raw, version=__version__)
    write_trace(args.output, tf)
    status = "diverged" if trace.diverged else "ok"
    final_e = trace.e_norm_mean[-1] if len(trace.e_norm_mean) else float("nan")
    final_a = trace.agreement[-1] if len(trace.agreement) else float("nan")
    print(f"{status}: {len(trace.t)} steps, E_norm={final_e:.6g}, "
          f"agreement={final_a:.4f} -> {args.output}")
    return 2 if trace.diverged else 0


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    cfg = config.bisim
    if cfg.quantizer is None:
        raise ConfigError("sweep runs the scalar toy; set quantizer.delta explicitly")
    try:
        etas = [float(v) for v in args.etas.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--etas: {exc}") from exc
    try:
        result = eta_sweep(cfg, etas)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print("eta,final_mean_E,flagged")
    for eta, e, fl in zip(result.etas, result.final_e, result.flagged):
        print(f"{eta:.6g},{e:.17g},{'yes' if fl else 'no'}")
    if result.slope is None:
        print("slope = undefined (alignment error collapsed to zero)")
    else:
        print(f"slope = {result.slope:.4f}")
    return 0


def cmd_constants(_args) -> int:
    print("k bits delta l_minus l_plus l_prime ratio")
    for k, bits in CONSTANTS_TABLE:
        delta = 2.0 / (2 ** bits - 1)
        cfg = QuantizerConfig.symmetric(bits, delta)
        c = lipschitz_constants(EstimatorSpec.tanh_htge(k), cfg)
        print(f"{k:g} {bits} {delta:.10g} {c.l_minus:.6f} {c.l_plus:.6f} "
              f"{c.l_prime:.6f} {c.sgd_ratio():.6f}")
    for shape in DSQ_SHAPES:
        print(f"dsq shape={shape:g} bound={dsq_bound(shape):.6f}")
    return 0


def cmd_report(args) -> int:
    print(emit_report(args.traces, args.output_dir))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qatlab",
                                     description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train one lockstep pair and write its trace")
    p_run.add_argument("config")
    p_run.add_argument("--output", default="trace.csv")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="scalar-toy learning-rate sweep")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--etas", required=True,
                         help="comma-separated learning rates")
    p_sweep.set_defaults(func=cmd_sweep)

    p_const = sub.add_parser("constants",
                             help="print the tanh-estimator constants table")
    p_const.set_defaults(func=cmd_constants)

    p_rep = sub.add_parser("report", help="summary table and SVG plots from traces")
    p_rep.add_argument("traces", nargs="+")
    p_rep.add_argument("--output-dir", default="report")
    p_rep.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    except (OSError, TraceFormatError, IdxFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
