import numpy as np
import pytest

from qatlab.bisim import BisimConfig, ScalarToy, run_toy
from qatlab.estimator import EstimatorSpec
from qatlab.optim import Schedule
from qatlab.quantizer import QuantizerConfig
from qatlab.traceio import (TRACE_COLUMNS, TraceFile, TraceFormatError,
                            build_trace_file, read_trace, write_trace)
from qatlab.transform import alpha


@pytest.fixture(scope="module")
def toy_trace():
    cfg2 = QuantizerConfig(delta=2.0 / 3.0, l=-2, u=1, bits=2)
    cfg = BisimConfig(optimizer="momentum", estimator=EstimatorSpec.tanh_htge(2.0),
                      schedule=Schedule(1e-3, 40), seed=0, steps=40, quantizer=cfg2,
                      toy=ScalarToy((-0.004, -0.003, -0.002, 0.005), w0=1 / 6))
    return cfg, run_toy(cfg)


def test_round_trip_is_exact(tmp_path, toy_trace):
    cfg, trace = toy_trace
    tf = build_trace_file(trace, config_echo={"optimizer.kind": "momentum"},
                          version="0.1.0")
    path = tmp_path / "trace.csv"
    write_trace(path, tf)
    back = read_trace(path)
    assert back.header == tf.header
    np.testing.assert_array_equal(back.rows, tf.rows)


def test_seventeen_digits_survive_awkward_doubles(tmp_path):
    awkward = [1.0 / 3.0, 0.1, 2.0 / 3.0, 1e-300, 6.02e23, np.pi]
    tf = TraceFile(header={"note": "fixture"},
                   rows=np.array([awkward + [0.0] * 4,
                                  [-v for v in awkward] + [1.0] * 4]))
    path = tmp_path / "t.csv"
    write_trace(path, tf)
    np.testing.assert_array_equal(read_trace(path).rows, tf.rows)


def test_empty_trace_is_valid(tmp_path):
    tf = TraceFile(header={"version": "0.1.0"}, rows=np.empty((0, len(TRACE_COLUMNS))))
    path = tmp_path / "empty.csv"
    write_trace(path, tf)
    back = read_trace(path)
    assert back.header["version"] == "0.1.0"
    assert back.rows.shape == (0, len(TRACE_COLUMNS))


def test_header_alpha_matches_transform(tmp_path, toy_trace):
    cfg, trace = toy_trace
    tf = build_trace_file(trace)
    expect = alpha(cfg.estimator, cfg.quantizer)
    assert float(tf.header["alpha.0"]) == pytest.approx(expect, abs=1e-10)


def test_final_weights_round_trip(tmp_path, toy_trace):
    _, trace = toy_trace
    tf = build_trace_file(trace)
    path = tmp_path / "w.csv"
    write_trace(path, tf)
    back = read_trace(path)
    np.testing.assert_array_equal(back.floats("final_weights_qhat"),
                                  trace.final_weights_qhat)
    np.testing.assert_array_equal(back.floats("final_weights_ste"),
                                  trace.final_weights_ste)


def test_malformed_row_reports_index(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# version = x\n" + ",".join(TRACE_COLUMNS)
                    + "\n1,2,3\n", encoding="utf-8")
    with pytest.raises(TraceFormatError, match="row 0"):
        read_trace(path)


def test_unparseable_value_reports_index(tmp_path):
    path = tmp_path / "bad.csv"
    good = ",".join(["1"] * len(TRACE_COLUMNS))
    bad = good.replace("1", "zap", 1)
    path.write_text(",".join(TRACE_COLUMNS) + f"\n{good}\n{bad}\n", encoding="utf-8")
    with pytest.raises(TraceFormatError, match="row 1"):
        read_trace(path)


def test_header_without_equals_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# just a comment\n" + ",".join(TRACE_COLUMNS) + "\n",
                    encoding="utf-8")
    with pytest.raises(TraceFormatError, match="without '='"):
        read_trace(path)


def test_missing_column_row_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# a = b\n", encoding="utf-8")
    with pytest.raises(TraceFormatError, match="missing column row"):
        read_trace(path)


def test_column_helper(toy_trace):
    _, trace = toy_trace
    tf = build_trace_file(trace)
    np.testing.assert_array_equal(tf.column("lr"), trace.lr)
    np.testing.assert_array_equal(tf.column("e_mean"), trace.e_mean)
