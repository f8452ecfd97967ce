import os

import numpy as np
import pytest

from qatlab.cli import main
from qatlab.report import emit_report
from qatlab.traceio import read_trace


def write_config(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


SMALL_RUN = """
run.steps = 60
run.batch_size = 16
dataset.n_samples = 200
dataset.blob_spread = 2.0
optimizer.kind = momentum
estimator.kind = tanh
estimator.k = 2.0
schedule.base_lr = 0.001
"""

STE_RUN = """
run.steps = 40
run.batch_size = 16
dataset.n_samples = 200
estimator.kind = ste
"""


class TestRunCommand:
    def test_run_writes_trace(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL_RUN)
        out = str(tmp_path / "trace.csv")
        assert main(["run", cfg, "--output", out]) == 0
        assert "ok:" in capsys.readouterr().out
        tf = read_trace(out)
        assert tf.rows.shape[0] == 60
        assert tf.header["config.optimizer.kind"] == "momentum"

    def test_config_error_is_exit_1(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "no such key = 1\n")
        assert main(["run", cfg, "--output", str(tmp_path / "t.csv")]) == 1
        assert "config error" in capsys.readouterr().err

    def test_missing_config_is_exit_1(self, tmp_path):
        assert main(["run", str(tmp_path / "none.cfg")]) == 1

    def test_ste_run_aligns_exactly(self, tmp_path):
        cfg = write_config(tmp_path, STE_RUN)
        out = str(tmp_path / "ste.csv")
        assert main(["run", cfg, "--output", out]) == 0
        tf = read_trace(out)
        assert np.all(tf.column("e_mean") == 0.0)
        assert np.all(tf.column("agreement") == 1.0)


class TestSweepCommand:
    def test_sweep_prints_slope(self, tmp_path, capsys):
        cfg = write_config(tmp_path, """
run.steps = 400
optimizer.kind = sgd
estimator.kind = tanh
estimator.k = 2.0
quantizer.delta = 0.6666666666666666
toy.gradients = -0.004,-0.003,-0.002,0.005
toy.w0 = 0.1666666666666666
""")
        assert main(["sweep", cfg, "--etas", "1e-2,3e-3,1e-3,3e-4,1e-4"]) == 0
        out = capsys.readouterr().out
        assert "eta,final_mean_E,flagged" in out
        assert "slope =" in out

    def test_sweep_needs_explicit_delta(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "optimizer.kind = sgd\n")
        assert main(["sweep", cfg, "--etas", "1e-2,3e-3,1e-3,1e-4"]) == 1
        assert "delta" in capsys.readouterr().err

    def test_bad_eta_list(self, tmp_path):
        cfg = write_config(tmp_path, "quantizer.delta = 0.5\n")
        assert main(["sweep", cfg, "--etas", "1e-2,zap"]) == 1


class TestConstantsCommand:
    def test_table_values(self, capsys):
        assert main(["constants"]) == 0
        out = capsys.readouterr().out
        rows = [line.split() for line in out.strip().splitlines()[1:5]]
        ratios = {float(r[0]): float(r[-1]) for r in rows}
        assert ratios[8.0] == pytest.approx(0.25, abs=0.02)
        assert ratios[6.0] == pytest.approx(2.66, abs=0.02)
        assert ratios[4.0] == pytest.approx(2.82, abs=0.02)
        assert ratios[2.0] == pytest.approx(1.77, abs=0.02)
        assert "dsq shape=0.25 bound=1.714286" in out
        assert "dsq shape=0.11 bound=4.280904" in out


class TestReportCommand:
    def test_report_emits_summary_and_plots(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL_RUN)
        trace = str(tmp_path / "trace.csv")
        main(["run", cfg, "--output", trace])
        out_dir = str(tmp_path / "report")
        assert main(["report", trace, "--output-dir", out_dir]) == 0
        assert os.path.exists(os.path.join(out_dir, "summary.txt"))
        assert os.path.exists(os.path.join(out_dir, "trace_alignment.svg"))
        assert os.path.exists(os.path.join(out_dir, "trace_weights.svg"))
        with open(os.path.join(out_dir, "trace_weights.svg")) as fh:
            assert "<circle" in fh.read()

    def test_unreadable_trace_is_warned_not_fatal(self, tmp_path, capsys):
        cfg = write_config(tmp_path, STE_RUN)
        trace = str(tmp_path / "good.csv")
        main(["run", cfg, "--output", trace])
        bad = tmp_path / "bad.csv"
        bad.write_text("not a trace\n", encoding="utf-8")
        summary = emit_report([trace, str(bad)], str(tmp_path / "rep"))
        assert "warning: skipped" in summary
        assert "good" in summary

    def test_all_unreadable_is_exit_3(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("nope\n", encoding="utf-8")
        assert main(["report", str(bad), "--output-dir", str(tmp_path / "r")]) == 3

    def test_ste_summary_shows_perfect_alignment(self, tmp_path):
        cfg = write_config(tmp_path, STE_RUN)
        a = str(tmp_path / "a.csv")
        b = str(tmp_path / "b.csv")
        main(["run", cfg, "--output", a])
        main(["run", cfg, "--output", b])
        summary = emit_report([a, b], str(tmp_path / "rep2"))
        lines = [l for l in summary.splitlines() if l.startswith(("a ", "b "))]
        assert len(lines) == 2
        for line in lines:
            fields = line.split()
            assert float(fields[1]) == 0.0  # normalized E
            assert float(fields[2]) == 1.0  # agreement
