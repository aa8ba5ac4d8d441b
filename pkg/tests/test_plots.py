"""Smoke tests for figure rendering: every report path must produce a real
PNG file without a display attached."""

import numpy as np

from ooklearn.evaluate import EvalReport, EvalRow, binomial_interval
from ooklearn.plots import save_compare_figure, save_ser_figure, save_training_figure
from ooklearn.training import TrainReport

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _assert_png(path):
    data = path.read_bytes()
    assert data[:8] == PNG_MAGIC
    assert len(data) > 1000


def _training_report(penalty_mu=None, with_validations=True):
    targets = (2.0, 4.0)
    report = TrainReport(targets=targets, penalty_mu=penalty_mu, seed=3)
    rng = np.random.default_rng(0)
    for t in range(1, 41):
        report.iterations.append({
            "iteration": t,
            "cost": float(1.0 / t + 0.05 * rng.standard_normal()),
            "lagrangian": float(1.1 / t + 0.05 * rng.standard_normal()),
            "residuals": [float(0.5 / t), float(-0.3 / t)],
            "lambdas": [0.01 * t, -0.005 * t],
        })
    if with_validations:
        for t in (10, 20, 30, 40):
            report.validations.append({
                "iteration": t,
                "cost": float(1.0 / t),
                "lagrangian": float(1.05 / t),
                "feasible": t >= 20,
                "checkpointed": t in (20, 40),
            })
    return report


def _eval_report(label, dims=(2.0, 4.0)):
    rows = []
    for d in dims:
        for snr, ser in ((0.0, 1e-1), (2.0, 1e-2), (4.0, 1e-3), (6.0, 0.0)):
            errors = int(ser * 10_000)
            lo, hi = binomial_interval(errors, 10_000)
            rows.append(EvalRow(label, d, snr, 10_000, errors, ser, lo, hi))
    return EvalReport(label=label, rows=rows)


def test_training_figure_written(tmp_path):
    path = tmp_path / "trace.png"
    save_training_figure(_training_report(), path)
    _assert_png(path)


def test_training_figure_without_validations(tmp_path):
    path = tmp_path / "trace.png"
    save_training_figure(_training_report(with_validations=False), path)
    _assert_png(path)


def test_training_figure_penalty_run(tmp_path):
    path = tmp_path / "trace.png"
    save_training_figure(_training_report(penalty_mu=0.5), path)
    _assert_png(path)


def test_ser_figure_written(tmp_path):
    # includes a zero-error row, which must survive the log axis
    path = tmp_path / "ser.png"
    save_ser_figure(_eval_report("dnn"), path)
    _assert_png(path)


def test_compare_figure_written(tmp_path):
    path = tmp_path / "compare.png"
    save_compare_figure(_eval_report("dnn"), _eval_report("ml"), path)
    _assert_png(path)


def test_figures_are_byte_stable(tmp_path):
    # rendering embeds no timestamps, so reruns must agree byte for byte
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    report = _eval_report("dnn")
    save_ser_figure(report, a)
    save_ser_figure(report, b)
    assert a.read_bytes() == b.read_bytes()
