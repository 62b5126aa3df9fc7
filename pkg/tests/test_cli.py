"""The command-line surface: every subcommand plus figures and metrics files."""

import json
import shutil

import pytest

from neurlog.cli import main
from neurlog.experiments import programs_dir
from neurlog import report


@pytest.fixture
def alarm_path(tmp_path):
    dest = tmp_path / "alarm.pl"
    shutil.copy(programs_dir() / "alarm.pl", dest)
    return str(dest)


@pytest.fixture
def t1_path(tmp_path):
    dest = tmp_path / "t1.pl"
    shutil.copy(programs_dir() / "t1_addition.pl", dest)
    return str(dest)


def test_ground_prints_relevant_program(alarm_path, capsys):
    assert main(["ground", alarm_path, "calls(mary)"]) == 0
    out = capsys.readouterr().out
    assert "hears_alarm(mary)" in out
    assert "hears_alarm(john)" not in out
    assert "calls(mary) :- alarm, hears_alarm(mary)." in out


def test_compile_reports_and_dumps(alarm_path, capsys):
    assert main(["compile", alarm_path, "calls(mary)", "--dump", "text", "--check"]) == 0
    out = capsys.readouterr().out
    assert "circuit nodes:" in out
    assert "decision" in out
    assert main(["compile", alarm_path, "calls(mary)", "--dump", "dot"]) == 0
    assert "digraph" in capsys.readouterr().out


def test_infer_probability_and_gradient(alarm_path, capsys):
    assert main(["infer", alarm_path, "calls(mary)", "--oracle"]) == 0
    out = capsys.readouterr().out
    assert "P(calls(mary)) = 0.14" in out
    assert "oracle = 0.14" in out


def test_infer_gradients_on_learnable(tmp_path, capsys):
    dest = tmp_path / "alarm_learnable.pl"
    shutil.copy(programs_dir() / "alarm_learnable.pl", dest)
    assert main(["infer", str(dest), "calls(mary)", "--grad"]) == 0
    out = capsys.readouterr().out
    assert "d/dearthquake = 0.45" in out
    assert "d/dburglary = 0.4" in out


def test_infer_neural_requires_stub_or_config(t1_path, capsys):
    assert main(["infer", t1_path, "addition(a,b,8)"]) == 1
    assert "neural" in capsys.readouterr().err
    assert main(["infer", t1_path, "addition(a,b,8)", "--uniform-neural"]) == 0
    out = capsys.readouterr().out
    # uniform digits: P(sum=8) = 9 pairs * 0.01
    assert "0.09" in out


def test_oracle_subcommand(alarm_path, capsys):
    assert main(["oracle", alarm_path, "calls(mary)"]) == 0
    assert "0.14" in capsys.readouterr().out


def test_parse_error_reports_location(tmp_path, capsys):
    bad = tmp_path / "bad.pl"
    bad.write_text("alarm :- .\n")
    assert main(["ground", str(bad), "alarm"]) == 1
    err = capsys.readouterr().err
    assert "bad.pl:1:" in err


def test_learn_subcommand(tmp_path, capsys):
    program = tmp_path / "learn.pl"
    program.write_text("t(0.3)::f.\nq :- f.\n")
    examples = tmp_path / "examples.jsonl"
    examples.write_text('{"query": "q", "target": 1.0}\n')
    metrics = tmp_path / "out" / "metrics.jsonl"
    code = main(
        [
            "learn",
            str(program),
            str(examples),
            "--lr",
            "0.2",
            "--epochs",
            "15",
            "--metrics-out",
            str(metrics),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "f = " in out
    learned = float(out.split("=")[1])
    assert learned > 0.8  # pushed towards 1
    assert metrics.exists()
    assert (tmp_path / "out" / "summary.csv").exists()
    figures = list((tmp_path / "out" / "figures").glob("*.png"))
    assert figures, "learn must render figures next to the delimited output"


def test_experiment_subcommand_smoke(tmp_path, capsys):
    config = {
        "name": "t5-smoke",
        "program": "t5_forth_addition.pl",
        "models": [
            {"name": "m_result", "encoder": "dc", "input_width": 22,
             "layers": [{"units": 10, "activation": "tanh"}], "head": "softmax",
             "outputs": 10, "optimizer": "adam", "lr": 0.05},
            {"name": "m_carry", "encoder": "dc", "input_width": 22,
             "layers": [], "head": "softmax", "outputs": 2, "optimizer": "adam", "lr": 0.05},
        ],
        "encoders": {"dc": {"type": "onehot", "widths": [10, 10, 2]}},
        "data": {"generator": "forth_addition", "train": 16, "test": 4,
                 "train_length": 1, "test_lengths": [2]},
        "trainer": {"batch_size": 8, "epochs": 2, "loss": "cross_entropy", "seed": 0},
        "eval": {"mode": "readout", "position": 3, "subset": 4},
    }
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps(config))
    out_dir = tmp_path / "run"
    assert main(["experiment", str(config_path), "--out", str(out_dir)]) == 0
    assert (out_dir / "metrics.jsonl").exists()
    assert (out_dir / "summary.csv").exists()
    assert (out_dir / "summary.json").exists()
    pngs = list((out_dir / "figures").glob("*.png"))
    assert pngs, "experiment runs must render figures"
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["name"] == "t5-smoke"


def test_zero_epoch_run_writes_initial_metrics(tmp_path):
    config = {
        "name": "t5-zero",
        "program": "t5_forth_addition.pl",
        "models": [
            {"name": "m_result", "encoder": "dc", "input_width": 22, "layers": [],
             "head": "softmax", "outputs": 10},
            {"name": "m_carry", "encoder": "dc", "input_width": 22, "layers": [],
             "head": "softmax", "outputs": 2},
        ],
        "encoders": {"dc": {"type": "onehot", "widths": [10, 10, 2]}},
        "data": {"generator": "forth_addition", "train": 4, "test": 2,
                 "train_length": 1, "test_lengths": [1]},
        "trainer": {"batch_size": 4, "epochs": 0, "seed": 0},
        "eval": {"mode": "readout", "position": 3, "subset": 2},
    }
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps(config))
    out_dir = tmp_path / "run"
    assert main(["experiment", str(config_path), "--out", str(out_dir), "--no-figures"]) == 0
    rows = [json.loads(l) for l in (out_dir / "metrics.jsonl").read_text().splitlines()]
    assert len(rows) == 1
    assert rows[0]["iteration"] == 0


def test_report_renders_from_file(tmp_path):
    metrics = tmp_path / "metrics.jsonl"
    rows = [
        {"iteration": 0, "loss": 1.0, "accuracy": 0.1, "params": {"noisy": 0.5}},
        {"iteration": 10, "loss": 0.5, "accuracy": 0.6, "params": {"noisy": 0.3}},
        {"iteration": 20, "loss": 0.2, "accuracy": 0.9, "params": {"noisy": 0.21}},
    ]
    metrics.write_text("\n".join(json.dumps(r) for r in rows))
    written = report.render_metrics(metrics, tmp_path / "figs", title="demo")
    names = {p.name for p in written}
    assert names == {"loss.png", "accuracy.png", "params.png"}
    assert all(p.stat().st_size > 1000 for p in written)


def test_experiment_failure_carries_context(tmp_path):
    from neurlog.experiments import ExperimentError, run_experiment

    config = {
        "name": "broken",
        "program": "t5_forth_addition.pl",
        "models": [],  # no networks registered -> the first example fails
        "encoders": {},
        "data": {"generator": "forth_addition", "train": 2, "test": 1,
                 "train_length": 1, "test_lengths": [1]},
        "trainer": {"batch_size": 1, "epochs": 1, "seed": 0},
        "eval": {},
    }
    with pytest.raises(ExperimentError, match="broken.*iteration"):
        run_experiment(config, tmp_path / "run", make_figures=False)
