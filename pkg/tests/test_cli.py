import json
import subprocess
import sys

import pytest

import dimcl.experiment as experiment
from dimcl.cli import main
from dimcl.config import parse_config
from dimcl.data import save_synthetic, synth_clusters
from dimcl.frameworks import DivergenceError

TINY = """\
synth_dim = 8
per_class = 20
test_per_class = 10
dim = 8
rep_dim = 16
encoder_hidden = 16
projector_hidden = 16
predictor_hidden = 8
batch_size = 20
epochs = 2
warmup_epochs = 1
eval_every = 1
probe_epochs = 5
knn_k = 3
eval_samples = 30
"""


@pytest.fixture
def config_file(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


def test_train_writes_outputs(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["train", str(config_file), "--out-dir", str(out), "--seed", "5"]) == 0
    assert (out / "metrics.csv").exists() and (out / "checkpoint.bin").exists()
    assert parse_config((out / "config.txt").read_text()).seed == 5
    assert "epoch    2" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("lambda = 1.5\n")
    assert main(["train", str(p)]) == 2
    assert "lambda out of [0,1]" in capsys.readouterr().err


def test_missing_file_is_io_error(tmp_path):
    assert main(["train", str(tmp_path / "nope.cfg")]) == 4


def test_divergence_exit_code(config_file, tmp_path, monkeypatch):
    def boom(state, *a, **kw):
        raise DivergenceError(state.step, float("inf"))

    monkeypatch.setattr(experiment, "training_step", boom)
    out = tmp_path / "div"
    assert main(["train", str(config_file), "--out-dir", str(out)]) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "diverged"


def test_sweep_command(config_file, tmp_path, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", str(config_file), "--param", "lambda", "--values", "0,0.5", "--out-dir", str(out)]) == 0
    assert (out / "sweep.csv").exists()
    assert (out / "lambda=0.5" / "metrics.csv").exists()
    assert main(["sweep", str(config_file), "--param", "lambda", "--values", "", "--out-dir", str(out)]) == 2


def test_eval_command(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", str(config_file), "--out-dir", str(out)]) == 0
    data = tmp_path / "data.bin"
    save_synthetic(data, synth_clusters(3, 8, 30, 0.1, seed=0))
    capsys.readouterr()
    assert main(["eval", str(out / "checkpoint.bin"), str(data), "--out-dir", str(tmp_path / "ev")]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["framework"] == "simsiam" and 0 <= result["knn_acc"] <= 100
    assert (tmp_path / "ev" / "eval.json").exists()


def test_verify_command(capsys):
    assert main(["verify"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dimcl", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "verify" in proc.stdout
