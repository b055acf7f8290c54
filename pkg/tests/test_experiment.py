import json

import numpy as np
import pytest

import dimcl.experiment as experiment
from dimcl import losses
from dimcl.config import ConfigError, ExperimentConfig, parse_config
from dimcl.data import cifar_bytes, save_synthetic, synth_clusters, Dataset
from dimcl.experiment import (
    COLUMNS,
    loss_only_pair,
    read_metrics_csv,
    run_experiment,
    sweep,
    sweep_configs,
)
from dimcl.frameworks import DivergenceError, load_checkpoint


def tiny(tmp_path, name="run", **kw):
    base = dict(
        synth_dim=8, per_class=20, test_per_class=10, dim=8, rep_dim=16, encoder_hidden=16,
        projector_hidden=16, predictor_hidden=8, batch_size=20, epochs=2, warmup_epochs=1,
        eval_every=1, probe_epochs=5, knn_k=3, eval_samples=30, out_dir=str(tmp_path / name),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_zero_epochs_has_only_initial_row(tmp_path):
    rep = run_experiment(tiny(tmp_path, epochs=0))
    assert [r.epoch for r in rep.rows] == [0]
    assert rep.rows[0].probe_acc is not None and rep.rows[0].knn_acc is not None


def test_rows_and_eval_cadence(tmp_path):
    rep = run_experiment(tiny(tmp_path, epochs=5, eval_every=2))
    assert [r.epoch for r in rep.rows] == [0, 1, 2, 3, 4, 5]
    assert [r.probe_acc is not None for r in rep.rows] == [True, False, True, False, True, True]
    assert rep.steps == 5 * 3


def test_outputs_written_and_parseable(tmp_path):
    cfg = tiny(tmp_path)
    rep = run_experiment(cfg)
    out = tmp_path / "run"
    text = (out / "metrics.csv").read_text()
    assert text.splitlines()[0] == "# dimcl-metrics-v1"
    assert text.splitlines()[1] == ",".join(COLUMNS)
    assert "nan" not in text.lower()
    assert read_metrics_csv(text) == rep.rows
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["wall_clock_seconds"] > 0
    assert parse_config(summary["config"]) == cfg
    assert parse_config((out / "config.txt").read_text()) == cfg
    kind, config_text, _ = load_checkpoint(out / "checkpoint.bin")
    assert kind == "simsiam" and parse_config(config_text) == cfg


def test_identical_runs_give_identical_csv(tmp_path):
    for kind in ("simsiam", "byol", "simclr"):
        a = run_experiment(tiny(tmp_path, f"{kind}_a", framework=kind))
        b = run_experiment(tiny(tmp_path, f"{kind}_b", framework=kind))
        assert (tmp_path / f"{kind}_a" / "metrics.csv").read_bytes() == (tmp_path / f"{kind}_b" / "metrics.csv").read_bytes()
        assert a.rows == b.rows


def test_seed_changes_results(tmp_path):
    a = run_experiment(tiny(tmp_path, "a", seed=1), write=False)
    b = run_experiment(tiny(tmp_path, "b", seed=2), write=False)
    assert a.metrics_csv() != b.metrics_csv()


def test_lambda_sweep_zero_matches_baseline(tmp_path):
    cfg = tiny(tmp_path, "sweep")
    res = sweep(cfg, "lambda", ["0", "1"])
    base = run_experiment(tiny(tmp_path, "baseline", regularizer="none"))
    lam0 = (tmp_path / "sweep" / "lambda=0.0" / "metrics.csv").read_bytes()
    assert lam0 == (tmp_path / "baseline" / "metrics.csv").read_bytes()
    assert res.reports[0].rows == base.rows
    for row in res.reports[1].rows[1:]:
        assert row.total_loss == row.dimcl_loss
    long = (tmp_path / "sweep" / "sweep.csv").read_text().splitlines()
    assert long[0].startswith("# dimcl-sweep-v1") and long[1] == "param_value,metric,epoch,value"
    assert {line.split(",")[0] for line in long[2:]} == {"0.0", "1.0"}


def test_tau_sweep_loss_only_matches_losses_module(tmp_path):
    cfg = tiny(tmp_path, "tau", mode="loss_only", batch_size=16, dim=12)
    res = sweep(cfg, "tau", ["1", "0.1"], write=False)
    pair = loss_only_pair(cfg)
    for tau, rep in zip((1.0, 0.1), res.reports):
        assert rep.rows[0].dimcl_loss == losses.dimcl_loss(pair, tau).value
        assert rep.rows[0].base_loss == losses.batch_infonce(pair, cfg.base_tau).value


def test_dim_sweep_isolates_projector_width(tmp_path):
    cfgs = sweep_configs(tiny(tmp_path, "d"), "dim", ["4", "8"])
    a, b = (vars(c).copy() for c in cfgs)
    diff = {k for k in a if a[k] != b[k]}
    assert diff == {"dim", "out_dir"}
    res = sweep(tiny(tmp_path, "d", epochs=1), "dim", ["4", "8"])
    widths = []
    for v in ("4", "8"):
        _, _, tensors = load_checkpoint(tmp_path / "d" / f"dim={v}" / "checkpoint.bin")
        widths.append(tensors["online.projector.fc2.W"].shape[1])
    assert widths == [4, 8] and len(res.reports) == 2


def test_sweep_errors(tmp_path):
    with pytest.raises(ConfigError):
        sweep(tiny(tmp_path), "lambda", [])
    with pytest.raises(ConfigError):
        sweep(tiny(tmp_path), "epochs", ["1"])
    with pytest.raises(ConfigError, match="lambda out of"):
        sweep(tiny(tmp_path), "lambda", ["3"])


def test_parallel_sweep_matches_sequential(tmp_path):
    seq = sweep(tiny(tmp_path, "seq", epochs=1), "lambda", ["0", "0.5"], workers=1, write=False)
    par = sweep(tiny(tmp_path, "par", epochs=1), "lambda", ["0", "0.5"], workers=2, write=False)
    assert [r.metrics_csv() for r in seq.reports] == [r.metrics_csv() for r in par.reports]


def test_divergence_gives_partial_report(tmp_path, monkeypatch):
    real = experiment.training_step

    def flaky(state, *a, **kw):
        if state.step == 4:
            raise DivergenceError(state.step, float("nan"))
        return real(state, *a, **kw)

    monkeypatch.setattr(experiment, "training_step", flaky)
    rep = run_experiment(tiny(tmp_path, epochs=3))
    assert rep.status == "diverged" and "step 4" in rep.error
    assert [r.epoch for r in rep.rows] == [0, 1]
    assert read_metrics_csv((tmp_path / "run" / "metrics.csv").read_text()) == rep.rows
    assert not (tmp_path / "run" / "checkpoint.bin").exists()


def test_diversity_stays_positive_after_warmup(tmp_path):
    for seed in range(3):
        rep = run_experiment(tiny(tmp_path, seed=seed, epochs=4, eval_every=4), write=False)
        assert all(r.feature_diversity > 0 for r in rep.rows[1:])


def test_batch_larger_than_train_set(tmp_path):
    with pytest.raises(ConfigError, match="exceeds"):
        run_experiment(tiny(tmp_path, batch_size=100))


def test_synthfile_dataset(tmp_path):
    ds = synth_clusters(3, 8, 30, 0.1, seed=0)
    save_synthetic(tmp_path / "s.bin", ds)
    rep = run_experiment(tiny(tmp_path, dataset="synthfile", data_path=str(tmp_path / "s.bin"), epochs=1), write=False)
    assert rep.status == "ok" and len(rep.rows) == 2


def test_cifar_directory_dataset(tmp_path):
    rng = np.random.default_rng(0)
    folder = tmp_path / "cifar"
    folder.mkdir()
    for name, n in (("data_batch_1.bin", 40), ("test_batch.bin", 20)):
        x = rng.random((n, 32, 32, 3)).astype(np.float32)
        x = np.round(x * 255) / 255
        (folder / name).write_bytes(cifar_bytes(Dataset(x, np.arange(n) % 2, "image")))
    cfg = tiny(tmp_path, dataset="cifar10", data_path=str(folder), per_class=0, test_per_class=0,
               conv_channels=(4, 8), epochs=1, batch_size=20, crop_min=0.5, precision="float32")
    rep = run_experiment(cfg, write=False)
    assert rep.status == "ok" and np.isfinite(rep.final.feature_diversity)
