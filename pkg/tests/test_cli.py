import json
import subprocess
import sys

import numpy as np
import pytest

from scenario_gan import cli, forecaster, metrics


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> train -> forecast -> copula on a tiny dense model."""
    root = tmp_path_factory.mktemp("pipe")
    assert run("synth", "--length", 3000, "--seed", 1, "--out-dir", root) == 0
    (root / "train.json").write_text(json.dumps({
        "data": str(root / "series.csv"), "h": 7, "k": 8, "stride": 4,
        "architecture": "dense", "iterations": 25, "learning_rate": 5e-4, "clip": 0.03,
    }))
    assert run("train", "--config", root / "train.json", "--out-dir", root) == 0
    common = ["--split", root / "split.json", "--n-scenarios", 4, "--max-instances", 3,
              "--out-dir", root]
    assert run("forecast", "--model", root / "model.json", "--alpha", "1.5,2,3",
               "--horizons", "8,4", "--n-init", 20, "--n-scen", 20, *common) == 0
    assert run("copula", "--horizons", 8, *common) == 0
    return root


def test_synth_outputs(tmp_path):
    assert run("synth", "--length", 50, "--seed", 3, "--out-dir", tmp_path) == 0
    lines = (tmp_path / "series.csv").read_text().splitlines()
    assert lines[0] == "timestamp,power"
    assert len(lines) == 51
    first = (tmp_path / "series.csv").read_bytes()
    assert run("synth", "--length", 50, "--seed", 3, "--out-dir", tmp_path) == 0
    assert (tmp_path / "series.csv").read_bytes() == first
    manifest = json.loads((tmp_path / "manifest_synth.json").read_text())
    assert manifest["config"]["seed"] == 3 and "created" in manifest


def test_train_outputs(pipeline):
    log = (pipeline / "trainlog.csv").read_text().splitlines()
    assert len(log) == 1 + 25
    split = json.loads((pipeline / "split.json").read_text())
    assert set(split["train_starts"]).isdisjoint(split["test_starts"])
    manifest = json.loads((pipeline / "manifest_train.json").read_text())
    assert manifest["config"]["learning_rate"] == 5e-4  # from the config file


def test_train_resume_reproduces_uninterrupted_run(pipeline, tmp_path):
    base = ["--data", pipeline / "series.csv", "--h", 7, "--k", 8, "--stride", 4,
            "--architecture", "dense", "--learning-rate", 5e-4, "--clip", 0.03]
    full, part = tmp_path / "full", tmp_path / "part"
    assert run("train", *base, "--iterations", 12, "--out-dir", full) == 0
    assert run("train", *base, "--iterations", 5, "--out-dir", part) == 0
    assert run("train", *base, "--iterations", 12, "--resume", part / "checkpoint.json",
               "--out-dir", part) == 0
    for name in ("model.json", "trainlog.csv", "checkpoint.json"):
        assert (part / name).read_bytes() == (full / name).read_bytes()


def test_forecast_emits_one_set_per_alpha_and_horizon(pipeline):
    for k in (8, 4):
        for a in ("1.5", "2", "3"):
            sets = forecaster.read_scenarios_csv(pipeline / f"scenarios_k{k}_a{a}.csv")
            assert len(sets) == 3
            assert all(v.shape == (4, k) for v in sets.values())
        real = cli.read_realizations_csv(pipeline / f"realizations_k{k}.csv")
        assert list(real) == list(sets)


def test_forecast_is_reproducible(pipeline, tmp_path):
    argv = ["forecast", "--model", pipeline / "model.json", "--split", pipeline / "split.json",
            "--alpha", 2, "--n-scenarios", 2, "--max-instances", 2, "--n-init", 10, "--n-scen", 10]
    assert run(*argv, "--out-dir", tmp_path / "a") == 0
    assert run(*argv, "--out-dir", tmp_path / "b") == 0
    for name in ("scenarios_k8_a2.csv", "scenarios_k8_a2.json", "feasibility_k8_a2.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_copula_schema_matches_forecast(pipeline):
    gan_header = (pipeline / "scenarios_k8_a2.csv").read_text().splitlines()[0]
    cop_header = (pipeline / "scenarios_k8_copula.csv").read_text().splitlines()[0]
    assert gan_header == cop_header
    doc = json.loads((pipeline / "scenarios_k8_copula.json").read_text())
    assert doc[0]["provenance"]["method"] == "copula"


def test_eval_report_and_library_recomputation(pipeline, tmp_path):
    out = tmp_path / "ev"
    argv = ["eval", "--scenarios", pipeline / "scenarios_k8_a2.csv", pipeline / "scenarios_k8_copula.csv",
            "--methods", "gan", "copula", "--realizations", pipeline / "realizations_k8.csv"]
    assert run(*argv, "--out-dir", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["methods"]) == {"gan", "copula"}
    assert "gan_below_copula" in report
    gan_rows = (out / "crps_gan.csv").read_text().splitlines()
    cop_rows = (out / "crps_copula.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in gan_rows] == [r.split(",")[0] for r in cop_rows]
    sets = forecaster.read_scenarios_csv(pipeline / "scenarios_k8_a2.csv")
    real = cli.read_realizations_csv(pipeline / "realizations_k8.csv")
    curve = metrics.crps_curve([sets[i] for i in real], list(real.values()))
    np.testing.assert_array_equal(report["methods"]["gan"]["crps"], curve.values)
    table = (out / "correlation_gan.csv").read_text().splitlines()
    assert table[0] == "i,j,rho" and len(table) == 1 + 8 * 8
    first = (out / "report.json").read_bytes()
    assert run(*argv, "--out-dir", out) == 0
    assert (out / "report.json").read_bytes() == first


def test_eval_perfect_scenarios_have_zero_crps(tmp_path):
    real = [("a", [0.1, 0.5, 0.3]), ("b", [0.7, 0.2, 0.4])]
    cli.write_realizations_csv(real, tmp_path / "real.csv")
    with open(tmp_path / "perfect.csv", "w") as f:
        f.write("instance,scenario_id,lead_index,value,feasible\n")
        for inst, values in real:
            for sid in range(3):
                for j, v in enumerate(values):
                    f.write(f"{inst},{sid},{j + 1},{v},1\n")
    assert run("eval", "--scenarios", tmp_path / "perfect.csv", "--realizations",
               tmp_path / "real.csv", "--out-dir", tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["methods"]["perfect"]["crps"] == [0.0, 0.0, 0.0]


def test_eval_alignment_mismatch_is_data_error(pipeline, tmp_path):
    cli.write_realizations_csv([("nope", np.full(8, 0.5))], tmp_path / "real.csv")
    assert run("eval", "--scenarios", pipeline / "scenarios_k8_a2.csv",
               "--realizations", tmp_path / "real.csv", "--out-dir", tmp_path) == 2


def test_exit_codes(tmp_path, capsys):
    assert run("train", "--bogus") == 1
    assert run("forecast", "--split", tmp_path / "x.json") == 1  # --model missing
    (tmp_path / "bad.json").write_text('{"no_such_option": 1}')
    assert run("synth", "--config", tmp_path / "bad.json") == 1
    assert run("synth", "--rho", 1.5, "--out-dir", tmp_path) == 1
    assert run("train", "--data", tmp_path / "missing.csv", "--out-dir", tmp_path) == 2
    (tmp_path / "neg.csv").write_text("timestamp,power\n2007-01-01T00:00,-1\n")
    assert run("train", "--data", tmp_path / "neg.csv", "--out-dir", tmp_path) == 2
    capsys.readouterr()


def test_total_forecast_failure_exits_numerical(pipeline, tmp_path):
    # a zero-step budget with no restarts cannot reach a razor-thin interval
    assert run("forecast", "--model", pipeline / "model.json", "--split", pipeline / "split.json",
               "--alpha", 1.0001, "--alpha-sub", 1.00005, "--n-scenarios", 1, "--max-instances", 1,
               "--n-init", 0, "--n-scen", 0, "--restarts", 0, "--out-dir", tmp_path) == 3


def test_thread_env_validation(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "0")
    with pytest.raises(cli.ConfigError):
        cli.threads_from_env()
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli.threads_from_env() == 3


def test_threads_do_not_change_results(pipeline, tmp_path, monkeypatch):
    argv = ["forecast", "--model", pipeline / "model.json", "--split", pipeline / "split.json",
            "--alpha", 2, "--n-scenarios", 3, "--max-instances", 1, "--n-init", 10, "--n-scen", 10]
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert run(*argv, "--out-dir", tmp_path / "t3") == 0
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    assert run(*argv, "--out-dir", tmp_path / "t1") == 0
    name = "scenarios_k8_a2.csv"
    assert (tmp_path / "t3" / name).read_bytes() == (tmp_path / "t1" / name).read_bytes()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "scenario_gan", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "synth" in proc.stdout and "eval" in proc.stdout
