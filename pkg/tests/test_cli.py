import json
import os
import subprocess
import sys

import numpy as np
import pytest

from hesskit.cli import main
from hesskit.nets import load_checkpoint

SRC = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def test_estimate_builtin_writes_report(tmp_path, capsys):
    out = str(tmp_path / "est")
    assert main(["estimate", "--fn", "z1z2", "--seed", "7", "--k", "2", "--out", out]) == 0
    report = read_json(os.path.join(out, "reports", "estimate.json"))
    assert report["value"] >= 0.0
    assert report["offdiag_estimate"] == pytest.approx(report["value"] / 2.0)
    config = read_json(os.path.join(out, "config.json"))
    assert config["command"] == "estimate"
    assert config["config"]["seed"] == 7
    assert "version" in config
    assert "penalty estimate" in capsys.readouterr().out


def test_estimate_repeat_matches_enumerated_value(tmp_path):
    out = str(tmp_path / "est")
    assert main(["estimate", "--fn", "z1z2", "--seed", "7", "--k", "2",
                 "--repeat", "200000", "--out", out]) == 0
    repeat = read_json(os.path.join(out, "reports", "estimate.json"))["repeat"]
    assert abs(repeat["mean"] - 4.0) <= 3.0 * repeat["std_error"]


def test_verify_passes(tmp_path):
    out = str(tmp_path / "ver")
    code = main(["verify", "--dims", "2..8", "--trials", "16", "--mc-matrices", "2",
                 "--mc-trials", "40000", "--out", out])
    assert code == 0
    report = read_json(os.path.join(out, "reports", "verify.json"))
    assert report["passed"]
    assert report["identity"]["max_rel_error"] <= 1e-10


def test_train_zero_steps_keeps_init(tmp_path):
    out = str(tmp_path / "tr")
    assert main(["train", "--mode", "baseline", "--steps", "0", "--dataset", "1fov",
                 "--latent-dim", "2", "--dataset-size", "32", "--out", out]) == 0
    loaded = load_checkpoint(os.path.join(out, "checkpoints", "generator.npz"))
    from hesskit.nets import Generator

    seeds = np.random.SeedSequence(0).generate_state(5)
    init = Generator(2, 768, 64, 3, seed=int(seeds[1]))
    for a, b in zip(init.parameters(), loaded.parameters()):
        assert np.array_equal(a.values, b.values)
    assert os.path.exists(os.path.join(out, "log.jsonl"))
    assert read_json(os.path.join(out, "reports", "summary.json"))["steps"] == 0


def test_train_then_eval_and_directions(tmp_path):
    train_out = str(tmp_path / "tr")
    assert main(["train", "--mode", "reconstruction", "--dataset", "2factor",
                 "--latent-dim", "3", "--steps", "20", "--batch-size", "8",
                 "--dataset-size", "64", "--out", train_out]) == 0
    ckpt = os.path.join(train_out, "checkpoints", "generator.npz")

    eval_out = str(tmp_path / "ev")
    assert main(["eval", "--checkpoint", ckpt, "--ppl-samples", "500", "--act-base", "8",
                 "--act-sweep", "4", "--hess-samples", "2", "--out", eval_out]) == 0
    metrics = read_json(os.path.join(eval_out, "reports", "metrics.json"))
    assert len(metrics["activeness"]) == 3
    assert metrics["ppl"]["value"] > 0.0
    assert 0.0 <= metrics["diagonality"]["d_percent"] <= 1.0

    dir_out = str(tmp_path / "dir")
    assert main(["directions", "--checkpoint", ckpt, "--steps", "10", "--out", dir_out]) == 0
    report = read_json(os.path.join(dir_out, "reports", "directions.json"))
    assert np.array(report["directions"]).shape == (3, 3)
    assert report["ortho_residual"] <= 1e-6


def test_estimate_on_checkpoint_with_auto_taps(tmp_path):
    train_out = str(tmp_path / "tr")
    assert main(["train", "--mode", "reconstruction", "--dataset", "1fov",
                 "--latent-dim", "2", "--steps", "5", "--batch-size", "4",
                 "--dataset-size", "32", "--out", train_out]) == 0
    ckpt = os.path.join(train_out, "checkpoints", "generator.npz")
    out = str(tmp_path / "est")
    assert main(["estimate", "--checkpoint", ckpt, "--taps", "auto", "--z", "0.1,-0.3",
                 "--out", out]) == 0
    report = read_json(os.path.join(out, "reports", "estimate.json"))
    assert report["taps"] == ["norm1", "norm2"]
    assert report["value"] >= 0.0


def test_train_from_exported_dataset_manifest(tmp_path):
    data_out = str(tmp_path / "ds")
    assert main(["data", "--spec", "2factor", "--n", "48", "--seed", "3",
                 "--out", data_out]) == 0
    train_out = str(tmp_path / "tr")
    assert main(["train", "--mode", "reconstruction", "--dataset", data_out,
                 "--latent-dim", "2", "--steps", "4", "--batch-size", "8",
                 "--dataset-size", "48", "--out", train_out]) == 0
    summary = read_json(os.path.join(train_out, "reports", "summary.json"))
    assert summary["steps"] == 4
    assert main(["train", "--dataset", "nonexistent-spec",
                 "--out", str(tmp_path / "bad")]) == 1


def test_hessdump_exports_heatmaps(tmp_path):
    out = str(tmp_path / "hd")
    assert main(["hessdump", "--fn", "rotated-separable", "--samples", "2", "--top", "3",
                 "--out", out]) == 0
    report = read_json(os.path.join(out, "reports", "hessians.json"))
    assert report["matrices"] == 8  # 2 points x 4 output components
    assert report["exported"] == 3
    files = os.listdir(os.path.join(out, "heatmaps"))
    assert len([f for f in files if f.endswith(".csv")]) == 3
    assert len([f for f in files if f.endswith(".pgm")]) == 3


def test_data_export(tmp_path):
    out = str(tmp_path / "ds")
    assert main(["data", "--spec", "1fov", "--n", "5", "--seed", "3", "--out", out]) == 0
    manifest = read_json(os.path.join(out, "manifest.json"))
    assert manifest["count"] == 5
    assert len(os.listdir(os.path.join(out, "samples"))) == 5


def test_config_file_with_flag_override(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("k = 4\nseed = 5  # comment\neps = 0.2\n")
    out = str(tmp_path / "est")
    assert main(["estimate", "--fn", "z1z2", "--config", str(cfg_file), "--k", "6",
                 "--out", out]) == 0
    config = read_json(os.path.join(out, "config.json"))["config"]
    assert config["k"] == 6  # flag wins
    assert config["seed"] == 5  # file wins over default
    assert config["eps"] == 0.2
    report = read_json(os.path.join(out, "reports", "estimate.json"))
    assert report["k"] == 6


def test_unknown_config_key_rejected(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("bogus = 1\n")
    assert main(["estimate", "--fn", "z1z2", "--config", str(cfg_file),
                 "--out", str(tmp_path / "x")]) == 1


def test_usage_errors_exit_one(capsys):
    assert main(["nosuchcommand"]) == 1
    assert main([]) == 1
    assert main(["estimate", "--badflag", "1"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err


def test_contract_violation_exits_one(tmp_path):
    assert main(["estimate", "--fn", "nope", "--out", str(tmp_path / "x")]) == 1
    assert main(["estimate", "--out", str(tmp_path / "y")]) == 1  # neither fn nor checkpoint


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_numeric_error_exits_two(tmp_path):
    # beta large enough to overflow the cubic at the default probe scale
    code = main(["estimate", "--fn", "beta-cubic", "--beta", "1e308",
                 "--z", "1e150,1e150", "--out", str(tmp_path / "x")])
    assert code == 2


def test_output_root_env_var(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("HESSKIT_OUTPUT_ROOT", str(tmp_path / "root"))
    monkeypatch.chdir(tmp_path)
    assert main(["estimate", "--fn", "z1z2"]) == 0
    assert (tmp_path / "root" / "estimate" / "config.json").exists()


def test_module_entry_point(tmp_path):
    env = dict(os.environ, PYTHONPATH=SRC)
    proc = subprocess.run(
        [sys.executable, "-m", "hesskit", "estimate", "--fn", "z1z2",
         "--out", str(tmp_path / "m")],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0
    assert "penalty estimate" in proc.stdout
