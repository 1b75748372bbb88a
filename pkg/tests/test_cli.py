import copy
import json
import subprocess
import sys

import numpy as np
import pytest

from simteach.checkpoint import load_checkpoint
from simteach.cli import main
from simteach.config import parse_config
from simteach.datasets import read_dataset
from simteach.trainer import evaluate

CLI_CONFIG = {
    "generator": {
        "vocab_size": 4,
        "feature_dim": 6,
        "num_sources": 2,
        "train_per_source": 60,
        "dev_per_source": 24,
        "target_train": 96,
        "target_dev": 32,
        "target_test": 32,
        "label_len_min": 2,
        "label_len_max": 4,
        "frames_per_token_min": 2,
        "frames_per_token_max": 3,
        "noise_sigma": 0.15,
        "source_shift": 0.25,
        "target_shift": 0.5,
    },
    "architecture": {"context": 1, "hidden_sizes": [16]},
    "training": {
        "mode": "stu",
        "alpha": 0.01,
        "delta": 5,
        "tau": 0.6,
        "lr": 0.003,
        "batch_size": 8,
        "pretrain_epochs": 4,
        "distill_epochs": 2,
        "mets_stages": 2,
        "seed": 11,
    },
}


def _write_config(path, doc=CLI_CONFIG):
    path.write_text(json.dumps(doc, indent=2))
    return str(path)


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    """Shared config + generated data + pretrained teachers for CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    config = _write_config(root / "config.json")
    data = root / "data"
    teachers = root / "teachers"
    assert main(["gen", "--config", config, "--out", str(data)]) == 0
    assert main(["pretrain", "--config", config, "--data", str(data), "--out", str(teachers)]) == 0
    return {"root": root, "config": config, "data": data, "teachers": teachers}


def test_gen_writes_domain_trees_and_manifest(cli_env):
    data = cli_env["data"]
    for name in ("source_1", "source_2"):
        assert (data / name / "train.jsonl").exists()
        assert (data / name / "dev.jsonl").exists()
    for split in ("train", "dev", "test"):
        assert (data / "target" / f"{split}.jsonl").exists()
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["command"] == "gen"
    assert manifest["seed"] == 11
    assert manifest["config"]["generator"]["vocab_size"] == 4
    # the manifest's config snapshot re-parses to the same configuration
    parse_config(manifest["config"])
    ds = read_dataset(data / "target" / "test.jsonl")
    assert len(ds.utterances) == 32


def test_gen_missing_required_key(tmp_path, capsys):
    doc = copy.deepcopy(CLI_CONFIG)
    del doc["generator"]["vocab_size"]
    config = _write_config(tmp_path / "c.json", doc)
    assert main(["gen", "--config", config, "--out", str(tmp_path / "out")]) == 2
    assert "vocab_size" in capsys.readouterr().err


def test_gen_unknown_key_rejected(tmp_path, capsys):
    doc = copy.deepcopy(CLI_CONFIG)
    doc["training"]["allpha"] = 0.5
    config = _write_config(tmp_path / "c.json", doc)
    assert main(["gen", "--config", config, "--out", str(tmp_path / "out")]) == 2
    assert "allpha" in capsys.readouterr().err


def test_gen_unwritable_out_is_io_error(tmp_path):
    config = _write_config(tmp_path / "c.json")
    blocker = tmp_path / "blocker"
    blocker.write_text("a file, not a directory")
    assert main(["gen", "--config", config, "--out", str(blocker / "out")]) == 3


def test_pretrain_wrote_checkpoints_and_report(cli_env):
    teachers = cli_env["teachers"]
    assert (teachers / "checkpoints" / "teacher_1.ckpt").exists()
    assert (teachers / "checkpoints" / "teacher_2.ckpt").exists()
    lines = (teachers / "reports" / "teachers.csv").read_text().strip().splitlines()
    assert lines[0] == "mode,split,ter,S,I,D,ref_tokens"
    assert len(lines) == 1 + 2 * 3  # two teachers x three splits


def test_pretrain_rows_match_reevaluation(cli_env):
    teachers = cli_env["teachers"]
    data = cli_env["data"]
    params, meta = load_checkpoint(teachers / "checkpoints" / "teacher_1.ckpt")
    assert meta["mode"] == "pretrain"
    test_ds = read_dataset(data / "target" / "test.jsonl")
    expected = evaluate(params, test_ds).overall
    rows = (teachers / "reports" / "teachers.csv").read_text().strip().splitlines()[1:]
    row = next(r for r in rows if r.startswith("teacher_1,target_test"))
    fields = row.split(",")
    assert fields[2] == f"{expected.ter:.6f}"
    assert [int(x) for x in fields[3:7]] == [
        expected.substitutions,
        expected.insertions,
        expected.deletions,
        expected.ref_tokens,
    ]


def test_pretrain_missing_dataset(tmp_path, capsys):
    config = _write_config(tmp_path / "c.json")
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["pretrain", "--config", config, "--data", str(empty), "--out", str(tmp_path / "o")]) == 2
    assert "missing dataset" in capsys.readouterr().err


def test_distill_happy_path(cli_env, tmp_path):
    out = tmp_path / "stu_run"
    rc = main([
        "distill",
        "--config", cli_env["config"],
        "--data", str(cli_env["data"]),
        "--teachers", str(cli_env["teachers"]),
        "--out", str(out),
    ])
    assert rc == 0
    assert (out / "checkpoints" / "student.ckpt").exists()
    run = json.loads((out / "reports" / "run.json").read_text())
    assert run["mode"] == "stu"
    assert not run["diverged"]
    assert run["student_test_ter"] > 0
    assert len(run["teacher_test_ter"]["pretrained"]) == 2
    epochs = (out / "reports" / "epochs.csv").read_text().strip().splitlines()
    assert epochs[0] == "epoch,step,dev_ter,retention,mean_confidence"
    assert len(epochs) == 1 + 2
    filtering = (out / "reports" / "filtering.csv").read_text().strip().splitlines()
    assert filtering[0] == "epoch,batch,utterance_id,q_1,q_2,b,q_hat,kept,drop_reason"
    assert len(filtering) == 1 + 2 * 96
    params, meta = load_checkpoint(out / "checkpoints" / "student.ckpt")
    assert meta["mode"] == "stu"
    assert meta["step"] == run["final_step"]


def test_distill_kaizen_auto_selects_dev_best_teacher(cli_env, tmp_path):
    out = tmp_path / "kaizen_run"
    rc = main([
        "distill",
        "--config", cli_env["config"],
        "--data", str(cli_env["data"]),
        "--teachers", str(cli_env["teachers"]),
        "--out", str(out),
        "--mode", "kaizen",
    ])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    dev = read_dataset(cli_env["data"] / "target" / "dev.jsonl")
    ters = []
    for i in (1, 2):
        params, _ = load_checkpoint(cli_env["teachers"] / "checkpoints" / f"teacher_{i}.ckpt")
        ters.append(evaluate(params, dev).ter)
    assert manifest["selected_teacher"] == int(np.argmin(ters)) + 1


def test_distill_unknown_mode_exits_2(cli_env, tmp_path, capsys):
    rc = main([
        "distill",
        "--config", cli_env["config"],
        "--data", str(cli_env["data"]),
        "--teachers", str(cli_env["teachers"]),
        "--out", str(tmp_path / "x"),
        "--mode", "bogus",
    ])
    assert rc == 2


def test_distill_missing_teachers_dir(cli_env, tmp_path, capsys):
    empty = tmp_path / "none"
    empty.mkdir()
    rc = main([
        "distill",
        "--config", cli_env["config"],
        "--data", str(cli_env["data"]),
        "--teachers", str(empty),
        "--out", str(tmp_path / "x"),
    ])
    assert rc == 2
    assert "teacher" in capsys.readouterr().err


def test_distill_rerun_from_manifest_is_byte_identical(cli_env, tmp_path):
    out_a = tmp_path / "run_a"
    out_b = tmp_path / "run_b"
    args = ["--data", str(cli_env["data"]), "--teachers", str(cli_env["teachers"])]
    assert main(["distill", "--config", cli_env["config"], *args, "--out", str(out_a)]) == 0
    manifest = json.loads((out_a / "manifest.json").read_text())
    replay_config = tmp_path / "replay.json"
    replay_config.write_text(json.dumps(manifest["config"]))
    assert main(["distill", "--config", str(replay_config), *args, "--out", str(out_b)]) == 0
    for rel in (
        "checkpoints/student.ckpt",
        "reports/run.json",
        "reports/epochs.csv",
        "reports/filtering.csv",
        "reports/final.csv",
    ):
        assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel


def test_eval_command(cli_env, tmp_path, capsys):
    out = tmp_path / "eval_out"
    ckpt = cli_env["teachers"] / "checkpoints" / "teacher_1.ckpt"
    rc = main([
        "eval",
        "--config", cli_env["config"],
        "--data", str(cli_env["data"]),
        "--checkpoint", str(ckpt),
        "--out", str(out),
    ])
    assert rc == 0
    assert "TER on target test" in capsys.readouterr().out
    assert (out / "reports" / "eval.csv").exists()


def test_eval_missing_checkpoint_is_io_error(cli_env, tmp_path):
    rc = main([
        "eval",
        "--config", cli_env["config"],
        "--data", str(cli_env["data"]),
        "--checkpoint", str(tmp_path / "missing.ckpt"),
        "--out", str(tmp_path / "o"),
    ])
    assert rc == 3


def test_sweep_tau_retention_monotone(cli_env, tmp_path):
    out = tmp_path / "sweep_tau"
    rc = main([
        "sweep",
        "--config", cli_env["config"],
        "--data", str(cli_env["data"]),
        "--teachers", str(cli_env["teachers"]),
        "--param", "tau",
        "--values", "0.0,0.6,0.9",
        "--out", str(out),
    ])
    assert rc == 0
    lines = (out / "reports" / "sweep.csv").read_text().strip().splitlines()
    assert lines[0] == "param,value,epoch,step,dev_ter,retention,mean_confidence"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 3 * 2  # three values x two epochs
    retention = {}
    for row in rows:
        retention.setdefault(int(row[2]), []).append((float(row[1]), float(row[5])))
    for epoch, pairs in retention.items():
        ordered = [r for _, r in sorted(pairs)]
        assert ordered == sorted(ordered, reverse=True), f"retention not monotone at epoch {epoch}"


def test_sweep_rejects_delta_zero(cli_env, tmp_path, capsys):
    rc = main([
        "sweep",
        "--config", cli_env["config"],
        "--data", str(cli_env["data"]),
        "--teachers", str(cli_env["teachers"]),
        "--param", "delta",
        "--values", "0,40",
        "--out", str(tmp_path / "x"),
    ])
    assert rc == 2
    assert "delta" in capsys.readouterr().err


def test_sweep_flags_divergent_alpha_run(cli_env, tmp_path):
    doc = copy.deepcopy(CLI_CONFIG)
    doc["training"]["delta"] = 1
    doc["training"]["tau"] = 0.55
    doc["training"]["distill_epochs"] = 3
    config = _write_config(tmp_path / "c.json", doc)
    out = tmp_path / "sweep_alpha"
    rc = main([
        "sweep",
        "--config", config,
        "--data", str(cli_env["data"]),
        "--teachers", str(cli_env["teachers"]),
        "--param", "alpha",
        "--values", "0.001,0.5",
        "--out", str(out),
    ])
    assert rc == 0  # divergence is flagged, not fatal to the sweep
    summary = json.loads((out / "reports" / "sweep.json").read_text())
    by_value = {run["value"]: run for run in summary["runs"]}
    assert not by_value[0.001]["diverged"]
    assert by_value[0.5]["diverged"]
    assert by_value[0.5]["divergence_step"] >= 1
    run = json.loads((out / "runs" / "alpha=0.5" / "reports" / "run.json").read_text())
    assert run["diverged"] and run["divergence_reason"] == "teacher_collapse"


def test_console_script_version():
    proc = subprocess.run(
        [sys.executable, "-m", "simteach.cli", "--version"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "simteach" in proc.stdout
