import json

import numpy as np
import pytest

from deqkit.cell import CellParams
from deqkit.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main
from deqkit.config import save_checkpoint
from deqkit.datasets import make_two_spirals, save_dataset_csv
from deqkit.reports import read_csv_rows
from deqkit.training import ReadoutParams

SMALL = [
    "--set", "model.d_z=4",
    "--set", "data.train_n=64",
    "--set", "data.test_n=16",
    "--set", "train.epochs=2",
    "--set", "train.batch_size=32",
]


@pytest.fixture(scope="module")
def train_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = main(["train", "--seed", "3", "--out", str(out)] + SMALL)
    assert code == EXIT_OK
    return out


def test_train_writes_artifacts(train_run):
    for name in ("curves.csv", "probes.csv", "checkpoint.json",
                 "manifest.json"):
        assert (train_run / name).exists()
    rows = read_csv_rows(train_run / "curves.csv")
    assert len(rows) == 2
    assert [r["epoch"] for r in rows] == ["0", "1"]
    for r in rows:
        assert 0.0 <= float(r["train_acc"]) <= 1.0
        assert 0.0 <= float(r["fwd_conv_rate"]) <= 1.0
        assert float(r["fwd_iters_mean"]) > 0.0


def test_curves_schema_is_pinned(train_run):
    header = (train_run / "curves.csv").read_text().splitlines()[0]
    assert header == ("epoch,wall_s,train_loss,train_acc,test_acc,"
                      "fwd_iters_mean,bwd_vjps_mean,fwd_conv_rate")
    probes_header = (train_run / "probes.csv").read_text().splitlines()[0]
    assert probes_header == "step,strategy,cosine,dot_sign"


def test_manifest_records_resolved_config(train_run):
    manifest = json.loads((train_run / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["status"] == "ok"
    assert manifest["config"]["seed"] == 3
    assert manifest["config"]["model"]["d_z"] == 4
    assert manifest["config"]["train"]["epochs"] == 2
    assert manifest["outputs"]["checkpoint"] == "checkpoint.json"
    assert manifest["totals"]["steps"] == 4


def test_config_file_with_set_and_seed_precedence(tmp_path, train_run):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({
        "seed": 9,
        "model": {"d_z": 4},
        "data": {"train_n": 64, "test_n": 16},
        "train": {"epochs": 5, "batch_size": 32},
    }))
    out = tmp_path / "out"
    code = main(["train", "--config", str(cfg_path), "--seed", "3",
                 "--out", str(out), "--set", "train.epochs=2"])
    assert code == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 3
    assert manifest["config"]["train"]["epochs"] == 2
    reference = json.loads((train_run / "manifest.json").read_text())
    assert manifest["config"] == reference["config"]


def test_rerun_is_byte_identical_except_wall(tmp_path, train_run):
    out = tmp_path / "again"
    code = main(["train", "--seed", "3", "--out", str(out)] + SMALL)
    assert code == EXIT_OK
    first = (train_run / "curves.csv").read_text().splitlines()
    second = (out / "curves.csv").read_text().splitlines()
    assert len(first) == len(second)
    for a, b in zip(first, second):
        ca, cb = a.split(","), b.split(",")
        del ca[1], cb[1]
        assert ca == cb
    assert ((train_run / "probes.csv").read_bytes()
            == (out / "probes.csv").read_bytes())
    assert ((train_run / "checkpoint.json").read_bytes()
            == (out / "checkpoint.json").read_bytes())


def test_train_from_csv_data(tmp_path):
    train = make_two_spirals(48, seed=0)
    test = make_two_spirals(16, seed=1)
    save_dataset_csv(train, tmp_path / "train.csv")
    save_dataset_csv(test, tmp_path / "test.csv")
    out = tmp_path / "out"
    code = main([
        "train", "--out", str(out),
        "--set", f"data.train_csv={tmp_path / 'train.csv'}",
        "--set", f"data.test_csv={tmp_path / 'test.csv'}",
        "--set", "model.d_z=4", "--set", "train.epochs=1",
    ])
    assert code == EXIT_OK
    assert len(read_csv_rows(out / "curves.csv")) == 1


def test_train_divergence_exits_3_with_partial_flush(tmp_path, capsys):
    out = tmp_path / "out"
    code = main([
        "train", "--out", str(out),
        "--set", "model.d_z=2", "--set", "model.kind=linear",
        "--set", "data.train_n=16", "--set", "data.test_n=8",
        "--set", "train.epochs=1", "--set", "train.batch_size=8",
        "--set", "train.learning_rate=1e150",
    ])
    assert code == EXIT_DIVERGED
    assert "error:" in capsys.readouterr().err
    assert (out / "curves.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "diverged"
    assert "checkpoint" not in manifest["outputs"]


def test_bad_inputs_exit_2(tmp_path):
    out = str(tmp_path / "o")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(["train", "--config", str(bad), "--out", out]) == EXIT_CONFIG
    assert main(["train", "--out", out,
                 "--set", "model.width=4"]) == EXIT_CONFIG
    assert main(["train", "--out", out,
                 "--set", "train.epochs"]) == EXIT_CONFIG
    assert main(["train", "--out", out,
                 "--set", "strategy.variant=newton"]) == EXIT_CONFIG
    assert main(["bench-backward", "--out", out]) == EXIT_CONFIG
    assert main(["solve-demo", "--out", out,
                 "--set", "demo.preset=typo"]) == EXIT_CONFIG


def test_argparse_level_errors():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_compare_grads_probes_and_summary(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["compare-grads", "--seed", "1", "--out", str(out)]
                + SMALL + ["--set", "train.fidelity_every=1",
                           "--set", "strategy.variant=gdeq"])
    assert code == EXIT_OK
    rows = read_csv_rows(out / "probes.csv")
    assert len(rows) == 16
    assert {r["strategy"] for r in rows} == {"implicit", "jfb", "npg", "gdeq"}
    for r in rows:
        if r["strategy"] == "implicit":
            assert float(r["cosine"]) == 1.0
        assert r["dot_sign"] in {"-1", "0", "1"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["strategy"]["variant"] == "implicit"
    stdout = capsys.readouterr().out
    assert stdout.count("mean cosine") == 4


def test_bench_backward_from_checkpoint(tmp_path, train_run, capsys):
    out = tmp_path / "bench"
    code = main([
        "bench-backward", "--out", str(out),
        "--set", f"bench.checkpoint={train_run / 'checkpoint.json'}",
        "--set", "bench.trials=10", "--set", "bench.warmup=1",
        "--set", "bench.batch_size=16", "--set", "data.train_n=64",
        "--set", "data.test_n=16",
    ])
    assert code == EXIT_OK
    report = json.loads((out / "speedup.json").read_text())
    assert set(report["strategies"]) == {"implicit", "jfb", "npg", "gdeq"}
    assert report["strategies"]["implicit"]["speedup_vs_implicit"] == 1.0
    assert report["batch_size"] == 16
    assert capsys.readouterr().out.count("speedup vs implicit") == 4


def test_bench_rejects_mismatched_checkpoint(tmp_path):
    p = CellParams(np.zeros((4, 4)), np.zeros((4, 3)), np.zeros(4), "tanh")
    r = ReadoutParams(np.zeros((2, 4)), np.zeros(2))
    ck = tmp_path / "ck.json"
    save_checkpoint(ck, p, r)
    code = main(["bench-backward", "--out", str(tmp_path / "o"),
                 "--set", f"bench.checkpoint={ck}"])
    assert code == EXIT_CONFIG


def test_solve_demo_scalar_linear(tmp_path):
    out = tmp_path / "demo"
    code = main(["solve-demo", "--out", str(out),
                 "--set", "demo.preset=scalar-linear"])
    assert code == EXIT_OK
    rows = read_csv_rows(out / "trace.csv")
    bro = [float(r["residual_norm"]) for r in rows
           if r["solver"] == "broyden"]
    assert bro == [1.0, 0.5, 0.0]
    assert any(r["solver"] == "picard" for r in rows)


def test_solve_demo_blowup_exits_3(tmp_path, capsys):
    out = tmp_path / "demo"
    code = main(["solve-demo", "--out", str(out),
                 "--set", "demo.preset=blowup"])
    assert code == EXIT_DIVERGED
    assert "diverged" in capsys.readouterr().err
    rows = read_csv_rows(out / "trace.csv")
    assert rows
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "diverged"
