"""End-to-end runs through the pipeline and the command line."""

import csv
import io
import json
import subprocess
import sys

import pytest

from nclp.autodiff import load_checkpoint
from nclp.cli import main
from nclp.graph import save_dataset
from nclp.methods import TrainConfig
from nclp.pipeline import RunConfig, benchmark, bench_csv, config_hash, run_pipeline
from nclp.splits import SplitBundle
from nclp.synthetic import planted_partition

TINY = {"hidden_dim": 8, "embed_dim": 8, "pred_hidden": 8, "proj_dim": 8, "decoder_hidden": 8,
        "decoder_epochs": 5, "epochs": 3}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data") / "toy"
    g, x, _ = planted_partition(80, 300, 30, num_classes=3, words_per_node=6, seed=1)
    save_dataset(d, g, x)
    return d


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_split_train_eval_hist(tmp_path, dataset, config, capsys):
    split = tmp_path / "split.json"
    code, out, _ = run(capsys, "split", "--dataset", dataset, "--setting", "inductive", "--seed", 2,
                       "--out", split)
    assert code == 0 and json.loads(out)["setting"] == "inductive"
    assert SplitBundle.load(split).seed == 2

    ckpt = tmp_path / "m.nclp"
    code, out, _ = run(capsys, "train", "--method", "tbgrl", "--config", config, "--dataset", dataset,
                       "--split", split, "--out", ckpt, "--loss-csv", tmp_path / "loss.csv", "--deterministic")
    assert code == 0
    summary = json.loads(out)
    assert summary["epochs_run"] == 3 and summary["checkpoint"] == str(ckpt)
    names = load_checkpoint(ckpt).keys()
    assert any(k.startswith("target.") for k in names) and any(k.startswith("encoder.") for k in names)
    assert (tmp_path / "loss.csv").read_text().startswith("epoch,loss,epoch_ms\n")

    metrics = tmp_path / "metrics.jsonl"
    code, out, _ = run(capsys, "eval", "--method", "tbgrl", "--config", config, "--dataset", dataset,
                       "--split", split, "--checkpoint", ckpt, "--out", metrics)
    assert code == 0
    recs = [json.loads(l) for l in metrics.read_text().splitlines()]
    assert {r["bucket"] for r in recs} == {"valid", "all", "obs-obs", "obs-unobs", "unobs-unobs"}
    for r in recs:
        assert set(r) >= {"method", "dataset", "setting", "bucket", "seed", "metric", "value"}
        assert r["config_hash"] and r["checkpoint"] == str(ckpt) and r["split"] == str(split)
        assert r["method"] == "tbgrl" and r["setting"] == "inductive"

    hist = tmp_path / "hist.csv"
    code, out, _ = run(capsys, "export-hist", "--method", "tbgrl", "--config", config, "--dataset", dataset,
                       "--split", split, "--checkpoint", ckpt, "--bins", 10, "--out", hist)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(hist.read_text())))
    assert len(rows) == 10 and list(rows[0]) == ["bin_lo", "bin_hi", "count_pos", "count_neg"]
    bundle = SplitBundle.load(split)
    assert sum(int(r["count_pos"]) for r in rows) == len(bundle.test_pos)


def test_train_without_split(tmp_path, dataset, config, capsys):
    code, out, _ = run(capsys, "train", "--method", "gbt", "--config", config, "--dataset", dataset,
                       "--epochs", 2, "--out", tmp_path / "g.nclp")
    assert code == 0 and json.loads(out)["epochs_run"] == 2


class TestExitCodes:
    def test_usage(self, capsys):
        assert run(capsys, "train", "--method", "nope")[0] == 1
        assert run(capsys, "frobnicate")[0] == 1
        assert run(capsys, "split", "--out", "x")[0] == 1
        assert run(capsys, "--help")[0] == 0

    def test_missing_dataset(self, tmp_path, capsys):
        code, _, err = run(capsys, "split", "--dataset", tmp_path / "absent", "--out", tmp_path / "s.json")
        assert code == 1 and "not found" in err

    def test_bad_config(self, tmp_path, dataset, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run(capsys, "train", "--method", "bgrl", "--config", bad, "--dataset", dataset,
                   "--out", tmp_path / "x")[0] == 1
        bad.write_text(json.dumps({"no_such_key": 1}))
        assert run(capsys, "train", "--method", "bgrl", "--config", bad, "--dataset", dataset,
                   "--out", tmp_path / "x")[0] == 1

    def test_thread_env(self, tmp_path, dataset, config, capsys, monkeypatch):
        monkeypatch.setenv("NCGL_THREADS", "zero")
        assert run(capsys, "train", "--method", "bgrl", "--config", config, "--dataset", dataset,
                   "--out", tmp_path / "x")[0] == 1
        monkeypatch.setenv("NCGL_THREADS", "1")
        assert run(capsys, "train", "--method", "bgrl", "--config", config, "--dataset", dataset,
                   "--out", tmp_path / "x")[0] == 0

    def test_numeric_abort(self, tmp_path, dataset, capsys):
        cfg = tmp_path / "explode.json"
        cfg.write_text(json.dumps({**TINY, "epochs": 50, "lr": 1e30}))
        code, _, err = run(capsys, "train", "--method", "e2e", "--config", cfg, "--dataset", dataset,
                           "--out", tmp_path / "x")
        assert code == 2 and "numeric" in err


def test_sweep_counts_and_determinism(tmp_path, dataset, capsys):
    doc = {"dataset": str(dataset), "method": "tbgrl", "seeds": [0, 1], "train": TINY,
           "grid": {"lr": [1e-3, 5e-3], "lam": [0.3, 0.7]}}
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps(doc))
    outs = []
    for name in ("a", "b"):
        code, out, _ = run(capsys, "sweep", "--config", cfg, "--out-dir", tmp_path / name, "--deterministic")
        assert code == 0
        outs.append(tmp_path / name)
    recs = [json.loads(l) for l in (outs[0] / "metrics.jsonl").read_text().splitlines()]
    valid = [r for r in recs if r["bucket"] == "valid"]
    assert len(valid) == 4 * 2
    assert len({(r["config_hash"], r["seed"]) for r in valid}) == 8
    assert len(list((outs[0] / "checkpoints").iterdir())) == 8
    # checkpoint paths differ by out-dir; compare everything else byte for byte
    strip = lambda p: (p / "metrics.jsonl").read_text().replace(str(p), "")
    assert strip(outs[0]) == strip(outs[1])
    summary = list(csv.DictReader(io.StringIO((outs[0] / "summary.csv").read_text())))
    assert {"mean", "std", "n", "selected"} <= set(summary[0])
    assert len({r["config_hash"] for r in summary if r["selected"] == "1"}) == 1


def test_sweep_cell_cap(dataset):
    with pytest.raises(ValueError):
        RunConfig(dataset=str(dataset), grid={"lr": list(range(5)), "lam": list(range(4))})


def test_bench_schema(tmp_path, dataset, config, capsys):
    out = tmp_path / "bench.csv"
    code, text, _ = run(capsys, "bench", "--dataset", dataset, "--config", config, "--methods", "bgrl,tbgrl",
                        "--epochs", 3, "--runs", 2, "--out", out)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [r["method"] for r in rows] == ["bgrl", "tbgrl"]
    assert {"median_epoch_ms", "std_epoch_ms", "median_total_ms", "setup_ms"} <= set(rows[0])
    assert run(capsys, "bench", "--dataset", dataset, "--methods", "bgrl,nope")[0] == 1


def test_bench_zero_epochs(dataset):
    from nclp.graph import load_dataset

    g, x = load_dataset(dataset)
    rows = benchmark(g, x, None, ["bgrl"], TINY, epochs=0, runs=2)
    assert rows[0].median_total_ms == 0.0 and rows[0].setup_ms > 0.0
    assert "std_epoch_ms" in bench_csv(rows).splitlines()[0]


def test_config_hash_stable():
    a = TrainConfig.from_mapping(TINY, method="bgrl")
    b = TrainConfig.from_mapping(dict(reversed(list(TINY.items()))), method="bgrl")
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(TrainConfig.from_mapping({**TINY, "lr": 0.1}, method="bgrl"))


def test_pipeline_api(tmp_path, dataset):
    res = run_pipeline(RunConfig(dataset=str(dataset), method="grace", seeds=[0], train=TINY,
                                 out_dir=str(tmp_path)), log=None)
    assert res.metrics_path.exists() and res.best_cell == {}
    assert all(r.checkpoint and r.config_hash for r in res.records)


def test_module_entry_point(tmp_path, dataset):
    proc = subprocess.run([sys.executable, "-m", "nclp", "split", "--dataset", str(dataset),
                           "--out", str(tmp_path / "s.json")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "nclp", "split"], capture_output=True, text=True)
    assert proc.returncode == 1
