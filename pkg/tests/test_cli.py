import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from elsm.cli import main
from elsm.data_io import load_embeddings, load_network, save_network, toy_network

GEN = {"n": 12, "T": 4, "K": 2}
TRAIN = {"epochs": 4, "hidden": 8, "head_hidden": 8, "lr": 0.01}


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "gen.json").write_text(json.dumps(GEN))
    (tmp_path / "train.json").write_text(json.dumps(TRAIN))
    save_network(toy_network(), tmp_path / "toy.net")
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


class TestGenerate:
    def test_outputs(self, workdir):
        assert run("generate", "--config", workdir / "gen.json", "--seed", 3,
                   "--out", workdir / "g") == 0
        net = load_network(workdir / "g" / "network.net")
        assert (net.T, net.n) == (4, 12)
        truth = json.loads((workdir / "g" / "truth.json").read_text())
        assert np.asarray(truth["Z"]).shape == (4, 12, 2)
        manifest = json.loads((workdir / "g" / "manifest.json").read_text())
        assert manifest["seed"] == 3 and manifest["subcommand"] == "generate"
        assert manifest["argv"][0] == "generate"

    def test_byte_identical(self, workdir):
        for name in ("a", "b"):
            run("generate", "--config", workdir / "gen.json", "--seed", 1, "--out", workdir / name)
        for f in ("network.net", "truth.json"):
            assert (workdir / "a" / f).read_bytes() == (workdir / "b" / f).read_bytes()

    def test_bad_config(self, workdir, capsys):
        (workdir / "bad.json").write_text('{"n": 0}')
        assert run("generate", "--config", workdir / "bad.json", "--out", workdir / "x") == 2
        assert "error" in capsys.readouterr().err
        assert run("generate", "--config", workdir / "missing.json", "--out", workdir / "x") == 2


class TestTrain:
    def test_outputs_and_determinism(self, workdir):
        for name in ("a", "b"):
            assert run("train", "--data", workdir / "toy.net", "--config", workdir / "train.json",
                       "--out", workdir / name) == 0
        for f in ("embeddings.json", "training_log.csv", "checkpoint.ckpt"):
            assert (workdir / "a" / f).read_bytes() == (workdir / "b" / f).read_bytes()
        emb = load_embeddings(workdir / "a" / "embeddings.json")
        assert emb["nu"].shape == (3, 5, 2)
        rows = list(csv.reader(open(workdir / "a" / "training_log.csv")))
        assert len(rows) == 1 + TRAIN["epochs"]

    def test_resume(self, workdir):
        (workdir / "half.json").write_text(json.dumps({**TRAIN, "epochs": 2}))
        run("train", "--data", workdir / "toy.net", "--config", workdir / "half.json",
            "--out", workdir / "half")
        assert run("train", "--data", workdir / "toy.net", "--config", workdir / "train.json",
                   "--resume", workdir / "half" / "checkpoint.ckpt", "--out", workdir / "rest") == 0
        run("train", "--data", workdir / "toy.net", "--config", workdir / "train.json",
            "--out", workdir / "full")
        a = load_embeddings(workdir / "rest" / "embeddings.json")["nu"]
        b = load_embeddings(workdir / "full" / "embeddings.json")["nu"]
        np.testing.assert_array_equal(a, b)
        manifest = json.loads((workdir / "rest" / "manifest.json").read_text())
        assert manifest["resumed_at_epoch"] == 2 and manifest["epochs_completed"] == 4

    def test_resume_mismatch_exit_code(self, workdir):
        run("train", "--data", workdir / "toy.net", "--config", workdir / "train.json",
            "--out", workdir / "a")
        (workdir / "d3.json").write_text(json.dumps({**TRAIN, "d": 3}))
        assert run("train", "--data", workdir / "toy.net", "--config", workdir / "d3.json",
                   "--resume", workdir / "a" / "checkpoint.ckpt", "--out", workdir / "b") == 2

    def test_errors(self, workdir):
        (workdir / "bad.json").write_text('{"epochs": 1, "typo": 1}')
        assert run("train", "--data", workdir / "toy.net", "--config", workdir / "bad.json",
                   "--out", workdir / "x") == 2
        assert run("train", "--data", workdir / "nope.net", "--config", workdir / "train.json",
                   "--out", workdir / "x") == 1
        (workdir / "broken.net").write_text("5 3 0\n0 0 1 1\n")
        assert run("train", "--data", workdir / "broken.net", "--config", workdir / "train.json",
                   "--out", workdir / "x") == 1
        assert run("train", "--data", workdir / "toy.net", "--config", workdir / "train.json",
                   "--resume", workdir / "train.json", "--out", workdir / "x") == 1
        assert run("train", "--bogus") == 2


class TestCluster:
    def test_outputs(self, workdir):
        run("train", "--data", workdir / "toy.net", "--config", workdir / "train.json",
            "--out", workdir / "t")
        assert run("cluster", "--embeddings", workdir / "t" / "embeddings.json",
                   "--graph", workdir / "toy.net", "--k-max", 3, "--out", workdir / "c") == 0
        rows = list(csv.reader(open(workdir / "c" / "communities.csv")))
        assert rows[0] == ["t", "k", "modularity", "successive_nmi"]
        assert len(rows) == 1 + 3 + 1
        assert all(2 <= int(r[1]) <= 3 for r in rows[1:4])

    def test_bad_range_and_shape(self, workdir):
        run("train", "--data", workdir / "toy.net", "--config", workdir / "train.json",
            "--out", workdir / "t")
        emb = workdir / "t" / "embeddings.json"
        assert run("cluster", "--embeddings", emb, "--graph", workdir / "toy.net",
                   "--k-min", 5, "--k-max", 2, "--out", workdir / "c") == 2
        run("generate", "--config", workdir / "gen.json", "--out", workdir / "g")
        assert run("cluster", "--embeddings", emb, "--graph", workdir / "g" / "network.net",
                   "--out", workdir / "c") == 2


class TestLinkPred:
    def test_baseline_only(self, workdir):
        run("generate", "--config", workdir / "gen.json", "--out", workdir / "g")
        assert run("linkpred", "--data", workdir / "g" / "network.net", "--out",
                   workdir / "lp") == 0
        rows = list(csv.DictReader(open(workdir / "lp" / "linkpred.csv")))
        assert [r["target"] for r in rows] == ["2", "3", "average"]
        manifest = json.loads((workdir / "lp" / "manifest.json").read_text())
        assert manifest["protocol"]["history"] == [[0, 1], [0, 2]]

    def test_with_model(self, workdir):
        run("generate", "--config", workdir / "gen.json", "--out", workdir / "g")
        assert run("linkpred", "--data", workdir / "g" / "network.net", "--config",
                   workdir / "train.json", "--last", 1, "--out", workdir / "lp") == 0
        summary = json.loads((workdir / "lp" / "linkpred.json").read_text())
        assert summary["targets"] == [3]
        assert 0.0 <= summary["ielsm"]["auc"] <= 1.0

    def test_unknown_baseline(self, workdir):
        run("generate", "--config", workdir / "gen.json", "--out", workdir / "g")
        assert run("linkpred", "--data", workdir / "g" / "network.net", "--baselines", "cn",
                   "--out", workdir / "lp") == 2


class TestEvalMetrics:
    def test_json_and_text(self, workdir, capsys):
        P = np.array([[0, 0.9, 0.2], [0.9, 0, 0.4], [0.2, 0.4, 0]])
        A = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
        (workdir / "p.json").write_text(json.dumps({"probabilities": P.tolist()}))
        np.savetxt(workdir / "a.txt", A)
        assert run("eval-metrics", "--pred", workdir / "p.json", "--truth", workdir / "a.txt") == 0
        out = json.loads(capsys.readouterr().out)
        # positives 0.9, 0.4 against negative 0.2
        assert out["auc"] == 1.0 and out["f1"] == 1.0 and out["threshold"] == 0.4

    def test_shape_mismatch(self, workdir):
        np.savetxt(workdir / "a.txt", np.zeros((2, 2)))
        np.savetxt(workdir / "b.txt", np.zeros((3, 3)))
        assert run("eval-metrics", "--pred", workdir / "a.txt", "--truth", workdir / "b.txt") == 2


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "elsm.cli", "--version"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and "elsm" in out.stdout
