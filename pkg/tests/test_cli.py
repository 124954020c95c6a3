import json

import numpy as np
import pytest

from polyvisc import cli, models
from polyvisc.data import load_dataset
from polyvisc.errors import NotPositiveDefinite


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--seed", 0, "--out", root / "syn", "--n-chem", 20, "--pts-per-chem", 15) == 0
    data = root / "syn" / "dataset.csv"
    assert run("split", "--seed", 0, "--out", root / "split", "--dataset", data, "--variable", "mw") == 0
    split = root / "split" / "split.json"
    assert run("train", "--seed", 0, "--out", root / "penn", "--dataset", data, "--split", split,
               "--kind", "penn", "--max-epochs", 60, "--lr", 3e-3) == 0
    assert run("train", "--seed", 0, "--out", root / "gpr", "--dataset", data, "--split", split, "--kind", "gpr") == 0
    return root, data, split


class TestSynth:
    def test_byte_identical_reruns(self, tmp_path):
        for name in ("a", "b"):
            assert run("synth", "--seed", 3, "--out", tmp_path / name, "--n-chem", 5, "--pts-per-chem", 6) == 0
        for f in ("dataset.csv", "truth.json", "manifest.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_manifest_hashes_outputs(self, tmp_path):
        run("synth", "--seed", 1, "--out", tmp_path, "--n-chem", 3, "--pts-per-chem", 5)
        m = json.loads((tmp_path / "manifest.json").read_text())
        assert m["seed"] == 1 and m["command"] == "synth"
        assert {o["path"] for o in m["outputs"]} == {"dataset.csv", "truth.json"}
        assert "out" not in m["config"]
        assert len(load_dataset(tmp_path / "dataset.csv")) == 15


class TestConfig:
    def test_flag_beats_config_beats_default(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n_chem": 4, "pts_per_chem": 5, "noise_sigma": 0.0, "bins": 7}))
        assert run("synth", "--config", cfg, "--seed", 2, "--out", tmp_path / "o", "--pts-per-chem", 6) == 0
        m = json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]
        assert (m["n_chem"], m["pts_per_chem"], m["noise_sigma"]) == (4, 6, 0.0)
        assert "bins" not in m
        assert len(load_dataset(tmp_path / "o" / "dataset.csv")) == 24

    def test_seed_from_config(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seed": 5, "n_chem": 2, "pts_per_chem": 4}))
        assert run("synth", "--config", cfg, "--out", tmp_path / "o") == 0


class TestExitCodes:
    def test_missing_seed(self, tmp_path):
        assert run("synth", "--out", tmp_path) == 1

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as e:
            run("nonsense")
        assert e.value.code == 1

    def test_bad_flag_value(self, tmp_path):
        with pytest.raises(SystemExit) as e:
            run("split", "--seed", 0, "--out", tmp_path, "--variable", "pressure")
        assert e.value.code == 1

    def test_missing_file(self, tmp_path):
        assert run("predict", "--seed", 0, "--out", tmp_path, "--dataset", tmp_path / "x.csv",
                   "--model", tmp_path / "m.json") == 1

    def test_invalid_counts(self, tmp_path):
        assert run("synth", "--seed", 0, "--out", tmp_path, "--n-chem", 0) == 1

    def test_malformed_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("record_id,kind\nA,homopolymer\n")
        assert run("ingest", "--seed", 0, "--out", tmp_path / "o", "--dataset", bad) == 1

    def test_runtime_failure(self, tmp_path, monkeypatch):
        def boom(cfg, out):
            raise NotPositiveDefinite("kernel matrix")

        monkeypatch.setitem(cli.COMMANDS, "synth", boom)
        assert run("synth", "--seed", 0, "--out", tmp_path) == 2


class TestPipeline:
    def test_train_writes_model_and_metrics(self, pipeline):
        root, _, _ = pipeline
        metrics = json.loads((root / "penn" / "metrics.json").read_text())
        assert np.isfinite(metrics["train_ome"]) and metrics["epochs"] <= 60
        assert models.load_model(root / "penn" / "model.json").kind == "penn"

    def test_predict_reproduces_train_ome(self, pipeline, tmp_path):
        root, data, split = pipeline
        train_only = tmp_path / "train.csv"
        plan = json.loads(split.read_text())
        lines = data.read_text().splitlines(keepends=True)
        keep = set(plan["train_ids"])
        train_only.write_text(lines[0] + "".join(l for l in lines[1:] if l.split(",", 1)[0] in keep))
        for kind in ("penn", "gpr"):
            assert run("predict", "--seed", 0, "--out", tmp_path / kind, "--dataset", train_only,
                       "--model", root / kind / "model.json") == 0
            got = json.loads((tmp_path / kind / "metrics.json").read_text())["ome"]
            want = json.loads((root / kind / "metrics.json").read_text())["train_ome"]
            assert got < want + 1e-6

    def test_evaluate_and_report(self, pipeline, tmp_path):
        root, data, split = pipeline
        assert run("evaluate", "--seed", 0, "--out", tmp_path / "ev", "--dataset", data, "--split", split,
                   "--model", root / "penn" / "model.json", "--model", root / "gpr" / "model.json",
                   "--truth", root / "syn" / "truth.json") == 0
        rep = json.loads((tmp_path / "ev" / "report.json").read_text())
        n_test = len(json.loads(split.read_text())["test_ids"])
        assert set(rep["summary"]) == {"penn", "gpr"}
        for s in rep["summary"].values():
            assert sum(s["tallies"].values()) == s["sweeps"] == n_test
        assert run("report", "--seed", 0, "--out", tmp_path / "rep", "--report", tmp_path / "ev" / "report.json") == 0
        curves = (tmp_path / "rep" / "curves.csv").read_text().splitlines()
        assert curves[0].startswith("model,record_id,variable")
        assert len(curves) == 1 + 2 * n_test * 101

    def test_extrapolate_and_fit_params(self, pipeline, tmp_path):
        root, data, split = pipeline
        assert run("extrapolate", "--seed", 0, "--out", tmp_path / "ex", "--dataset", data, "--split", split,
                   "--model", root / "penn" / "model.json", "--variable", "temp") == 0
        assert (tmp_path / "ex" / "curves.csv").exists()
        assert run("fit-params", "--seed", 0, "--out", tmp_path / "fp", "--dataset", data, "--variable", "mw") == 0
        rows = (tmp_path / "fp" / "params.csv").read_text().splitlines()
        assert rows[0].split(",")[4:8] == ["log_k1", "alpha1", "alpha2", "log_Mcr"]
        assert len(rows) > 1

    def test_ingest_round_trip(self, pipeline, tmp_path):
        _, data, _ = pipeline
        assert run("ingest", "--seed", 0, "--out", tmp_path, "--dataset", data) == 0
        a, b = load_dataset(data), load_dataset(tmp_path / "dataset.csv")
        assert [s.log_eta for s in a] == pytest.approx([s.log_eta for s in b], abs=1e-12)
