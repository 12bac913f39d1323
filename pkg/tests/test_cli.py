import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from actpv.cli import main
from actpv.config import read_config
from actpv.data import dump_dataset, load_dataset
from actpv.errors import ConfigurationError
from actpv.variation import PVTable

FAST = ["--max-epochs", "2"]


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def prepared(ml_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("prep")
    assert run("prepare-data", "--source", "movielens", "--ml-dir", ml_dir, "--splits", "0.6,0.4",
               "--seed", 1, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def sweep(prepared, tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    assert run("run-ensemble", "--task", "ml-r", "--data", prepared, "--setting",
               "R1,R2,R3,R4,R5,R6,R7", "--n", 3, "--master-seed", 4, *FAST, "--out", out) == 0
    return out


class TestPrepare:
    def test_split_counts(self, prepared):
        train, test = load_dataset(prepared / "train.tsv"), load_dataset(prepared / "test.tsv")
        assert (len(train), len(test)) == (1800, 1200)
        prov = json.loads((prepared / "provenance.json").read_text())
        assert prov["parts"] == {"train.tsv": 1800, "test.tsv": 1200}
        assert set(prov["sha256"]) == {"train.tsv", "test.tsv"}

    def test_same_seed_same_dumps(self, ml_dir, prepared, tmp_path):
        assert run("prepare-data", "--source", "movielens", "--ml-dir", ml_dir, "--seed", 1,
                   "--out", tmp_path) == 0
        for f in ("train.tsv", "test.tsv"):
            assert (tmp_path / f).read_bytes() == (prepared / f).read_bytes()

    def test_bad_splits(self, ml_dir, tmp_path, capsys):
        assert run("prepare-data", "--source", "movielens", "--ml-dir", ml_dir,
                   "--splits", "0.5,0.6", "--out", tmp_path) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_files(self, tmp_path):
        assert run("prepare-data", "--source", "movielens", "--ml-dir", tmp_path / "none",
                   "--out", tmp_path / "o") == 2

    def test_estimator_halves(self, tmp_path):
        assert run("prepare-data", "--source", "synthetic", "--rows", 400, "--estimator-split", 1,
                   "--out", tmp_path) == 0
        assert len(load_dataset(tmp_path / "est_train.tsv")) == 80
        assert len(load_dataset(tmp_path / "est_test.tsv")) == 80


def test_usage_errors(tmp_path):
    assert run("run-ensemble", "--task", "ml-r") == 1
    assert run("frobnicate") == 1
    assert run("run-ensemble", "--task", "ml-r", "--data", tmp_path, "--out", tmp_path / "o") == 2


class TestRunEnsemble:
    def test_r0_zero_pv(self, prepared, tmp_path):
        assert run("run-ensemble", "--task", "ml-r", "--data", prepared, "--setting", "R0",
                   "--n", 5, *FAST, "--out", tmp_path) == 0
        pv = PVTable.from_file(tmp_path / "R0" / "pv.tsv")
        assert len(pv) == 1200 and np.all(pv.pv == 0.0)

    def test_shared_init_seeds(self, sweep):
        def seeds(code):
            m = json.loads((sweep / code / "manifest.json").read_text())
            return [x["seeds"]["init_seed"] for x in m["members"]]
        assert seeds("R3") == seeds("R5") == seeds("R7")

    def test_settings_rows(self, sweep):
        lines = (sweep / "settings.tsv").read_text().splitlines()
        body = [ln for ln in lines if not ln.startswith("#")][1:]
        assert len(body) == 7
        assert [b.split("\t")[0] for b in body][0] == "(R1) R"

    def test_report_carries_provenance(self, sweep):
        rep = json.loads((sweep / "R3" / "metrics.json").read_text())
        assert rep["config"]["master_seed"] == 4 and "workers" not in rep["config"]
        assert set(rep["outputs"]) == {"manifest.json", "predictions.npz", "pv.tsv"}
        assert set(rep["inputs"]) == {"train.tsv", "test.tsv"}

    def test_training_failure_names_member(self, prepared, tmp_path, capsys):
        train = load_dataset(prepared / "train.tsv")
        object.__setattr__(train, "labels", np.full(len(train), 1e200))
        dump_dataset(train, tmp_path / "train.tsv")
        shutil.copy(prepared / "test.tsv", tmp_path / "test.tsv")
        code = run("run-ensemble", "--task", "ml-r", "--data", tmp_path, "--setting", "R1",
                   "--n", 2, *FAST, "--out", tmp_path / "o")
        assert code == 3
        assert "member 0" in capsys.readouterr().err


class TestDownstream:
    def test_correlate_identical(self, sweep, tmp_path):
        p = sweep / "R3" / "pv.tsv"
        assert run("correlate", "--pv-tables", f"{p},{p}", "--labels", "a,b", "--out", tmp_path) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert np.allclose(rep["pearson"], 1.0)

    def test_correlate_mismatch(self, sweep, tmp_path):
        t = PVTable.from_file(sweep / "R3" / "pv.tsv").take(range(10))
        t.to_file(tmp_path / "short.tsv")
        assert run("correlate", "--pv-tables", f"{sweep / 'R3' / 'pv.tsv'},{tmp_path / 'short.tsv'}",
                   "--out", tmp_path / "o") == 2

    def test_delta_ratio_full_size(self, sweep, tmp_path):
        assert run("delta-ratio", "--universe", sweep / "R3", "--sizes", "2,3", "--resamples", 4,
                   "--out", tmp_path) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["points"][-1]["mean"] == 0.0 and rep["universe_size"] == 3
        assert run("delta-ratio", "--universe", sweep / "R3", "--sizes", "4", "--out", tmp_path / "x") == 1

    def test_fit_estimator_ablation_pair(self, sweep, prepared, tmp_path):
        for mode in ("B", "BV"):
            assert run("fit-estimator", "--ensemble", sweep / "R3", "--data", prepared,
                       "--features", mode, "--max-epochs", 5, "--out", tmp_path / mode) == 0
        a = json.loads((tmp_path / "B" / "report.json").read_text())
        b = json.loads((tmp_path / "BV" / "report.json").read_text())
        assert a["seeds"] == b["seeds"] and a["feature_mode"] == "B" and b["feature_mode"] == "BV"
        assert a["n_test"] == b["n_test"] == 600

    def test_fit_estimator_cls(self, sweep, prepared, tmp_path):
        assert run("fit-estimator", "--ensemble", sweep / "R3", "--data", prepared,
                   "--objective", "cls", "--max-epochs", 3, "--out", tmp_path) == 0
        assert (tmp_path / "confusion.tsv").read_text().startswith("# actpv-confusion v1")

    def test_dropout_baseline(self, sweep, prepared, tmp_path):
        assert run("fit-estimator", "--ensemble", sweep / "R3", "--data", prepared,
                   "--max-epochs", 3, "--out", tmp_path / "est") == 0
        assert run("dropout-baseline", "--ensemble", sweep / "R3", "--data", prepared,
                   "--passes", 5, "--estimator", tmp_path / "est", "--out", tmp_path / "d") == 0
        rep = json.loads((tmp_path / "d" / "report.json").read_text())
        assert set(rep["estimator_test_rows"]) == {"dropout", "activation_estimator"}


class TestConfig:
    def test_include_and_override(self, tmp_path):
        (tmp_path / "base.cfg").write_text("n = 7\nmaster-seed = 3\n")
        (tmp_path / "run.cfg").write_text("include = base.cfg\nn = 9\n# comment\n")
        assert read_config(tmp_path / "run.cfg") == {"n": "9", "master_seed": "3"}

    def test_cycle(self, tmp_path):
        (tmp_path / "a.cfg").write_text("include = b.cfg\n")
        (tmp_path / "b.cfg").write_text("include = a.cfg\n")
        with pytest.raises(ConfigurationError):
            read_config(tmp_path / "a.cfg")

    def test_flags_beat_file(self, prepared, tmp_path):
        (tmp_path / "r.cfg").write_text(f"task = ml-r\ndata = {prepared}\nsetting = R0\nn = 9\nmax-epochs = 1\n")
        assert run("run-ensemble", "--config", tmp_path / "r.cfg", "--n", 2, "--out", tmp_path / "o") == 0
        assert json.loads((tmp_path / "o" / "R0" / "manifest.json").read_text())["N"] == 2

    def test_unknown_key(self, tmp_path):
        (tmp_path / "r.cfg").write_text("bogus = 1\n")
        assert run("correlate", "--config", tmp_path / "r.cfg", "--pv-tables", "x", "--out", tmp_path) == 1


def _numeric_outputs(d: Path):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and p.name != "run.json"}


def test_replay_is_byte_identical(prepared, tmp_path):
    assert run("run-ensemble", "--task", "ml-r", "--data", prepared, "--setting", "R7",
               "--n", 3, *FAST, "--workers", 1, "--out", tmp_path / "a") == 0
    assert run("replay", tmp_path / "a" / "run.json", "--workers", 2, "--out", tmp_path / "b") == 0
    a, b = _numeric_outputs(tmp_path / "a"), _numeric_outputs(tmp_path / "b")
    assert a.keys() == b.keys() and all(a[k] == b[k] for k in a)


def test_temperature_sweep(prepared, tmp_path):
    assert run("temperature-sweep", "--data", prepared, "--grid", "0.2,1.0", "--max-epochs", 1,
               "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert set(rep["results"]) == {"0.2", "1.0"} and rep["selected"] in (0.2, 1.0)
