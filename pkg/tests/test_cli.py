import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from twophase.cli import main
from twophase.scenarios import ScenarioSpec, generate


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "twophase.cli", *args], capture_output=True, text=True
    )


@pytest.fixture(scope="module")
def nwts_csv(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("nwts")
    data = generate(ScenarioSpec(series="nwts", seed=2))
    frame = pd.DataFrame({k: v for k, v in data.cohort.columns.items()})
    path = tmp / "nwts.csv"
    frame.to_csv(path, index=False)
    schema = {
        "relapse": "outcome", "instit": "phase1", "histol": "phase2", "age": "phase1",
        "stage": "phase1", "study": "phase1", "tumdiam": "phase1",
    }
    schema_path = tmp / "schema.json"
    schema_path.write_text(json.dumps(schema))
    model = {
        "family": "logistic",
        "response": "relapse",
        "terms": [
            {"type": "main", "column": "histol"},
            {"type": "spline", "column": "age", "knot": 1.0},
            {"type": "indicator", "column": "stage", "threshold": 2.0},
            {"type": "interaction",
             "left": {"type": "indicator", "column": "stage", "threshold": 2.0},
             "right": {"type": "main", "column": "tumdiam"}},
        ],
    }
    model_path = tmp / "model.json"
    model_path.write_text(json.dumps(model))
    return path, schema_path, model_path


class TestSimulate:
    def test_byte_identical_reruns(self, tmp_path):
        args = ["simulate", "--series", "1", "--rho", "0.99", "--reps", "8",
                "--seed", "7", "--designs", "srs,pss", "--format", "csv"]
        out1 = run_cli(*args, "--out", str(tmp_path / "a.csv"))
        out2 = run_cli(*args, "--out", str(tmp_path / "b.csv"))
        assert out1.returncode == 0 and out2.returncode == 0, out1.stderr
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_jobs_identical(self, tmp_path):
        base = ["simulate", "--series", "1", "--rho", "0.9", "--reps", "6",
                "--seed", "3", "--designs", "pss", "--estimators", "ipw"]
        a = run_cli(*base, "--jobs", "1", "--out", str(tmp_path / "j1.csv"))
        b = run_cli(*base, "--jobs", "4", "--out", str(tmp_path / "j4.csv"))
        assert a.returncode == 0 and b.returncode == 0, a.stderr + b.stderr
        assert (tmp_path / "j1.csv").read_bytes() == (tmp_path / "j4.csv").read_bytes()

    def test_series4_preset_has_both_estimator_sections(self):
        out = run_cli("simulate", "--series", "4", "--reps", "2", "--seed", "1",
                      "--designs", "pss,scc", "--format", "markdown")
        assert out.returncode == 0, out.stderr
        assert "**ipw**" in out.stdout and "**raking**" in out.stdout

    def test_bad_config_exit_2(self):
        out = run_cli("simulate", "--series", "9", "--reps", "2")
        assert out.returncode == 2

    def test_grid_config(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"series": "1", "grid": {"rho": [0.9, 0.6]}}))
        out = run_cli("simulate", "--config", str(config), "--reps", "2",
                      "--designs", "pss", "--estimators", "ipw")
        assert out.returncode == 0, out.stderr
        lines = out.stdout.strip().splitlines()
        assert len(lines) == 1 + 2  # header + one row per grid point


class TestAllocate:
    def test_neyman_equal_split_on_toy_data(self, tmp_path):
        rng = np.random.default_rng(0)
        frame = pd.DataFrame({
            "g": np.repeat([0, 1], 100),
            "h": rng.standard_normal(200),
        })
        data = tmp_path / "toy.csv"
        frame.to_csv(data, index=False)
        schema = tmp_path / "schema.json"
        schema.write_text(json.dumps({"g": "phase1", "h": "auxiliary"}))
        out = run_cli(
            "allocate", "--data", str(data), "--schema", str(schema),
            "--strata", json.dumps({"kind": "explicit-column", "inputs": ["g"]}),
            "--method", "neyman", "--n", "40", "--h-column", "h",
        )
        assert out.returncode == 0, out.stderr
        alloc = json.loads(out.stdout)
        n_k = [s["n"] for s in alloc["strata"]]
        assert sum(n_k) == 40 and abs(n_k[0] - n_k[1]) <= 4

    def test_nwts_pss_exact(self, nwts_csv):
        data, schema, _ = nwts_csv
        out = run_cli(
            "allocate", "--data", str(data), "--schema", str(schema),
            "--strata", json.dumps({"kind": "cross-classification",
                                    "inputs": ["relapse", "instit"]}),
            "--method", "pss", "--n", "1337",
        )
        assert out.returncode == 0, out.stderr
        alloc = json.loads(out.stdout)
        assert [s["n"] for s in alloc["strata"]] == [1034, 75, 173, 55]

    def test_nwts_if_ipw_near_published(self, nwts_csv):
        data, schema, model = nwts_csv
        out = run_cli(
            "allocate", "--data", str(data), "--schema", str(schema),
            "--strata", json.dumps({"kind": "cross-classification",
                                    "inputs": ["relapse", "instit"]}),
            "--method", "if-ipw", "--n", "1338",
            "--model", str(model), "--target", "histol",
        )
        assert out.returncode == 0, out.stderr
        alloc = json.loads(out.stdout)
        n_k = np.array([s["n"] for s in alloc["strata"]])
        assert np.abs(n_k - np.array([736, 144, 345, 113])).max() <= 2

    def test_missing_columns_exit_2(self, nwts_csv):
        data, schema, _ = nwts_csv
        out = run_cli(
            "allocate", "--data", str(data), "--schema", str(schema),
            "--strata", json.dumps({"kind": "explicit-column", "inputs": ["nope"]}),
            "--method", "pss", "--n", "100",
        )
        assert out.returncode == 2


class TestOtherVerbs:
    def test_presets_include_all_series(self):
        out = run_cli("presets")
        assert out.returncode == 0
        presets = json.loads(out.stdout)["presets"]
        assert {p["series"] for p in presets} == {"1", "2", "3", "4", "nwts"}

    def test_estimate_ipw(self, tmp_path):
        rng = np.random.default_rng(1)
        n = 400
        x = rng.standard_normal(n)
        y = 1 + x + rng.standard_normal(n)
        selected = rng.random(n) < 0.5
        frame = pd.DataFrame({
            "y": y, "x": np.where(selected, x, np.nan),
            "sel": selected.astype(int), "pi": np.full(n, 0.5),
        })
        data = tmp_path / "d.csv"
        frame.to_csv(data, index=False)
        (tmp_path / "schema.json").write_text(json.dumps(
            {"y": "outcome", "x": "phase2", "sel": "phase1", "pi": "phase1"}
        ))
        (tmp_path / "model.json").write_text(json.dumps(
            {"family": "linear", "response": "y", "terms": [{"type": "main", "column": "x"}]}
        ))
        out = run_cli(
            "estimate", "--data", str(data), "--schema", str(tmp_path / "schema.json"),
            "--model", str(tmp_path / "model.json"), "--method", "ipw",
            "--selected-column", "sel", "--pi-column", "pi", "--target", "x",
        )
        assert out.returncode == 0, out.stderr
        result = json.loads(out.stdout)
        assert abs(result["target_coef"] - 1.0) < 0.2


def test_main_returns_exit_code_directly():
    assert main(["presets"]) == 0
