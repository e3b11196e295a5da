import json

import numpy as np
import pytest

from twophase import montecarlo
from twophase.montecarlo import (
    MonteCarloAbort,
    MonteCarloReport,
    emit_report,
    run_grid,
    run_mc,
)
from twophase.scenarios import ScenarioSpec


SPEC = ScenarioSpec(series="1", params={"rho": 0.9})


class TestRunMc:
    def test_single_rep_deterministic(self):
        a = run_mc(SPEC, ["pss"], ["ipw"], reps=1, master_seed=4)
        b = run_mc(SPEC, ["pss"], ["ipw"], reps=1, master_seed=4)
        assert a.rows == b.rows

    def test_jobs_do_not_change_output(self):
        serial = run_mc(SPEC, ["pss", "if-ipw"], ["ipw", "raking"], reps=6, master_seed=9, jobs=1)
        parallel = run_mc(SPEC, ["pss", "if-ipw"], ["ipw", "raking"], reps=6, master_seed=9, jobs=3)
        assert serial.rows == parallel.rows

    def test_row_keys_and_reps(self):
        report = run_mc(SPEC, ["srs", "bss"], ["ipw"], reps=3, master_seed=1)
        assert [(r["design"], r["estimator"]) for r in report.rows] == [
            ("srs", "ipw"),
            ("bss", "ipw"),
        ]
        assert all(r["reps"] == 3 for r in report.rows)
        assert all(r["mse_star"] >= 0 for r in report.rows)

    def test_unknown_design_rejected(self):
        with pytest.raises(ValueError):
            run_mc(SPEC, ["nope"], ["ipw"], reps=1, master_seed=0)

    def test_failure_abort_carries_diagnostics(self, monkeypatch):
        def explode(*args, **kwargs):
            raise montecarlo.est_mod.EstimationError("boom")

        monkeypatch.setattr(montecarlo, "_estimate", explode)
        with pytest.raises(MonteCarloAbort) as err:
            run_mc(SPEC, ["pss"], ["ipw"], reps=4, master_seed=0)
        assert "pss/ipw" in str(err.value)
        assert err.value.diagnostics


@pytest.fixture(scope="module")
def report():
    return run_mc(SPEC, ["pss"], ["ipw"], reps=2, master_seed=3)


class TestReports:

    def test_csv_single_row(self, report):
        text = emit_report(report, "csv")
        lines = text.strip().splitlines()
        assert lines[0] == "design,estimator,params,mse_star,se,reps,mc_se"
        assert len(lines) == 2

    def test_json_round_trip(self, report):
        text = emit_report(report, "json")
        again = MonteCarloReport.from_json(text)
        assert again.rows == report.rows

    def test_markdown_layout(self, report):
        text = emit_report(report, "markdown")
        assert "**ipw**" in text and "pss MSE*" in text

    def test_file_output(self, report, tmp_path):
        path = tmp_path / "r.csv"
        emit_report(report, "csv", path)
        assert path.read_text() == report.to_csv()

    def test_empty_report_rejected(self):
        with pytest.raises(ValueError):
            emit_report(MonteCarloReport(), "csv")


class TestGrid:
    def test_cardinality(self):
        specs = [
            ScenarioSpec(series="1", params={"rho": rho}) for rho in (0.9, 0.6)
        ]
        report = run_grid(specs, ["srs", "pss"], ["ipw", "raking"], reps=2, master_seed=5)
        assert len(report.rows) == 2 * 2 * 2
        labels = {r["params"] for r in report.rows}
        assert len(labels) == 2

    def test_mse_scale_by_series(self):
        report = run_mc(ScenarioSpec(series="4"), ["pss"], ["ipw"], reps=2, master_seed=6)
        assert report.rows[0]["mse_scale"] == 100.0
        report1 = run_mc(SPEC, ["pss"], ["ipw"], reps=2, master_seed=6)
        assert report1.rows[0]["mse_scale"] == 1000.0
