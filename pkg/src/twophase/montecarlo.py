"""Monte Carlo driver comparing designs and estimators on a scenario.

Each replicate regenerates the cohort, computes design-specific allocations
(influence-function designs use the replicate's own influence columns),
draws the phase-2 sample, and runs every requested estimator on the same
sample.  Replicate seeds derive from the master seed by index, so reports
are identical across serial and parallel execution.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from twophase import allocation as alloc_mod
from twophase import estimators as est_mod
from twophase.calibration import CalibrationError
from twophase.cohort import CohortError, StratumIndex, draw_sample
from twophase.glm import GlmError
from twophase.scenarios import ScenarioData, ScenarioSpec, generate

DESIGNS = ("srs", "bss", "pss", "scc", "if-ipw", "if-gr")
ESTIMATORS = ("ipw", "raking")

REPORT_COLUMNS = ("design", "estimator", "params", "mse_star", "se", "reps", "mc_se")

_FAILURE_KINDS = (GlmError, CalibrationError, CohortError, alloc_mod.AllocationError,
                  est_mod.EstimationError, ValueError)


class MonteCarloAbort(RuntimeError):
    """Raised when an estimator fails on more than the tolerated share of replicates."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class MonteCarloReport:
    rows: list[dict] = field(default_factory=list)

    def merged_with(self, other: "MonteCarloReport") -> "MonteCarloReport":
        return MonteCarloReport(rows=self.rows + other.rows)

    def cell(self, design: str, estimator: str, params: str | None = None) -> dict:
        for row in self.rows:
            if row["design"] == design and row["estimator"] == estimator:
                if params is None or row["params"] == params:
                    return row
        raise KeyError((design, estimator, params))

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MonteCarloReport":
        return cls(rows=json.loads(text)["rows"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow([row[c] for c in REPORT_COLUMNS])
        return buf.getvalue()

    def to_markdown(self) -> str:
        """Pivoted table: params as rows, designs as column pairs, one section per estimator."""
        designs = list(dict.fromkeys(r["design"] for r in self.rows))
        estimators = list(dict.fromkeys(r["estimator"] for r in self.rows))
        params = list(dict.fromkeys(r["params"] for r in self.rows))
        lookup = {(r["design"], r["estimator"], r["params"]): r for r in self.rows}
        lines = []
        header = "| params | " + " | ".join(f"{d} MSE* | {d} se" for d in designs) + " |"
        rule = "|" + "---|" * (1 + 2 * len(designs))
        for est in estimators:
            lines.append(f"**{est}**")
            lines.append("")
            lines.append(header)
            lines.append(rule)
            for label in params:
                cells = []
                for d in designs:
                    row = lookup.get((d, est, label))
                    if row is None:
                        cells.extend(["", ""])
                    else:
                        cells.extend([f"{row['mse_star']:.4g}", f"{row['se']:.4g}"])
                lines.append("| " + " | ".join([label] + cells) + " |")
            lines.append("")
        return "\n".join(lines)


def _sample_for_design(
    data: ScenarioData, design: str, n: int, min_per_stratum: int, rng: np.random.Generator
):
    index = data.index
    if design == "srs":
        # true SRS: a single trivial stratum so every row has pi = n/N
        trivial = StratumIndex(
            np.zeros(index.n_rows, dtype=np.int64), 1, np.array([index.n_rows])
        )
        return draw_sample(trivial, [n], rng)
    if design == "bss":
        alloc = alloc_mod.fixed_design("bss", index, n)
    elif design == "pss":
        alloc = alloc_mod.fixed_design("pss", index, n)
    elif design == "scc":
        if data.case_column is None:
            raise alloc_mod.AllocationError("scenario has no case indicator for scc")
        alloc = alloc_mod.fixed_design(
            "scc", index, n, case_column=data.cohort.col(data.case_column)
        )
    elif design == "if-ipw":
        alloc = alloc_mod.if_ipw_allocation(data.h_true, index, n, min_per_stratum)
    elif design == "if-gr":
        alloc = alloc_mod.if_gr_allocation(
            data.h_true, data.h_best, index, n, min_per_stratum
        )
    else:
        raise alloc_mod.AllocationError(f"unknown design {design!r}")
    return draw_sample(index, alloc, rng)


def _estimate(data: ScenarioData, sample, estimator: str, rng: np.random.Generator) -> float:
    if estimator == "ipw":
        res = est_mod.ipw_estimate(data.cohort, sample, data.outcome_model, target=data.target)
    elif estimator == "raking":
        res = est_mod.raking_estimate(
            data.cohort,
            sample,
            data.outcome_model,
            imputation=data.imputation,
            auxiliaries=data.auxiliaries,
            target=data.target,
            rng=rng,
        )
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    return res.target_coef


def _replicate(
    spec: ScenarioSpec,
    designs: Sequence[str],
    estimators: Sequence[str],
    master_seed: int,
    rep: int,
    min_per_stratum: int,
) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(rep,)))
    out: dict = {}
    try:
        data = generate(spec, rng)
    except _FAILURE_KINDS as exc:
        return {(d, e): ("fail", f"generate: {exc}") for d in designs for e in estimators}
    truth = data.truth["target_value"]
    for design in designs:
        try:
            sample = _sample_for_design(data, design, spec.n, min_per_stratum, rng)
        except _FAILURE_KINDS as exc:
            for est in estimators:
                out[(design, est)] = ("fail", f"design: {exc}")
            continue
        for est in estimators:
            try:
                coef = _estimate(data, sample, est, rng)
                out[(design, est)] = ("ok", coef - truth)
            except _FAILURE_KINDS as exc:
                out[(design, est)] = ("fail", str(exc))
    return out


def _replicate_batch(args) -> list[dict]:
    spec_dict, designs, estimators, master_seed, reps, min_per_stratum = args
    spec = ScenarioSpec.from_dict(spec_dict)
    return [
        _replicate(spec, designs, estimators, master_seed, rep, min_per_stratum)
        for rep in reps
    ]


def run_mc(
    spec: ScenarioSpec,
    designs: Sequence[str],
    estimators: Sequence[str],
    reps: int,
    master_seed: int,
    jobs: int = 1,
    min_per_stratum: int = 2,
    failure_limit: float = 0.05,
) -> MonteCarloReport:
    """Replicate the whole design-and-estimate pipeline and aggregate MSEs.

    The report is deterministic given ``master_seed`` and identical for any
    ``jobs`` setting.  Aborts if any (design, estimator) cell fails on more
    than ``failure_limit`` of the replicates.
    """
    designs = [d.lower() for d in designs]
    estimators = [e.lower() for e in estimators]
    for d in designs:
        if d not in DESIGNS:
            raise ValueError(f"unknown design {d!r}")
    for e in estimators:
        if e not in ESTIMATORS:
            raise ValueError(f"unknown estimator {e!r}")

    if jobs > 1 and reps > 1:
        chunks = [list(range(start, reps, jobs)) for start in range(jobs)]
        args = [
            (spec.to_dict(), designs, estimators, master_seed, chunk, min_per_stratum)
            for chunk in chunks
            if chunk
        ]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(_replicate_batch, args))
        per_rep: list[dict] = [None] * reps
        for chunk, batch in zip([c for c in chunks if c], batches):
            for rep, result in zip(chunk, batch):
                per_rep[rep] = result
    else:
        per_rep = [
            _replicate(spec, designs, estimators, master_seed, rep, min_per_stratum)
            for rep in range(reps)
        ]

    rows = []
    label = spec.params_label()
    failures_detail: dict = {}
    for design in designs:
        for est in estimators:
            errors = []
            failures = []
            for rep, res in enumerate(per_rep):
                status, value = res[(design, est)]
                if status == "ok":
                    errors.append(value)
                else:
                    failures.append((rep, value))
            if len(failures) > failure_limit * reps:
                failures_detail[(design, est)] = failures[:10]
                continue
            e = np.asarray(errors)
            mse = float(np.mean(e**2))
            se = float(e.std(ddof=1)) if len(e) > 1 else 0.0
            mc_se = float((e**2).std(ddof=1) / np.sqrt(len(e))) if len(e) > 1 else 0.0
            rows.append(
                {
                    "design": design,
                    "estimator": est,
                    "params": label,
                    "mse_star": mse * spec.mse_scale,
                    "se": se,
                    "reps": reps,
                    "mc_se": mc_se * spec.mse_scale,
                    "failures": len(failures),
                    "mse": mse,
                    "mse_scale": spec.mse_scale,
                }
            )
    if failures_detail:
        detail = {
            f"{d}/{e}": [{"rep": r, "error": msg} for r, msg in items]
            for (d, e), items in failures_detail.items()
        }
        raise MonteCarloAbort(
            f"estimator failure rate above {failure_limit:.0%} in {sorted(detail)}", detail
        )
    return MonteCarloReport(rows=rows)


def run_grid(
    specs: Sequence[ScenarioSpec],
    designs: Sequence[str],
    estimators: Sequence[str],
    reps: int,
    master_seed: int,
    jobs: int = 1,
    min_per_stratum: int = 2,
) -> MonteCarloReport:
    """Run several parameter points and concatenate their report rows."""
    report = MonteCarloReport()
    for offset, spec in enumerate(specs):
        part = run_mc(
            spec,
            designs,
            estimators,
            reps,
            master_seed + offset,
            jobs=jobs,
            min_per_stratum=min_per_stratum,
        )
        report = report.merged_with(part)
    return report


def emit_report(report: MonteCarloReport, fmt: str = "csv", path=None) -> str:
    """Serialize a report as csv, json, or a markdown table; optionally write it."""
    if not report.rows:
        raise ValueError("refusing to emit an empty report")
    if fmt == "csv":
        text = report.to_csv()
    elif fmt == "json":
        text = report.to_json()
    elif fmt in ("markdown", "markdown-table", "md"):
        text = report.to_markdown()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
