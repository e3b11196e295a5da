"""Scenario generators for the simulation series and the synthetic NWTS cohort.

Each generator returns the cohort, its stratification, the outcome model,
the true and best-estimate influence columns used by the optimal designs,
and the raking configuration (explicit auxiliaries or an imputation model).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit
from scipy.stats import gamma as gamma_dist, norm

from twophase import glm
from twophase.cohort import (
    Cohort,
    CohortError,
    SampleIndicator,
    StratificationRule,
    StratumIndex,
    quantile_codes,
    stratify,
)
from twophase.estimators import ImputationSpec, impute_x

SERIES = ("1", "2", "3", "4", "nwts")

_DEFAULTS: dict[str, dict] = {
    "1": {
        "params": {"rho": 0.9, "beta0": 1.0, "beta1": 1.0, "beta2": 1.0},
        "N": 4000,
        "n": 600,
    },
    "2": {
        "params": {
            "sigma": 0.75,
            "beta0": 1.0,
            "beta1": 1.0,
            "beta2": 1.0,
            "beta3": 1.0,
            "imputations": 1,
        },
        "N": 4000,
        "n": 600,
    },
    "3": {
        "params": {"sigma": 0.75, "beta0": -1.5, "beta1": 0.5, "beta2": 1.0, "imputations": 1},
        "N": 4000,
        "n": 600,
    },
    "4": {
        "params": {
            "sens": 0.95,
            "spec": 0.95,
            "beta1": 1.0,
            "beta2": 1.0,
            "prevalence": 0.05,
            "imputations": 1,
        },
        "N": 10000,
        "n": 1000,
    },
    "nwts": {"params": {"imputations": 1}, "N": 3915, "n": 1338},
}


@dataclass(frozen=True)
class ScenarioSpec:
    """Which series to simulate, with parameter overrides and sizes."""

    series: str
    params: Mapping[str, float] = field(default_factory=dict)
    N: int | None = None
    n: int | None = None
    seed: int = 0

    def __post_init__(self):
        series = str(self.series)
        if series not in SERIES:
            raise ValueError(f"unknown series {series!r} (choose from {SERIES})")
        defaults = _DEFAULTS[series]
        params = dict(defaults["params"])
        unknown = set(self.params) - set(params)
        if unknown:
            raise ValueError(f"unknown parameters for series {series}: {sorted(unknown)}")
        params.update(self.params)
        object.__setattr__(self, "series", series)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "N", int(self.N if self.N is not None else defaults["N"]))
        object.__setattr__(self, "n", int(self.n if self.n is not None else defaults["n"]))
        if self.n > self.N:
            raise ValueError("phase-2 size exceeds cohort size")

    @property
    def mse_scale(self) -> float:
        return 100.0 if self.series in ("4", "nwts") else 1000.0

    def to_dict(self) -> dict:
        return {
            "series": self.series,
            "params": dict(self.params),
            "N": self.N,
            "n": self.n,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioSpec":
        return cls(
            series=str(d["series"]),
            params=dict(d.get("params", {})),
            N=d.get("N"),
            n=d.get("n"),
            seed=int(d.get("seed", 0)),
        )

    def params_label(self) -> str:
        parts = [f"series={self.series}"]
        for key in sorted(self.params):
            value = self.params[key]
            if key == "imputations":
                parts.append(f"{key}={int(value)}")
            else:
                parts.append(f"{key}={value:g}")
        return ",".join(parts)


@dataclass
class ScenarioData:
    """One generated cohort plus everything the designs and estimators need."""

    cohort: Cohort
    index: StratumIndex
    outcome_model: glm.ModelSpec
    target: str
    h_true: np.ndarray
    h_best: np.ndarray
    truth: dict
    auxiliaries: np.ndarray | None = None
    imputation: ImputationSpec | None = None
    case_column: str | None = None


def _standardized(values: np.ndarray) -> np.ndarray:
    sd = values.std()
    if sd == 0:
        raise ValueError("cannot standardize a constant column")
    return (values - values.mean()) / sd


def _full_fit_influence(cohort: Cohort, model: glm.ModelSpec, target: str) -> np.ndarray:
    X, _ = glm.build_design_matrix(cohort, model)
    y = np.asarray(cohort.col(model.response), dtype=float)
    fit = glm.fit_weighted(X, y, np.ones(len(y)), model.family)
    inf = glm.influence_functions(fit, X, y)
    return inf.column(model.target_index(target))


def _census_sample(n_rows: int) -> SampleIndicator:
    return SampleIndicator(np.ones(n_rows, dtype=bool), np.ones(n_rows))


def _design_stage_best_estimate(
    cohort: Cohort,
    outcome_model: glm.ModelSpec,
    imp: ImputationSpec,
    target: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """Best-estimate influence column from full-data imputation models.

    At the design stage no phase-2 sample exists yet, so the imputation model
    is fit on the whole cohort; draws are averaged over the requested number
    of imputations.
    """
    census = _census_sample(cohort.n_rows)
    draws = impute_x(
        cohort,
        census,
        imp,
        rng=rng,
        fit_rows=np.ones(cohort.n_rows, dtype=bool),
        fit_weights=np.ones(cohort.n_rows),
    )
    y = np.asarray(cohort.col(outcome_model.response), dtype=float)
    idx = outcome_model.target_index(target)
    h_sum = None
    for values in draws:
        X, _ = glm.build_design_matrix(cohort, outcome_model, overrides={target: values})
        fit = glm.fit_weighted(X, y, np.ones(len(y)), outcome_model.family)
        h = glm.influence_functions(fit, X, y).column(idx)
        h_sum = h if h_sum is None else h_sum + h
    return h_sum / len(draws)


def _imputation_spec(model: glm.ModelSpec, m: int) -> ImputationSpec:
    if m > 1:
        return ImputationSpec(model=model, mode="multiple", m=m)
    return ImputationSpec(model=model, mode="single")


def _series1(spec: ScenarioSpec, rng: np.random.Generator) -> ScenarioData:
    p = spec.params
    rho = float(p["rho"])
    if not (-1.0 < rho < 1.0):
        raise ValueError("rho must lie strictly inside (-1, 1)")
    N = spec.N
    x = rng.standard_normal(N)
    z = (rng.random(N) < 0.5).astype(float)
    eps = rng.standard_normal(N)
    noise = rng.standard_normal(N)
    y = p["beta0"] + p["beta1"] * x + p["beta2"] * z + eps

    cohort = Cohort(
        columns={"y": y, "x": x, "z": z},
        roles={"y": "outcome", "x": "phase2", "z": "phase1"},
    )
    model = glm.ModelSpec("linear", "y", (glm.Main("x"), glm.Main("z")))
    h = _full_fit_influence(cohort, model, "x")
    hstar = _standardized(rho * _standardized(h) + np.sqrt(1.0 - rho**2) * _standardized(noise))
    cohort = cohort.with_columns(hstar=hstar)
    cohort = Cohort(columns=cohort.columns, roles=dict(cohort.roles, hstar="auxiliary"))
    index = stratify(
        cohort,
        StratificationRule("quantile-cut", ("hstar",), breakpoints=(0.35, 0.65), merge_outer=True),
    )
    return ScenarioData(
        cohort=cohort,
        index=index,
        outcome_model=model,
        target="x",
        h_true=h,
        h_best=hstar,
        truth={"target_value": float(p["beta1"])},
        auxiliaries=hstar[:, None],
    )


def _series2(spec: ScenarioSpec, rng: np.random.Generator) -> ScenarioData:
    p = spec.params
    N = spec.N
    x = rng.standard_normal(N)
    u = rng.standard_normal(N) * float(p["sigma"])
    z1 = (rng.random(N) < 0.5).astype(float)
    z2 = rng.random(N)
    eps = rng.standard_normal(N)
    xt = x + u
    y = p["beta0"] + p["beta1"] * x + p["beta2"] * z1 + p["beta3"] * z2 + eps

    cohort = Cohort(
        columns={"y": y, "x": x, "xt": xt, "z1": z1, "z2": z2},
        roles={"y": "outcome", "x": "phase2", "xt": "auxiliary", "z1": "phase1", "z2": "phase1"},
    )
    model = glm.ModelSpec("linear", "y", (glm.Main("x"), glm.Main("z1"), glm.Main("z2")))
    imp_model = glm.ModelSpec("linear", "x", (glm.Main("xt"), glm.Main("z1"), glm.Main("z2")))
    imp = _imputation_spec(imp_model, int(p["imputations"]))
    index = stratify(
        cohort, StratificationRule("quantile-cut", ("xt",), breakpoints=(0.2, 0.8))
    )
    h = _full_fit_influence(cohort, model, "x")
    h_best = _design_stage_best_estimate(cohort, model, imp, "x", rng)
    return ScenarioData(
        cohort=cohort,
        index=index,
        outcome_model=model,
        target="x",
        h_true=h,
        h_best=h_best,
        truth={"target_value": float(p["beta1"])},
        imputation=imp,
    )


def _series3(spec: ScenarioSpec, rng: np.random.Generator) -> ScenarioData:
    p = spec.params
    N = spec.N
    x = rng.standard_normal(N)
    u = rng.standard_normal(N) * float(p["sigma"])
    z1 = (rng.random(N) < 0.5).astype(float)
    xt = x + u
    probs = expit(p["beta0"] + p["beta1"] * x + p["beta2"] * z1)
    y = (rng.random(N) < probs).astype(float)

    xt_band = quantile_codes(xt, (0.25, 0.75)).astype(float)
    cohort = Cohort(
        columns={"y": y, "x": x, "xt": xt, "z1": z1, "xt_band": xt_band},
        roles={
            "y": "outcome",
            "x": "phase2",
            "xt": "auxiliary",
            "z1": "phase1",
            "xt_band": "phase1",
        },
    )
    model = glm.ModelSpec("logistic", "y", (glm.Main("x"), glm.Main("z1")))
    imp_model = glm.ModelSpec("linear", "x", (glm.Main("xt"), glm.Main("z1")))
    imp = _imputation_spec(imp_model, int(p["imputations"]))
    index = stratify(cohort, StratificationRule("cross-classification", ("y", "xt_band")))
    h = _full_fit_influence(cohort, model, "x")
    h_best = _design_stage_best_estimate(cohort, model, imp, "x", rng)
    return ScenarioData(
        cohort=cohort,
        index=index,
        outcome_model=model,
        target="x",
        h_true=h,
        h_best=h_best,
        truth={"target_value": float(p["beta1"])},
        imputation=imp,
        case_column="y",
    )


def solve_intercept_for_prevalence(
    prevalence: float, beta_x: float, beta_z: float, p_x: float = 0.4, p_z: float = 0.5
) -> float:
    """Intercept making E(Y) hit the target for binary X and Z regressors."""
    if not (0.0 < prevalence < 1.0):
        raise ValueError("infeasible prevalence target")

    def mean_y(b0: float) -> float:
        total = 0.0
        for x, px in ((0.0, 1 - p_x), (1.0, p_x)):
            for z, pz in ((0.0, 1 - p_z), (1.0, p_z)):
                total += px * pz * expit(b0 + beta_x * x + beta_z * z)
        return total - prevalence

    return brentq(mean_y, -40.0, 40.0)


def _series4(spec: ScenarioSpec, rng: np.random.Generator) -> ScenarioData:
    p = spec.params
    N = spec.N
    sens, spe = float(p["sens"]), float(p["spec"])
    # the covariate of interest enters with a negative sign in this series
    beta_x = -float(p["beta1"])
    beta0 = solve_intercept_for_prevalence(float(p["prevalence"]), beta_x, float(p["beta2"]))
    x = (rng.random(N) < 0.4).astype(float)
    z1 = (rng.random(N) < 0.5).astype(float)
    probs = expit(beta0 + beta_x * x + p["beta2"] * z1)
    y = (rng.random(N) < probs).astype(float)
    flip = rng.random(N)
    xt = np.where(x == 1, (flip < sens).astype(float), (flip < 1 - spe).astype(float))

    cohort = Cohort(
        columns={"y": y, "x": x, "xt": xt, "z1": z1},
        roles={"y": "outcome", "x": "phase2", "xt": "auxiliary", "z1": "phase1"},
    )
    model = glm.ModelSpec("logistic", "y", (glm.Main("x"), glm.Main("z1")))
    imp_model = glm.ModelSpec("logistic", "x", (glm.Main("xt"), glm.Main("z1")))
    imp = _imputation_spec(imp_model, int(p["imputations"]))
    index = stratify(cohort, StratificationRule("cross-classification", ("y", "xt")))
    h = _full_fit_influence(cohort, model, "x")
    h_best = _design_stage_best_estimate(cohort, model, imp, "x", rng)
    return ScenarioData(
        cohort=cohort,
        index=index,
        outcome_model=model,
        target="x",
        h_true=h,
        h_best=h_best,
        truth={"target_value": beta_x, "intercept": beta0},
        imputation=imp,
        case_column="y",
    )


# Synthetic NWTS-like cohort.  Cell counts are (relapse x institutional
# histology); covariates are drawn conditional on the cell with systematic
# (low-discrepancy) uniforms so within-stratum spreads are stable, and
# central-lab histology gets exact per-cell counts.
NWTS_CELLS = ((0, 0, 3026), (0, 1, 220), (1, 0, 507), (1, 1, 162))
NWTS_HISTOL_RATES = {(0, 0): 0.0379, (0, 1): 0.7025, (1, 0): 0.1106, (1, 1): 0.9055}
NWTS_STAGE_PROBS = {0: (0.42, 0.30, 0.18, 0.10), 1: (0.22, 0.24, 0.28, 0.26)}
NWTS_AGE_SHAPE = 2.2
NWTS_AGE_SCALE = {0: 1.55, 1: 1.85}
NWTS_DIAM_MEAN_BASE = 9.0
NWTS_DIAM_STAGE_SLOPE = 0.8
NWTS_DIAM_SD = 3.0


def _systematic_uniforms(m: int, rng: np.random.Generator) -> np.ndarray:
    u = (np.arange(m) + rng.random(m)) / m
    return rng.permutation(u)


def _exact_count_flags(m: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    count = int(round(m * rate))
    flags = np.zeros(m)
    flags[rng.choice(m, size=count, replace=False)] = 1.0
    return flags


def _systematic_flags(m: int, rate: float, order: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Exact-count flags spread evenly over a covariate ordering.

    Systematic rank selection keeps the flagged subset's covariate profile
    stable across seeds, which pins down within-stratum influence spreads.
    """
    count = int(round(m * rate))
    flags = np.zeros(m)
    if count:
        ranks = np.floor((np.arange(count) + rng.random()) * m / count).astype(int)
        flags[order[np.clip(ranks, 0, m - 1)]] = 1.0
    return flags


def _exact_categorical(m: int, probs, rng: np.random.Generator) -> np.ndarray:
    quotas = np.asarray(probs, dtype=float) * m
    counts = np.floor(quotas).astype(int)
    order = np.argsort(-(quotas - counts), kind="stable")
    for i in range(m - counts.sum()):
        counts[order[i % len(counts)]] += 1
    values = np.repeat(np.arange(1, len(counts) + 1, dtype=float), counts)
    return rng.permutation(values)


def _nwts(spec: ScenarioSpec, rng: np.random.Generator) -> ScenarioData:
    if spec.N != 3915:
        raise ValueError("the synthetic NWTS cohort has a fixed size of 3915")
    cols = {name: [] for name in ("relapse", "instit", "histol", "age", "stage", "study", "tumdiam")}
    for relapse, instit, m in NWTS_CELLS:
        cols["relapse"].append(np.full(m, float(relapse)))
        cols["instit"].append(np.full(m, float(instit)))
        age = gamma_dist.ppf(
            _systematic_uniforms(m, rng), NWTS_AGE_SHAPE, scale=NWTS_AGE_SCALE[relapse]
        )
        age = np.maximum(age, 0.02)
        cols["age"].append(age)
        stage = _exact_categorical(m, NWTS_STAGE_PROBS[relapse], rng)
        cols["stage"].append(stage)
        cols["study"].append(3.0 + _exact_count_flags(m, 0.5, rng))
        z = norm.ppf(np.clip(_systematic_uniforms(m, rng), 1e-12, 1 - 1e-12))
        diam = NWTS_DIAM_MEAN_BASE + NWTS_DIAM_STAGE_SLOPE * stage + NWTS_DIAM_SD * z
        diam = np.maximum(diam, 0.5)
        cols["tumdiam"].append(diam)
        order = np.lexsort((age, diam, stage))
        cols["histol"].append(
            _systematic_flags(m, NWTS_HISTOL_RATES[(relapse, instit)], order, rng)
        )
    columns = {name: np.concatenate(parts) for name, parts in cols.items()}
    cohort = Cohort(
        columns=columns,
        roles={
            "relapse": "outcome",
            "instit": "phase1",
            "histol": "phase2",
            "age": "phase1",
            "stage": "phase1",
            "study": "phase1",
            "tumdiam": "phase1",
        },
    )
    model = glm.ModelSpec(
        "logistic",
        "relapse",
        (
            glm.Main("histol"),
            glm.Spline("age", 1.0),
            glm.Indicator("stage", 2.0),
            glm.Interaction(glm.Indicator("stage", 2.0), glm.Main("tumdiam")),
        ),
    )
    imp_model = glm.ModelSpec(
        "logistic",
        "histol",
        (
            glm.Main("instit"),
            glm.Indicator("age", 10.0),
            glm.Interaction(glm.Main("study"), glm.Indicator("stage", 3.0)),
        ),
    )
    imp = _imputation_spec(imp_model, int(spec.params["imputations"]))
    index = stratify(cohort, StratificationRule("cross-classification", ("relapse", "instit")))

    X, _ = glm.build_design_matrix(cohort, model)
    y = columns["relapse"]
    fit = glm.fit_weighted(X, y, np.ones(len(y)), model.family)
    h = glm.influence_functions(fit, X, y).column(model.target_index("histol"))
    h_best = _design_stage_best_estimate(cohort, model, imp, "histol", rng)
    return ScenarioData(
        cohort=cohort,
        index=index,
        outcome_model=model,
        target="histol",
        h_true=h,
        h_best=h_best,
        truth={
            "target_value": float(fit.beta[model.target_index("histol")]),
            "census_beta": fit.beta.tolist(),
        },
        imputation=imp,
        case_column="relapse",
    )


_GENERATORS = {"1": _series1, "2": _series2, "3": _series3, "4": _series4, "nwts": _nwts}


def generate(spec: ScenarioSpec, rng: np.random.Generator | None = None) -> ScenarioData:
    """Generate one cohort for the scenario (deterministic given the rng/seed)."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    return _GENERATORS[spec.series](spec, rng)
