"""End-to-end IPW and generalized-raking estimation on a sampled cohort.

The raking estimator follows the plug-in recipe: impute the phase-2 variable
for every row from a weighted imputation model, fit the outcome model on the
full cohort with imputed values, use its influence functions as calibration
auxiliaries, then refit on the sampled rows with calibrated weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from twophase import calibration, glm
from twophase.cohort import Cohort, SampleIndicator


class EstimationError(RuntimeError):
    """Estimator could not produce finite coefficients."""


@dataclass
class EstimatorResult:
    beta: np.ndarray
    names: list[str]
    target_coef: float
    estimator: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "beta": dict(zip(self.names, np.asarray(self.beta).tolist())),
            "target_coef": self.target_coef,
            "diagnostics": self.diagnostics,
        }


@dataclass(frozen=True)
class ImputationSpec:
    """Model and mode for imputing the phase-2 variable.

    ``single`` plugs in the fitted mean (or probability); ``multiple`` takes
    ``m`` draws of coefficients and residual scale from the large-sample
    posterior around the weighted fit, then predicts with noise.  With
    ``keep_observed`` the sampled rows retain their observed values.  The
    seed is the fallback RNG source when the caller supplies none.
    """

    model: glm.ModelSpec
    mode: str = "single"
    m: int = 1
    keep_observed: bool = False
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in ("single", "multiple"):
            raise ValueError(f"unknown imputation mode {self.mode!r}")
        if self.m < 1:
            raise ValueError("m must be at least 1")


def _fit_on_selected(cohort: Cohort, sample: SampleIndicator, spec: glm.ModelSpec):
    rows = np.asarray(sample.selected, dtype=bool)
    X, names = glm.build_design_matrix(cohort, spec, rows=rows)
    y = np.asarray(cohort.col(spec.response), dtype=float)[rows]
    w = sample.design_weights()
    fit = glm.fit_weighted(X, y, w, spec.family)
    return fit, X, y, w, names


def ipw_estimate(
    cohort: Cohort,
    sample: SampleIndicator,
    spec: glm.ModelSpec,
    target: str | None = None,
) -> EstimatorResult:
    """Fit the outcome model on selected rows weighted by 1/pi."""
    fit, _, _, _, names = _fit_on_selected(cohort, sample, spec)
    if not np.isfinite(fit.beta).all():
        raise EstimationError("non-finite IPW coefficients")
    idx = spec.target_index(target) if target else 1
    return EstimatorResult(
        beta=fit.beta,
        names=names,
        target_coef=float(fit.beta[idx]),
        estimator="ipw",
        diagnostics={"iterations": fit.iterations, "converged": fit.converged},
    )


def impute_x(
    cohort: Cohort,
    sample: SampleIndicator,
    spec: ImputationSpec,
    rng: np.random.Generator | None = None,
    fit_rows: np.ndarray | None = None,
    fit_weights: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Impute the phase-2 column for every row; returns one array per draw.

    The imputation model is fit once on the selected rows with design
    weights (or on ``fit_rows`` with ``fit_weights`` when supplied, e.g. the
    full cohort at the design stage); multiple-mode draws are taken around
    that single fit.
    """
    model = spec.model
    if fit_rows is None:
        fit_rows = np.asarray(sample.selected, dtype=bool)
        fit_weights = sample.design_weights()
    Xf, _ = glm.build_design_matrix(cohort, model, rows=fit_rows)
    yf = np.asarray(cohort.col(model.response), dtype=float)[fit_rows]
    w = np.ones(len(yf)) if fit_weights is None else np.asarray(fit_weights, dtype=float)
    fit = glm.fit_weighted(Xf, yf, w, model.family)

    Xall, _ = glm.build_design_matrix(cohort, model)
    observed = np.asarray(cohort.col(model.response), dtype=float)
    sel = np.asarray(sample.selected, dtype=bool)

    def finalize(values: np.ndarray) -> np.ndarray:
        if spec.keep_observed:
            values = np.where(sel, observed, values)
        return values

    if spec.mode == "single":
        eta = Xall @ fit.beta
        pred = expit(eta) if model.family == "logistic" else eta
        return [finalize(pred)]

    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n, p = Xf.shape
    draws: list[np.ndarray] = []
    if model.family == "linear":
        resid = yf - Xf @ fit.beta
        dof = max(n - p, 1)
        sigma2_hat = float(np.sum(w * resid**2) / np.sum(w) * n / dof)
        cov_unit = np.linalg.inv(fit.info * n)
        chol = np.linalg.cholesky(cov_unit)
        for _ in range(spec.m):
            sigma2 = sigma2_hat * dof / rng.chisquare(dof)
            alpha = fit.beta + np.sqrt(sigma2) * (chol @ rng.standard_normal(p))
            values = Xall @ alpha + np.sqrt(sigma2) * rng.standard_normal(len(Xall))
            draws.append(finalize(values))
    else:
        cov = np.linalg.inv(fit.info * n)
        chol = np.linalg.cholesky(cov)
        for _ in range(spec.m):
            alpha = fit.beta + chol @ rng.standard_normal(p)
            probs = expit(Xall @ alpha)
            draws.append(finalize((rng.random(len(Xall)) < probs).astype(float)))
    return draws


def _auxiliaries_from_imputation(
    cohort: Cohort,
    sample: SampleIndicator,
    outcome_spec: glm.ModelSpec,
    imp: ImputationSpec,
    target: str,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, dict]:
    """Average influence matrices of full-cohort fits across imputation draws."""
    draws = impute_x(cohort, sample, imp, rng=rng)
    h_sum = None
    iterations = 0
    y = np.asarray(cohort.col(outcome_spec.response), dtype=float)
    for values in draws:
        X, _ = glm.build_design_matrix(cohort, outcome_spec, overrides={target: values})
        fit = glm.fit_weighted(X, y, np.ones(len(y)), outcome_spec.family)
        inf = glm.influence_functions(fit, X, y)
        h_sum = inf.h if h_sum is None else h_sum + inf.h
        iterations += fit.iterations
    return h_sum / len(draws), {"imputation_draws": len(draws), "imputation_iterations": iterations}


def raking_estimate(
    cohort: Cohort,
    sample: SampleIndicator,
    outcome_spec: glm.ModelSpec,
    imputation: ImputationSpec | None = None,
    auxiliaries: np.ndarray | None = None,
    target: str | None = None,
    distance: str = "exponential",
    rng: np.random.Generator | None = None,
) -> EstimatorResult:
    """Generalized-raking estimate of the outcome model coefficients.

    Auxiliaries default to the influence functions of a full-cohort fit with
    imputed phase-2 values; pass ``auxiliaries`` (full-length columns) to
    calibrate on externally supplied variables instead.  If calibration
    diverges the IPW estimate is returned with a fallback flag.
    """
    if (auxiliaries is None) == (imputation is None):
        raise ValueError("provide exactly one of imputation or auxiliaries")
    target = target or (cohort.phase2_columns[0] if cohort.phase2_columns else None)
    diagnostics: dict = {}

    if auxiliaries is not None:
        S_full = np.atleast_2d(np.asarray(auxiliaries, dtype=float))
        if S_full.shape[0] != cohort.n_rows:
            S_full = S_full.T
    else:
        S_full, diagnostics = _auxiliaries_from_imputation(
            cohort, sample, outcome_spec, imputation, target, rng
        )

    spans = S_full.max(axis=0) - S_full.min(axis=0)
    if not (spans == 0).any():
        S_full = np.column_stack([np.ones(cohort.n_rows), S_full])
    totals = S_full.sum(axis=0)
    sel = np.asarray(sample.selected, dtype=bool)

    try:
        cal = calibration.calibrate(
            sample.design_weights(), S_full[sel], totals, distance=distance
        )
        diagnostics["calibration_residual"] = cal.constraint_residual
        diagnostics["calibration_iterations"] = cal.iterations
    except calibration.CalibrationError as exc:
        fallback = ipw_estimate(cohort, sample, outcome_spec, target=target)
        fallback.estimator = "raking"
        fallback.diagnostics.update(diagnostics)
        fallback.diagnostics["calibration_fallback"] = str(exc)
        return fallback

    X, names = glm.build_design_matrix(cohort, outcome_spec, rows=sel)
    y = np.asarray(cohort.col(outcome_spec.response), dtype=float)[sel]
    fit = glm.fit_weighted(X, y, cal.weights, outcome_spec.family)
    if not np.isfinite(fit.beta).all():
        raise EstimationError("non-finite raking coefficients")
    idx = outcome_spec.target_index(target) if target else 1
    diagnostics["iterations"] = fit.iterations
    diagnostics["converged"] = fit.converged
    return EstimatorResult(
        beta=fit.beta,
        names=names,
        target_coef=float(fit.beta[idx]),
        estimator="raking",
        diagnostics=diagnostics,
    )
