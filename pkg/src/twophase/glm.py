"""Weighted linear and logistic regression with influence-function extraction.

Linear fits solve weighted least squares in one step; logistic fits use
iteratively reweighted least squares with step-halving.  Influence functions
are the score form h_i = I^{-1} x_i' w_i (y_i - yhat_i) with I the weighted
observed information averaged per observation, so that column sums of h
vanish at the fitted coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

MAX_ABS_BETA = 1e3
SCORE_TOL = 1e-8


class GlmError(RuntimeError):
    """Base class for fitting failures."""


class RankDeficiencyError(GlmError):
    """Design matrix does not have full column rank."""


class ConvergenceError(GlmError):
    """Iteration budget exhausted before the score criterion was met."""


class SeparationError(ConvergenceError):
    """Coefficients diverging, typically complete separation in logistic fits."""


# ---------------------------------------------------------------------------
# Model terms


@dataclass(frozen=True)
class Main:
    column: str

    @property
    def name(self) -> str:
        return self.column


@dataclass(frozen=True)
class Indicator:
    """Binary indicator 1[column > threshold]."""

    column: str
    threshold: float

    @property
    def name(self) -> str:
        return f"{self.column}>{self.threshold:g}"


@dataclass(frozen=True)
class Spline:
    """Linear spline with one knot: expands to min(x, knot) and max(x-knot, 0)."""

    column: str
    knot: float

    @property
    def name(self) -> str:
        return f"{self.column}@{self.knot:g}"


@dataclass(frozen=True)
class Interaction:
    """Elementwise product of two simple terms (main effects or indicators)."""

    left: Main | Indicator
    right: Main | Indicator

    @property
    def name(self) -> str:
        return f"{self.left.name}:{self.right.name}"


Term = Main | Indicator | Spline | Interaction


def _term_from_dict(d: Mapping) -> Term:
    kind = d["type"]
    if kind == "main":
        return Main(d["column"])
    if kind == "indicator":
        return Indicator(d["column"], float(d["threshold"]))
    if kind == "spline":
        return Spline(d["column"], float(d["knot"]))
    if kind == "interaction":
        return Interaction(_term_from_dict(d["left"]), _term_from_dict(d["right"]))
    raise ValueError(f"unknown term type {kind!r}")


def _term_to_dict(t: Term) -> dict:
    if isinstance(t, Main):
        return {"type": "main", "column": t.column}
    if isinstance(t, Indicator):
        return {"type": "indicator", "column": t.column, "threshold": t.threshold}
    if isinstance(t, Spline):
        return {"type": "spline", "column": t.column, "knot": t.knot}
    return {"type": "interaction", "left": _term_to_dict(t.left), "right": _term_to_dict(t.right)}


@dataclass(frozen=True)
class ModelSpec:
    """Outcome or imputation model: family, response column, and terms."""

    family: str
    response: str
    terms: tuple[Term, ...]

    def __post_init__(self):
        if self.family not in ("linear", "logistic"):
            raise ValueError(f"unknown family {self.family!r}")
        object.__setattr__(self, "terms", tuple(self.terms))

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "response": self.response,
            "terms": [_term_to_dict(t) for t in self.terms],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        return cls(
            family=d["family"],
            response=d["response"],
            terms=tuple(_term_from_dict(t) for t in d["terms"]),
        )

    def column_names(self) -> list[str]:
        """Design-matrix column names, intercept first."""
        names = ["(intercept)"]
        for t in self.terms:
            if isinstance(t, Spline):
                names.append(f"{t.column}<={t.knot:g}")
                names.append(f"{t.column}>{t.knot:g}")
            else:
                names.append(t.name)
        return names

    def target_index(self, column: str) -> int:
        """Design column holding the main effect of ``column``."""
        for i, name in enumerate(self.column_names()):
            if name == column:
                return i
        raise ValueError(f"model has no main effect for {column!r}")


def _simple_values(term: Main | Indicator, get) -> np.ndarray:
    x = np.asarray(get(term.column), dtype=float)
    if isinstance(term, Indicator):
        return (x > term.threshold).astype(float)
    return x


def build_design_matrix(
    cohort,
    spec: ModelSpec,
    overrides: Mapping[str, np.ndarray] | None = None,
    rows: np.ndarray | None = None,
) -> tuple[np.ndarray, list[str]]:
    """Expand model terms into a design matrix, intercept column first.

    ``overrides`` substitutes columns by name (e.g. imputed X); ``rows``
    restricts to a boolean mask or index array.  Raises on rank deficiency
    rather than silently dropping columns.
    """
    overrides = overrides or {}

    def get(name: str) -> np.ndarray:
        values = overrides[name] if name in overrides else cohort.col(name)
        values = np.asarray(values, dtype=float)
        return values[rows] if rows is not None else values

    cols: list[np.ndarray] = []
    for t in spec.terms:
        if isinstance(t, (Main, Indicator)):
            cols.append(_simple_values(t, get))
        elif isinstance(t, Spline):
            x = np.asarray(get(t.column), dtype=float)
            lo, hi = x.min(), x.max()
            if not (lo <= t.knot <= hi):
                raise ValueError(f"spline knot {t.knot} outside observed range [{lo}, {hi}]")
            cols.append(np.minimum(x, t.knot))
            cols.append(np.maximum(x - t.knot, 0.0))
        else:
            cols.append(_simple_values(t.left, get) * _simple_values(t.right, get))
    n = len(cols[0]) if cols else (len(get(spec.response)))
    X = np.column_stack([np.ones(n)] + cols)
    names = spec.column_names()
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficiencyError(f"design matrix is rank deficient (columns {names})")
    return X, names


# ---------------------------------------------------------------------------
# Fitting


@dataclass
class FitResult:
    """Coefficients plus the per-observation-scaled information matrix."""

    beta: np.ndarray
    info: np.ndarray
    converged: bool
    iterations: int
    fitted: np.ndarray
    family: str


def _logistic_loglik(y: np.ndarray, eta: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def fit_weighted(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    family: str,
    max_iter: int = 50,
    tol: float = SCORE_TOL,
) -> FitResult:
    """Solve the weighted score equation sum_i w_i x_i (y_i - mu_i) = 0.

    Linear family: one weighted-least-squares step.  Logistic family: IRLS
    with step-halving on the weighted log-likelihood; converged iff
    max |score| < tol * n.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if (w <= 0).any():
        raise GlmError("weights must be strictly positive")
    n = X.shape[0]

    if family == "linear":
        XtW = X.T * w
        A = XtW @ X
        try:
            beta = np.linalg.solve(A, XtW @ y)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("weighted normal equations are singular") from exc
        fitted = X @ beta
        return FitResult(beta, A / n, True, 1, fitted, family)

    if family != "logistic":
        raise ValueError(f"unknown family {family!r}")

    beta = np.zeros(X.shape[1])
    eta = X @ beta
    ll = _logistic_loglik(y, eta, w)
    converged = False
    iterations = 0

    def newton_step(beta, eta, score):
        p = expit(eta)
        wd = np.maximum(w * p * (1.0 - p), 1e-12)
        H = X.T @ (X * wd[:, None])
        try:
            return np.linalg.solve(H, score)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("singular information matrix in IRLS") from exc

    for iterations in range(1, max_iter + 1):
        score = X.T @ (w * (y - expit(eta)))
        if np.max(np.abs(score)) < tol * n:
            converged = True
            break
        step = newton_step(beta, eta, score)
        lam = 1.0
        for _ in range(20):
            cand = beta + lam * step
            ll_new = _logistic_loglik(y, X @ cand, w)
            if ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            lam *= 0.5
        beta = beta + lam * step
        eta = X @ beta
        ll = ll_new
        if np.max(np.abs(beta)) > MAX_ABS_BETA:
            raise SeparationError(f"coefficients diverging (|beta| > {MAX_ABS_BETA:g})")
    if not converged:
        raise ConvergenceError(f"no convergence after {max_iter} IRLS iterations")

    # One extra Newton step: near the optimum it squares the score criterion,
    # which the zero-column-sum property of the influence matrix relies on.
    step = newton_step(beta, eta, score)
    cand = beta + step
    eta_cand = X @ cand
    score_cand = X.T @ (w * (y - expit(eta_cand)))
    if np.max(np.abs(score_cand)) < np.max(np.abs(score)):
        beta, eta = cand, eta_cand

    p = expit(eta)
    wd = w * p * (1.0 - p)
    info = (X.T @ (X * wd[:, None])) / n
    return FitResult(beta, info, True, iterations, p, family)


# ---------------------------------------------------------------------------
# Influence functions


@dataclass
class InfluenceMatrix:
    """Per-observation influence contributions, one column per coefficient."""

    h: np.ndarray
    names: list[str] | None = None

    @property
    def max_colsum_rel(self) -> float:
        """Largest |column sum| relative to the column's absolute mass."""
        sums = np.abs(self.h.sum(axis=0))
        mass = np.maximum(np.abs(self.h).sum(axis=0), 1e-300)
        return float(np.max(sums / mass))

    def column(self, index: int) -> np.ndarray:
        return self.h[:, index]


def influence_functions(
    fit: FitResult,
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
    names: list[str] | None = None,
) -> InfluenceMatrix:
    """Score-form influence contributions h_i = I^{-1} x_i' w_i (y_i - yhat_i).

    For an unweighted fit the weights drop out and h_i matches the usual
    dfbeta-style contributions scaled by n.
    """
    if not fit.converged:
        raise GlmError("influence functions require a converged fit")
    resid = np.asarray(y, dtype=float) - fit.fitted
    if weights is not None:
        resid = resid * np.asarray(weights, dtype=float)
    B = np.asarray(X, dtype=float) * resid[:, None]
    try:
        h = np.linalg.solve(fit.info, B.T).T
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("singular information matrix") from exc
    return InfluenceMatrix(h=h, names=names)
