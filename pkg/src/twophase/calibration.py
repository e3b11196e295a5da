"""Generalized-raking weight calibration.

Adjust design weights minimally, under a distance function, so that weighted
sample totals of auxiliary columns match known population totals.  The
chi-square distance d(a,b) = (a-b)^2/2b has the closed-form GREG solution
w_i = d_i (1 + S_i lambda); the exponential distance
d(a,b) = a log(a/b) - a + b gives w_i = d_i exp(S_i lambda), solved for
lambda by damped Newton iteration on the constraint gap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DISTANCES = ("chi-square", "exponential")


class CalibrationError(RuntimeError):
    """Singular system or diverging Newton iteration."""


@dataclass
class CalibrationResult:
    weights: np.ndarray
    lam: np.ndarray
    converged: bool
    constraint_residual: float
    negative_weights: bool
    iterations: int


def _standardize(S: np.ndarray):
    """Column recombination S @ A that centers/scales for conditioning.

    Columns are scaled to unit spread; if a constant column is present, the
    others are centered against it (centering is only a span-preserving
    recombination when a constant column exists).  Returns (S @ A, A).
    """
    p = S.shape[1]
    spans = S.max(axis=0) - S.min(axis=0)
    const_cols = np.flatnonzero(spans == 0)
    const = int(const_cols[0]) if const_cols.size and S[0, const_cols[0]] != 0 else None

    A = np.zeros((p, p))
    for j in range(p):
        if j == const:
            A[j, j] = 1.0 / S[0, j]
            continue
        sd = S[:, j].std()
        scale = sd if sd > 0 else max(np.abs(S[:, j]).max(), 1.0)
        A[j, j] = 1.0 / scale
        if const is not None and j != const:
            A[const, j] = -S[:, j].mean() / (S[0, const] * scale)
    return S @ A, A


def _residual(S: np.ndarray, d: np.ndarray, w: np.ndarray, totals: np.ndarray) -> float:
    gaps = np.abs(S.T @ w - totals)
    scale = np.maximum(np.maximum(np.abs(totals), np.abs(S).T @ d), 1e-300)
    return float(np.max(gaps / scale))


def calibrate(
    base_weights: np.ndarray,
    sample_aux: np.ndarray,
    totals: np.ndarray,
    distance: str = "exponential",
    tol: float = 1e-8,
    max_iter: int = 50,
) -> CalibrationResult:
    """Calibrate base weights so weighted auxiliary totals hit ``totals``.

    ``sample_aux`` holds the auxiliary columns on the sampled rows only;
    ``totals`` are the corresponding full-population column sums.  The
    residual is measured per column relative to the column's magnitude.
    """
    if distance not in DISTANCES:
        raise ValueError(f"unknown distance {distance!r}")
    d = np.asarray(base_weights, dtype=float)
    S = np.atleast_2d(np.asarray(sample_aux, dtype=float))
    if S.shape[0] != d.shape[0]:
        S = S.T
    totals = np.asarray(totals, dtype=float)
    if S.shape[1] != totals.shape[0]:
        raise ValueError("auxiliary columns and totals disagree")
    if (d <= 0).any():
        raise ValueError("base weights must be positive")

    St, A = _standardize(S)
    tt = A.T @ totals

    if distance == "chi-square":
        M = St.T @ (St * d[:, None])
        try:
            lam_t = np.linalg.solve(M, tt - St.T @ d)
        except np.linalg.LinAlgError as exc:
            raise CalibrationError("singular calibration system") from exc
        w = d * (1.0 + St @ lam_t)
        res = _residual(S, d, w, totals)
        return CalibrationResult(
            weights=w,
            lam=A @ lam_t,
            converged=res <= tol,
            constraint_residual=res,
            negative_weights=bool((w <= 0).any()),
            iterations=1,
        )

    lam_t = np.zeros(S.shape[1])
    w = d.copy()
    res = _residual(S, d, w, totals)
    grew = 0
    iterations = 0
    while res > tol:
        if iterations >= max_iter:
            raise CalibrationError(f"calibration not converged after {max_iter} iterations")
        iterations += 1
        gap = tt - St.T @ w
        J = St.T @ (St * w[:, None])
        try:
            step = np.linalg.solve(J, gap)
        except np.linalg.LinAlgError as exc:
            raise CalibrationError("singular calibration Jacobian") from exc
        # halve the step while the constraint gap does not decrease
        improved = False
        alpha = 1.0
        for _ in range(20):
            lam_new = lam_t + alpha * step
            w_new = d * np.exp(St @ lam_new)
            res_new = _residual(S, d, w_new, totals)
            if res_new < res:
                improved = True
                break
            alpha *= 0.5
        lam_t, w, res = lam_new, w_new, res_new
        if improved:
            grew = 0
        else:
            grew += 1
            if grew >= 5:
                raise CalibrationError("constraint gap grew for 5 consecutive damped steps")
    return CalibrationResult(
        weights=w,
        lam=A @ lam_t,
        converged=True,
        constraint_residual=res,
        negative_weights=bool((w <= 0).any()),
        iterations=iterations,
    )


def greg_total(y: np.ndarray, result: CalibrationResult) -> float:
    """Calibration estimator of a population total: sum of w_i y_i."""
    if not result.converged:
        raise CalibrationError("calibration did not converge")
    return float(np.sum(result.weights * np.asarray(y, dtype=float)))
