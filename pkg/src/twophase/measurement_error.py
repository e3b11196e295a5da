"""Closed-form results for classical measurement error and their sample checks.

With a surrogate Xt = X + U (U zero-mean, independent, constant variance)
and no covariate effect, the residual from regressing the true influence
contributions on their surrogate-based estimates has within-stratum variance
proportional to the estimate's: the ratio is var(U)/var(X) whenever strata
are defined by the outcome, so the optimal designs for the two estimator
classes coincide there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ClassicalMEModel:
    """Additive error model Xt = X + U with var(U) = sigma_u^2."""

    sigma_u: float
    var_x: float

    def __post_init__(self):
        if self.sigma_u < 0 or self.var_x <= 0:
            raise ValueError("sigma_u must be nonnegative and var_x positive")

    @property
    def reliability(self) -> float:
        """lambda = var(X) / var(Xt), the attenuation factor."""
        return self.var_x / (self.var_x + self.sigma_u**2)


def residual_variance_ratio(
    me: ClassicalMEModel,
    stratified_on_y: bool,
    stratum_data: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None,
    k: int | None = None,
) -> np.ndarray:
    """Per-stratum ratio scaling the best-estimate influence variance.

    Valid in the no-effect regime (the coefficient of X is zero; callers
    probing elsewhere get an approximation).  Stratifying on the outcome
    makes the ratio the constant sigma_u^2/var(X); otherwise it is computed
    from supplied per-stratum samples of (X, U, Y) as
    var(U (Y - mu)) / var(X (Y - mu)), with mu the pooled mean of Y.
    """
    if stratified_on_y:
        count = k if k is not None else (len(stratum_data) if stratum_data else 1)
        return np.full(count, me.sigma_u**2 / me.var_x)
    if not stratum_data:
        raise ValueError("stratum samples are required when not stratifying on Y")
    ys = np.concatenate([np.asarray(y, dtype=float) for _, _, y in stratum_data])
    mu = ys.mean()
    ratios = []
    for x, u, y in stratum_data:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.size == 0:
            raise ValueError("empty stratum data")
        num = np.var(u * (y - mu))
        den = np.var(x * (y - mu))
        if den == 0:
            raise ValueError("degenerate stratum: var(X(Y-mu)) is zero")
        ratios.append(num / den)
    return np.asarray(ratios)


def surrogate_influence_slope(
    x: np.ndarray, x_tilde: np.ndarray, y: np.ndarray, mu: float | None = None
) -> float:
    """Slope of true influence contributions on their surrogate-based estimates.

    Estimates cov(lambda Xt (Y-mu), X (Y-mu)) / var(lambda Xt (Y-mu)) with
    lambda the empirical reliability ratio; tends to 1 in the no-effect
    regime regardless of the error scale.
    """
    x = np.asarray(x, dtype=float)
    xt = np.asarray(x_tilde, dtype=float)
    y = np.asarray(y, dtype=float)
    if mu is None:
        mu = float(y.mean())
    lam = np.var(x) / np.var(xt)
    if not np.isfinite(lam) or lam == 0:
        raise ValueError("degenerate reliability ratio")
    est = lam * xt * (y - mu)
    truth = x * (y - mu)
    denom = np.var(est)
    if denom == 0:
        raise ValueError("degenerate surrogate influence variance")
    return float(np.cov(est, truth, ddof=0)[0, 1] / denom)


def case_control_balance(
    x: np.ndarray, y: np.ndarray, p: np.ndarray
) -> tuple[float, float]:
    """Neyman weights (N sd) of the logistic influence contributions by case status.

    Cases contribute X (1 - p); controls contribute -X p.  For a rare outcome
    with no covariate effect the two weights agree, so the optimal
    case-control design samples equally from both groups.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    cases = y == 1
    if not cases.any():
        raise ValueError("no cases present")
    h_case = x[cases] * (1.0 - p[cases])
    h_ctrl = -x[~cases] * p[~cases]
    w_case = cases.sum() * h_case.std(ddof=1)
    w_ctrl = (~cases).sum() * (h_ctrl.std(ddof=1) if h_ctrl.size > 1 else 0.0)
    return float(w_case), float(w_ctrl)
