"""Stratum allocation: Neyman (real and exact integer), influence-function
designs, and fixed designs (SRS, BSS, PSS, SCC).

The exact integer method starts every stratum at the minimum and repeatedly
grants the next unit to the stratum with the largest marginal decrease of
the stratified variance sum (N_k - n_k) N_k sd_k^2 / n_k, which attains the
integer optimum because the marginal decreases N_k^2 sd_k^2 / (n_k (n_k+1))
are strictly decreasing in n_k.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from twophase.cohort import StratumIndex


class AllocationError(ValueError):
    """Infeasible bounds or inputs for an allocation request."""


@dataclass(frozen=True)
class StratumMoments:
    """Stratum sizes and within-stratum standard deviations of a working variable."""

    sizes: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sizes", np.asarray(self.sizes, dtype=np.int64))
        object.__setattr__(self, "sds", np.asarray(self.sds, dtype=float))
        if self.sizes.shape != self.sds.shape:
            raise AllocationError("sizes and sds must align")
        if (self.sds < 0).any() or not np.isfinite(self.sds).all():
            raise AllocationError("standard deviations must be finite and nonnegative")
        if (self.sizes < 1).any():
            raise AllocationError("stratum sizes must be at least 1")

    @property
    def k(self) -> int:
        return len(self.sizes)


@dataclass(frozen=True)
class Allocation:
    """Integer per-stratum phase-2 sample sizes."""

    n_k: np.ndarray
    total: int
    policy: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "n_k", np.asarray(self.n_k, dtype=np.int64))
        if int(self.n_k.sum()) != self.total:
            raise AllocationError("allocation does not sum to the requested total")

    def to_dict(self, moments: StratumMoments | None = None) -> dict:
        strata = []
        for i, n in enumerate(self.n_k.tolist()):
            entry = {"k": i + 1, "n": n}
            if moments is not None:
                entry["N"] = int(moments.sizes[i])
                entry["sd"] = float(moments.sds[i])
            strata.append(entry)
        return {"strata": strata, "total": self.total, "policy": self.policy}

    def to_json(self, moments: StratumMoments | None = None) -> str:
        return json.dumps(self.to_dict(moments), indent=2)


def stratum_moments(values: np.ndarray, index: StratumIndex) -> StratumMoments:
    """Within-stratum standard deviations (ddof=1; zero for singleton strata)."""
    values = np.asarray(values, dtype=float)
    sds = np.zeros(index.k)
    for k in range(index.k):
        rows = index.rows(k)
        if len(rows) > 1:
            sds[k] = values[rows].std(ddof=1)
    return StratumMoments(sizes=index.sizes, sds=sds)


def neyman_real(m: StratumMoments, n: int) -> np.ndarray:
    """Real-valued Neyman allocation n_k = n N_k sd_k / sum_j N_j sd_j."""
    if n > int(m.sizes.sum()):
        raise AllocationError("total exceeds cohort size")
    weights = m.sizes * m.sds
    denom = weights.sum()
    if denom == 0:
        raise AllocationError("all stratum standard deviations are zero")
    return n * weights / denom


def _largest_remainder(quotas: np.ndarray, total: int, base: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Distribute ``total`` units over strata proportionally to quotas.

    Starts from ``base``, floors the quota, then hands remaining units to the
    largest fractional parts (ties to the lowest index), respecting caps.
    """
    room = caps - base
    want = np.minimum(np.floor(quotas).astype(np.int64), room)
    n_k = base + want
    remaining = total - int(n_k.sum())
    if remaining < 0:
        raise AllocationError("caps below the requested total")
    frac = quotas - np.floor(quotas)
    order = sorted(range(len(quotas)), key=lambda i: (-frac[i], i))
    while remaining > 0:
        progressed = False
        for i in order:
            if remaining == 0:
                break
            if n_k[i] < caps[i]:
                n_k[i] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            raise AllocationError("caps below the requested total")
    return n_k


def _proportional(sizes: np.ndarray, n: int, min_per_stratum: int, caps: np.ndarray) -> np.ndarray:
    quotas = n * sizes / sizes.sum()
    n_k = _largest_remainder(quotas, n, np.zeros(len(sizes), dtype=np.int64), caps)
    # repair minima by taking units from the strata furthest above quota
    while (n_k < min_per_stratum).any():
        i = int(np.argmax(n_k < min_per_stratum))
        surplus = np.where(n_k > min_per_stratum, n_k - quotas, -np.inf)
        j = int(np.argmax(surplus))
        n_k[i] += 1
        n_k[j] -= 1
    return n_k


def _check_bounds(k: int, n: int, min_per_stratum: int, caps: np.ndarray) -> None:
    if min_per_stratum * k > n:
        raise AllocationError(
            f"minimum of {min_per_stratum} per stratum cannot fit a total of {n}"
        )
    if (caps < min_per_stratum).any():
        raise AllocationError("a stratum is smaller than the per-stratum minimum")
    if n > int(caps.sum()):
        raise AllocationError("total exceeds the sum of stratum caps")


def integer_allocation(
    m: StratumMoments,
    n: int,
    min_per_stratum: int = 2,
    caps: np.ndarray | None = None,
) -> Allocation:
    """Exact integer Neyman allocation by greedy marginal-variance grants.

    Ties break to the lowest stratum index.  If every stratum standard
    deviation is zero the objective is flat and the allocation falls back to
    proportional.
    """
    caps = m.sizes if caps is None else np.minimum(np.asarray(caps, dtype=np.int64), m.sizes)
    _check_bounds(m.k, n, min_per_stratum, caps)

    if (m.sds == 0).all():
        n_k = _proportional(m.sizes, n, min_per_stratum, caps)
        return Allocation(
            n_k,
            n,
            {"method": "neyman-integer", "fallback": "proportional", "min": min_per_stratum},
        )

    n_k = np.full(m.k, min_per_stratum, dtype=np.int64)
    weights = (m.sizes * m.sds).astype(float)

    def priority(k: int) -> float:
        return weights[k] / np.sqrt(float(n_k[k]) * (n_k[k] + 1.0))

    heap = [(-priority(k), k) for k in range(m.k) if n_k[k] < caps[k]]
    heapq.heapify(heap)
    for _ in range(n - int(n_k.sum())):
        while True:
            neg, k = heapq.heappop(heap)
            if -neg == priority(k) and n_k[k] < caps[k]:
                break
        n_k[k] += 1
        if n_k[k] < caps[k]:
            heapq.heappush(heap, (-priority(k), k))
    return Allocation(n_k, n, {"method": "neyman-integer", "min": min_per_stratum})


def if_ipw_allocation(
    h: np.ndarray,
    index: StratumIndex,
    n: int,
    min_per_stratum: int = 2,
) -> Allocation:
    """Neyman allocation on the within-stratum spread of an influence column."""
    h = np.asarray(h, dtype=float)
    if not np.isfinite(h).all():
        raise AllocationError("influence column contains non-finite values")
    m = stratum_moments(h, index)
    alloc = integer_allocation(m, n, min_per_stratum)
    policy = dict(alloc.policy, design="if-ipw")
    return Allocation(alloc.n_k, alloc.total, policy)


def residual_against_best_estimate(
    h: np.ndarray, h_hat: np.ndarray, force_gamma: float | None = None
) -> tuple[np.ndarray, float]:
    """Residuals r = h - gamma * h_hat with gamma the least-squares slope.

    The regression includes an intercept; a constant h_hat makes the slope
    undefined and is treated as gamma = 0.
    """
    h = np.asarray(h, dtype=float)
    h_hat = np.asarray(h_hat, dtype=float)
    if h.shape != h_hat.shape:
        raise AllocationError("influence columns must have equal length")
    if not (np.isfinite(h).all() and np.isfinite(h_hat).all()):
        raise AllocationError("influence columns contain non-finite values")
    if force_gamma is not None:
        gamma = float(force_gamma)
    else:
        centered = h_hat - h_hat.mean()
        denom = float(centered @ centered)
        gamma = float(centered @ (h - h.mean()) / denom) if denom > 0 else 0.0
    return h - gamma * h_hat, gamma


def if_gr_allocation(
    h: np.ndarray,
    h_hat: np.ndarray,
    index: StratumIndex,
    n: int,
    min_per_stratum: int = 2,
    force_gamma: float | None = None,
) -> Allocation:
    """Neyman allocation on residuals from regressing h on its best estimate."""
    r, gamma = residual_against_best_estimate(h, h_hat, force_gamma)
    m = stratum_moments(r, index)
    alloc = integer_allocation(m, n, min_per_stratum)
    policy = dict(alloc.policy, design="if-gr", gamma=gamma)
    return Allocation(alloc.n_k, alloc.total, policy)


def fixed_design(
    kind: str,
    index: StratumIndex,
    n: int | None = None,
    case_column: np.ndarray | None = None,
    seed=None,
) -> Allocation:
    """Non-adaptive designs: srs, bss (balanced), pss (proportional), scc.

    srs tabulates one unstratified SRS draw per stratum (requires a seed);
    scc takes every case and an equal number of controls in the paired
    control stratum, capped at the stratum size.
    """
    kind = kind.lower()
    sizes = index.sizes
    if kind == "srs":
        if n is None:
            raise AllocationError("srs needs a total sample size")
        if n > index.n_rows:
            raise AllocationError("total exceeds cohort size")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        rows = rng.choice(index.n_rows, size=n, replace=False)
        n_k = np.bincount(index.assignment[rows], minlength=index.k).astype(np.int64)
        return Allocation(n_k, n, {"design": "srs"})

    if kind == "bss":
        if n is None:
            raise AllocationError("bss needs a total sample size")
        base = np.full(index.k, n // index.k, dtype=np.int64)
        base[: n % index.k] += 1
        overflow = int(np.maximum(base - sizes, 0).sum())
        n_k = np.minimum(base, sizes)
        for i in range(index.k):
            if overflow == 0:
                break
            room = int(sizes[i] - n_k[i])
            take = min(room, overflow)
            n_k[i] += take
            overflow -= take
        if overflow > 0:
            raise AllocationError("total exceeds cohort size")
        return Allocation(n_k, n, {"design": "bss"})

    if kind == "pss":
        if n is None:
            raise AllocationError("pss needs a total sample size")
        quotas = n * sizes / sizes.sum()
        n_k = _largest_remainder(quotas, n, np.zeros(index.k, dtype=np.int64), sizes)
        return Allocation(n_k, n, {"design": "pss"})

    if kind == "scc":
        if case_column is None:
            raise AllocationError("scc needs the per-row case indicator")
        if index.levels is None or index.inputs is None:
            raise AllocationError("scc needs cross-classified strata")
        cases = np.asarray(case_column, dtype=float)
        case_frac = np.array([cases[index.rows(k)].mean() for k in range(index.k)])
        if not np.all((case_frac == 0) | (case_frac == 1)):
            raise AllocationError("strata do not refine the case indicator")
        case_of = case_frac == 1
        # pair case and control strata agreeing on every non-case level
        case_pos = [
            i
            for i in range(len(index.inputs))
            if len({lv[i] for lv in index.levels}) == 2
            and all(
                (lv[i] == max(l2[i] for l2 in index.levels)) == case_of[j]
                for j, lv in enumerate(index.levels)
            )
        ]
        if not case_pos:
            raise AllocationError("no stratification input matches the case indicator")
        pos = case_pos[0]
        case_total = int(sizes[case_of].sum())
        if n is not None and case_total > n:
            raise AllocationError(f"scc case count {case_total} exceeds the budget {n}")
        n_k = np.zeros(index.k, dtype=np.int64)
        for j, lv in enumerate(index.levels):
            if not case_of[j]:
                continue
            n_k[j] = sizes[j]
            rest = tuple(v for i, v in enumerate(lv) if i != pos)
            for j2, lv2 in enumerate(index.levels):
                if j2 != j and tuple(v for i, v in enumerate(lv2) if i != pos) == rest:
                    n_k[j2] = min(sizes[j], sizes[j2])
        return Allocation(n_k, int(n_k.sum()), {"design": "scc"})

    raise AllocationError(f"unknown fixed design {kind!r}")


def allocation_to_probabilities(alloc: Allocation, index: StratumIndex) -> np.ndarray:
    """Per-row inclusion probability n_k / N_k."""
    n_k = alloc.n_k
    if len(n_k) != index.k:
        raise AllocationError("allocation and index disagree on stratum count")
    if (n_k < 0).any() or (n_k > index.sizes).any():
        raise AllocationError("allocation outside [0, N_k]")
    return (n_k / index.sizes)[index.assignment]
