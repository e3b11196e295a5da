"""Phase-1 cohort data model, stratification rules, and stratified sampling.

A cohort is a rectangular dataset where phase-1 columns (outcome, cheap
covariates, auxiliaries) are fully observed and phase-2 columns may be
missing on unsampled rows.  Strata partition the rows; phase-2 samples are
drawn by simple random sampling without replacement within each stratum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

# Markers mapped to missing on ingestion, matching common statistical CSV exports.
MISSING_MARKERS = ("", "NA")

ROLES = ("outcome", "phase1", "phase2", "auxiliary")


class CohortError(ValueError):
    """Malformed cohort input: schema violations, missing phase-1 cells, bad strata."""


def _is_missing(values: np.ndarray) -> np.ndarray:
    if values.dtype.kind == "f":
        return np.isnan(values)
    return pd.isna(values)


@dataclass(frozen=True)
class Cohort:
    """Immutable phase-1 dataset with named columns and per-column roles."""

    columns: Mapping[str, np.ndarray]
    roles: Mapping[str, str]

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise CohortError(f"columns have unequal lengths: {sorted(lengths)}")
        for name, role in self.roles.items():
            if role not in ROLES:
                raise CohortError(f"unknown role {role!r} for column {name!r}")
            if name not in self.columns:
                raise CohortError(f"schema names absent column {name!r}")
        for name, values in self.columns.items():
            role = self.roles.get(name, "phase1")
            if role != "phase2" and _is_missing(np.asarray(values)).any():
                raise CohortError(f"missing value in phase-1 column {name!r}")

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def phase2_columns(self) -> tuple[str, ...]:
        return tuple(n for n, r in self.roles.items() if r == "phase2")

    def col(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise CohortError(f"no column named {name!r}")
        return self.columns[name]

    def missing_mask(self, name: str) -> np.ndarray:
        """Per-cell missingness of a column (all-False for phase-1 columns)."""
        return _is_missing(np.asarray(self.col(name)))

    def with_columns(self, **replacements: np.ndarray) -> "Cohort":
        """New cohort with some columns replaced or added (roles preserved)."""
        cols = dict(self.columns)
        roles = dict(self.roles)
        for name, values in replacements.items():
            cols[name] = np.asarray(values)
            roles.setdefault(name, "phase1")
        return Cohort(columns=cols, roles=roles)


def load_cohort(path: str | Path, schema: Mapping[str, str] | str | Path) -> Cohort:
    """Read a comma-delimited file with header into a Cohort.

    ``schema`` maps column name to role (outcome/phase1/phase2/auxiliary) and
    may be a dict or a path to a JSON file.  Empty cells and "NA" are treated
    as missing; missing is only legal in phase-2 columns.
    """
    if not isinstance(schema, Mapping):
        with open(schema) as fh:
            schema = json.load(fh)
    try:
        frame = pd.read_csv(path, keep_default_na=False, na_values=list(MISSING_MARKERS))
    except (pd.errors.ParserError, pd.errors.EmptyDataError, OSError) as exc:
        raise CohortError(f"cannot parse {path}: {exc}") from exc

    absent = [c for c in schema if c not in frame.columns]
    if absent:
        raise CohortError(f"schema columns absent from file: {absent}")

    columns: dict[str, np.ndarray] = {}
    for name, role in schema.items():
        series = frame[name]
        numeric = pd.to_numeric(series, errors="coerce")
        # Non-numeric entries in a phase-1 column are categorical levels, not
        # parse failures; a phase-2 column must be numeric-with-NA.
        if numeric.isna().equals(series.isna()):
            columns[name] = numeric.to_numpy(dtype=float)
        else:
            columns[name] = series.to_numpy()
    return Cohort(columns=columns, roles=dict(schema))


@dataclass(frozen=True)
class StratificationRule:
    """How cohort rows map to strata.

    kind "quantile-cut": cut the single input column at empirical quantiles
    (type-7); intervals are right-closed so ties at a breakpoint go to the
    lower stratum.  With ``merge_outer`` and two breakpoints, the middle
    interval becomes stratum 0 and both outer intervals merge into stratum 1.

    kind "cross-classification": strata are the Cartesian product of the
    input columns' level sets, in row-major order of the declared inputs.

    kind "explicit-column": the single input column already holds stratum
    labels; strata are its sorted unique values.
    """

    kind: str
    inputs: tuple[str, ...]
    breakpoints: tuple[float, ...] = ()
    merge_outer: bool = False

    def __post_init__(self):
        if self.kind not in ("quantile-cut", "cross-classification", "explicit-column"):
            raise CohortError(f"unknown stratification kind {self.kind!r}")
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "breakpoints", tuple(self.breakpoints))
        if self.kind == "quantile-cut":
            bp = self.breakpoints
            if not bp or any(not (0.0 < q < 1.0) for q in bp) or any(
                b <= a for a, b in zip(bp, bp[1:])
            ):
                raise CohortError("quantile fractions must be strictly increasing in (0,1)")
            if self.merge_outer and len(bp) != 2:
                raise CohortError("merge_outer requires exactly two breakpoints")

    @classmethod
    def from_dict(cls, d: Mapping) -> "StratificationRule":
        return cls(
            kind=d["kind"],
            inputs=tuple(d["inputs"]),
            breakpoints=tuple(d.get("breakpoints", ())),
            merge_outer=bool(d.get("merge_outer", False)),
        )


@dataclass(frozen=True)
class StratumIndex:
    """Partition of cohort rows into K strata (assignment is 0-based)."""

    assignment: np.ndarray
    k: int
    sizes: np.ndarray
    inputs: tuple[str, ...] | None = None
    levels: tuple[tuple, ...] | None = None

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.min(initial=0) < 0 or (a.size and a.max() >= self.k):
            raise CohortError("stratum assignment outside 0..K-1")
        sizes = np.bincount(a, minlength=self.k)
        if (sizes < 1).any():
            raise CohortError(f"empty stratum produced (sizes {sizes.tolist()})")
        if not np.array_equal(sizes, np.asarray(self.sizes)):
            raise CohortError("declared sizes disagree with assignment")

    @property
    def n_rows(self) -> int:
        return int(len(self.assignment))

    def rows(self, stratum: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == stratum)


def quantile_codes(values: np.ndarray, fractions: Sequence[float]) -> np.ndarray:
    """Codes 0..len(fractions) from cutting at type-7 empirical quantiles.

    Intervals are right-closed: a value equal to a cut point lands in the
    lower stratum.
    """
    values = np.asarray(values, dtype=float)
    cuts = np.quantile(values, list(fractions))
    if np.any(np.diff(cuts) <= 0):
        raise CohortError(f"quantile ties collapse an interval to zero width (cuts {cuts})")
    return np.searchsorted(cuts, values, side="left").astype(np.int64)


def stratify(cohort: Cohort, rule: StratificationRule) -> StratumIndex:
    """Deterministically assign every row to a stratum."""
    if rule.kind == "quantile-cut":
        codes = quantile_codes(cohort.col(rule.inputs[0]), rule.breakpoints)
        if rule.merge_outer:
            # middle interval -> stratum 0, merged outer intervals -> stratum 1
            codes = np.where(codes == 1, 0, 1).astype(np.int64)
        k = int(codes.max()) + 1
        return StratumIndex(codes, k, np.bincount(codes, minlength=k), inputs=rule.inputs)

    if rule.kind == "explicit-column":
        levels, codes = np.unique(cohort.col(rule.inputs[0]), return_inverse=True)
        k = len(levels)
        return StratumIndex(
            codes.astype(np.int64),
            k,
            np.bincount(codes, minlength=k),
            inputs=rule.inputs,
            levels=tuple((lv,) for lv in levels),
        )

    # cross-classification, row-major over declared inputs
    level_sets = []
    code_cols = []
    for name in rule.inputs:
        levels, codes = np.unique(cohort.col(name), return_inverse=True)
        level_sets.append(levels)
        code_cols.append(codes)
    k = int(np.prod([len(ls) for ls in level_sets]))
    combined = np.zeros(cohort.n_rows, dtype=np.int64)
    for levels, codes in zip(level_sets, code_cols):
        combined = combined * len(levels) + codes
    sizes = np.bincount(combined, minlength=k)
    if (sizes < 1).any():
        raise CohortError(
            f"cross-classification produced an empty stratum (sizes {sizes.tolist()})"
        )
    combos = [()]
    for levels in level_sets:
        combos = [c + (lv,) for c in combos for lv in levels]
    return StratumIndex(combined, k, sizes, inputs=rule.inputs, levels=tuple(combos))


@dataclass(frozen=True)
class SampleIndicator:
    """Phase-2 selection flags and per-row inclusion probabilities."""

    selected: np.ndarray
    inclusion_prob: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.inclusion_prob, dtype=float)
        if (pi <= 0).any() or (pi > 1).any():
            raise CohortError("inclusion probabilities must lie in (0, 1]")

    @property
    def n_selected(self) -> int:
        return int(np.count_nonzero(self.selected))

    def design_weights(self) -> np.ndarray:
        """1/pi for the selected rows, in row order."""
        return 1.0 / self.inclusion_prob[self.selected]


def draw_sample(index: StratumIndex, alloc, seed) -> SampleIndicator:
    """Stratified SRS without replacement: exactly n_k rows from stratum k.

    ``alloc`` is an Allocation or a plain sequence of per-stratum counts.
    ``seed`` may be anything accepted by numpy's default_rng, or a Generator
    (consumed in place).  The draw is deterministic given (index, alloc, seed).
    """
    n_k = np.asarray(getattr(alloc, "n_k", alloc), dtype=np.int64)
    if len(n_k) != index.k:
        raise CohortError(f"allocation has {len(n_k)} strata, index has {index.k}")
    if (n_k < 1).any():
        raise CohortError(f"allocation below 1 in some stratum: {n_k.tolist()}")
    if (n_k > index.sizes).any():
        raise CohortError(
            f"allocation exceeds stratum size: n={n_k.tolist()} N={index.sizes.tolist()}"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    selected = np.zeros(index.n_rows, dtype=bool)
    pi = np.empty(index.n_rows, dtype=float)
    for k in range(index.k):
        rows = index.rows(k)
        chosen = rng.choice(rows, size=int(n_k[k]), replace=False)
        selected[chosen] = True
        pi[rows] = n_k[k] / index.sizes[k]
    return SampleIndicator(selected=selected, inclusion_prob=pi)
