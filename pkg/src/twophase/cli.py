"""Command-line interface: simulate, allocate, estimate, presets, serve.

Exit codes: 0 success, 2 bad configuration or arguments, 3 Monte Carlo abort
(estimator failure rate above the tolerance).
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys

import numpy as np

from twophase import allocation as alloc_mod
from twophase import glm
from twophase.cohort import CohortError, StratificationRule, load_cohort, stratify
from twophase.estimators import ImputationSpec, ipw_estimate, raking_estimate
from twophase.cohort import SampleIndicator
from twophase.montecarlo import MonteCarloAbort, emit_report, run_grid, run_mc
from twophase.presets import PRESETS, preset_by_id
from twophase.scenarios import ScenarioSpec


class BadConfig(ValueError):
    pass


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BadConfig(f"cannot read JSON from {path}: {exc}") from exc


def _build_specs(args) -> list[ScenarioSpec]:
    config = _load_json(args.config) if args.config else {}
    series = args.series or config.get("series")
    if series is None:
        raise BadConfig("a series is required (--series or config file)")
    params = dict(config.get("params", {}))
    for name in ("rho", "sigma", "sens", "spec", "beta1"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            params[name] = value
    if args.imputations is not None:
        params["imputations"] = args.imputations
    N = args.cohort_size or config.get("N")
    n = args.n or config.get("n")
    grid = config.get("grid", {})
    if not grid:
        return [ScenarioSpec(series=str(series), params=params, N=N, n=n, seed=args.seed)]
    keys = sorted(grid)
    specs = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        point = dict(params)
        point.update(dict(zip(keys, combo)))
        specs.append(ScenarioSpec(series=str(series), params=point, N=N, n=n, seed=args.seed))
    return specs


def cmd_simulate(args) -> int:
    specs = _build_specs(args)
    designs = args.designs.split(",") if args.designs else preset_by_id(specs[0].series)["designs"]
    estimators = args.estimators.split(",") if args.estimators else ["ipw", "raking"]
    report = run_grid(
        specs, designs, estimators, reps=args.reps, master_seed=args.seed, jobs=args.jobs
    )
    text = emit_report(report, args.format, args.out)
    if args.out is None:
        print(text)
    else:
        print(f"wrote {args.out}")
    return 0


def _rule_from_arg(arg: str) -> StratificationRule:
    try:
        return StratificationRule.from_dict(json.loads(arg))
    except json.JSONDecodeError as exc:
        raise BadConfig(f"--strata must be a JSON rule: {exc}") from exc


def cmd_allocate(args) -> int:
    schema = _load_json(args.schema)
    try:
        cohort = load_cohort(args.data, schema)
        index = stratify(cohort, _rule_from_arg(args.strata))
    except CohortError as exc:
        raise BadConfig(str(exc)) from exc

    method = args.method.lower()
    moments = None
    if method in ("neyman", "if-ipw", "if-gr"):
        h = _working_column(cohort, args)
        if method == "if-gr":
            if not args.h_hat_column:
                raise BadConfig("if-gr needs --h-hat-column")
            h_hat = np.asarray(cohort.col(args.h_hat_column), dtype=float)
            alloc = alloc_mod.if_gr_allocation(h, h_hat, index, args.n, args.min)
            r, _ = alloc_mod.residual_against_best_estimate(h, h_hat)
            moments = alloc_mod.stratum_moments(r, index)
        else:
            alloc = alloc_mod.if_ipw_allocation(h, index, args.n, args.min)
            moments = alloc_mod.stratum_moments(h, index)
    elif method in ("pss", "bss", "srs", "scc"):
        case = cohort.col(args.case_column) if args.case_column else None
        alloc = alloc_mod.fixed_design(method, index, args.n, case_column=case, seed=args.seed)
    else:
        raise BadConfig(f"unknown allocation method {args.method!r}")

    text = alloc.to_json(moments)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text)
    return 0


def _working_column(cohort, args) -> np.ndarray:
    if args.h_column:
        return np.asarray(cohort.col(args.h_column), dtype=float)
    if args.model and args.target:
        spec = glm.ModelSpec.from_dict(_load_json(args.model))
        X, _ = glm.build_design_matrix(cohort, spec)
        y = np.asarray(cohort.col(spec.response), dtype=float)
        fit = glm.fit_weighted(X, y, np.ones(len(y)), spec.family)
        inf = glm.influence_functions(fit, X, y)
        return inf.column(spec.target_index(args.target))
    raise BadConfig("provide --h-column, or --model with --target, for influence-based methods")


def cmd_estimate(args) -> int:
    schema = _load_json(args.schema)
    cohort = load_cohort(args.data, schema)
    selected = np.asarray(cohort.col(args.selected_column), dtype=float) > 0
    pi = np.asarray(cohort.col(args.pi_column), dtype=float)
    sample = SampleIndicator(selected=selected, inclusion_prob=pi)
    outcome = glm.ModelSpec.from_dict(_load_json(args.model))
    if args.method == "ipw":
        result = ipw_estimate(cohort, sample, outcome, target=args.target)
    else:
        if not args.imputation_model:
            raise BadConfig("raking needs --imputation-model")
        imp_model = glm.ModelSpec.from_dict(_load_json(args.imputation_model))
        mode = "multiple" if (args.imputations or 1) > 1 else "single"
        imp = ImputationSpec(imp_model, mode=mode, m=args.imputations or 1)
        result = raking_estimate(
            cohort,
            sample,
            outcome,
            imputation=imp,
            target=args.target,
            rng=np.random.default_rng(args.seed),
        )
    print(json.dumps(result.to_dict(), indent=2))
    return 0


def cmd_presets(args) -> int:
    print(json.dumps({"presets": PRESETS}, indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from twophase.server import make_app

    app = make_app(
        time_budget=args.time_budget,
        max_reps=args.max_reps,
        static_dir=args.static_dir,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twophase", description="Two-phase sampling design engine"
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo comparison of designs and estimators")
    sim.add_argument("--config", help="scenario JSON (series, params, grid, N, n)")
    sim.add_argument("--series", help="scenario series: 1, 2, 3, 4, or nwts")
    sim.add_argument("--rho", type=float)
    sim.add_argument("--sigma", type=float)
    sim.add_argument("--sens", type=float)
    sim.add_argument("--spec", type=float, dest="spec")
    sim.add_argument("--beta1", type=float)
    sim.add_argument("--imputations", type=int)
    sim.add_argument("--n", type=int, help="phase-2 sample size")
    sim.add_argument("--cohort-size", type=int, help="phase-1 cohort size N")
    sim.add_argument("--designs", help="comma-separated designs")
    sim.add_argument("--estimators", help="comma-separated estimators")
    sim.add_argument("--reps", type=int, default=200)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--out")
    sim.add_argument("--format", default="csv", choices=["csv", "json", "markdown"])
    sim.set_defaults(func=cmd_simulate)

    allo = sub.add_parser("allocate", help="compute a stratum allocation from a CSV")
    allo.add_argument("--data", required=True)
    allo.add_argument("--schema", required=True, help="JSON column-role map")
    allo.add_argument("--strata", required=True, help="JSON stratification rule")
    allo.add_argument(
        "--method", required=True, choices=["neyman", "if-ipw", "if-gr", "pss", "bss", "srs", "scc"]
    )
    allo.add_argument("--n", type=int)
    allo.add_argument("--min", type=int, default=2, help="minimum per stratum")
    allo.add_argument("--h-column", help="column holding the working variable")
    allo.add_argument("--h-hat-column", help="best-estimate column for if-gr")
    allo.add_argument("--model", help="model JSON to derive influence functions")
    allo.add_argument("--target", help="coefficient whose influence drives the design")
    allo.add_argument("--case-column", help="binary case indicator for scc")
    allo.add_argument("--seed", type=int, default=0)
    allo.add_argument("--out")
    allo.set_defaults(func=cmd_allocate)

    est = sub.add_parser("estimate", help="IPW or raking fit on a sampled dataset")
    est.add_argument("--data", required=True)
    est.add_argument("--schema", required=True)
    est.add_argument("--model", required=True, help="outcome model JSON")
    est.add_argument("--method", required=True, choices=["ipw", "raking"])
    est.add_argument("--selected-column", required=True)
    est.add_argument("--pi-column", required=True)
    est.add_argument("--target")
    est.add_argument("--imputation-model")
    est.add_argument("--imputations", type=int)
    est.add_argument("--seed", type=int, default=0)
    est.set_defaults(func=cmd_estimate)

    pre = sub.add_parser("presets", help="print scenario parameter grids")
    pre.set_defaults(func=cmd_presets)

    srv = sub.add_parser("serve", help="JSON API (and optional UI bundle)")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8550)
    srv.add_argument("--static-dir", help="directory with a built UI bundle")
    srv.add_argument("--time-budget", type=float, default=60.0)
    srv.add_argument("--max-reps", type=int, default=500)
    srv.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BadConfig, CohortError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MonteCarloAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        print(json.dumps(exc.diagnostics, indent=2), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
