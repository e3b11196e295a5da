"""JSON-over-HTTP facade: presets, allocations, and bounded simulation runs.

Single-analyst tool: one worker queue shared across requests, reps and cohort
size capped per request, and a time budget that turns long jobs into 503s.
Invalid bodies return 400; infeasible designs return 422.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from twophase import allocation as alloc_mod
from twophase.calibration import CalibrationError
from twophase.cohort import CohortError
from twophase.glm import GlmError
from twophase.montecarlo import MonteCarloAbort, run_mc
from twophase.presets import PRESETS, preset_by_id
from twophase.scenarios import ScenarioSpec, generate

MAX_COHORT = 100_000

_INFEASIBLE = (alloc_mod.AllocationError, CohortError, GlmError, CalibrationError, ValueError)


class ScenarioBody(BaseModel):
    series: str
    params: dict = Field(default_factory=dict)
    N: int | None = None
    n: int | None = None
    seed: int = 0


class MomentsBody(BaseModel):
    sizes: list[int]
    sds: list[float]


class AllocateBody(BaseModel):
    methods: list[str]
    scenario: ScenarioBody | None = None
    moments: MomentsBody | None = None
    n: int | None = None
    min_per_stratum: int = 2


class SimulateBody(BaseModel):
    spec: ScenarioBody
    designs: list[str]
    estimators: list[str] = Field(default_factory=lambda: ["ipw", "raking"])
    reps: int = 100
    seed: int = 0


def _allocate_from_scenario(body: AllocateBody) -> dict:
    spec = ScenarioSpec.from_dict(body.scenario.model_dump())
    if spec.N > MAX_COHORT:
        raise ValueError(f"cohort size capped at {MAX_COHORT} per request")
    data = generate(spec)
    n = body.n or spec.n
    index = data.index
    out: dict = {
        "strata": {
            "sizes": index.sizes.tolist(),
            "levels": [list(map(float, lv)) for lv in index.levels] if index.levels else None,
            "inputs": list(index.inputs) if index.inputs else None,
        },
        "allocations": {},
    }
    for method in body.methods:
        m = method.lower()
        sds = None
        if m == "if-ipw":
            alloc = alloc_mod.if_ipw_allocation(data.h_true, index, n, body.min_per_stratum)
            sds = alloc_mod.stratum_moments(data.h_true, index).sds.tolist()
        elif m == "if-gr":
            alloc = alloc_mod.if_gr_allocation(
                data.h_true, data.h_best, index, n, body.min_per_stratum
            )
            r, _ = alloc_mod.residual_against_best_estimate(data.h_true, data.h_best)
            sds = alloc_mod.stratum_moments(r, index).sds.tolist()
        elif m == "neyman":
            alloc = alloc_mod.if_ipw_allocation(data.h_true, index, n, body.min_per_stratum)
            sds = alloc_mod.stratum_moments(data.h_true, index).sds.tolist()
        elif m in ("pss", "bss", "srs", "scc"):
            case = data.cohort.col(data.case_column) if data.case_column else None
            alloc = alloc_mod.fixed_design(m, index, n, case_column=case, seed=spec.seed)
        else:
            raise ValueError(f"unknown method {method!r}")
        out["allocations"][method] = {
            "n_k": alloc.n_k.tolist(),
            "total": alloc.total,
            "sds": sds,
            "policy": alloc.policy,
        }
    return out


def _allocate_from_moments(body: AllocateBody) -> dict:
    m = alloc_mod.StratumMoments(np.asarray(body.moments.sizes), np.asarray(body.moments.sds))
    if body.n is None:
        raise ValueError("moments-based allocation needs a total n")
    out = {"strata": {"sizes": m.sizes.tolist()}, "allocations": {}}
    for method in body.methods:
        if method.lower() != "neyman":
            raise ValueError("moments-based allocation supports only the neyman method")
        alloc = alloc_mod.integer_allocation(m, body.n, body.min_per_stratum)
        out["allocations"][method] = {
            "n_k": alloc.n_k.tolist(),
            "total": alloc.total,
            "sds": m.sds.tolist(),
            "policy": alloc.policy,
        }
    return out


def make_app(
    time_budget: float = 60.0,
    max_reps: int = 500,
    static_dir: str | None = None,
    workers: int = 1,
) -> FastAPI:
    app = FastAPI(title="twophase", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    pool = ThreadPoolExecutor(max_workers=workers)

    @app.exception_handler(RequestValidationError)
    async def invalid_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/presets")
    def presets():
        return {"presets": PRESETS}

    @app.post("/allocate")
    def allocate(body: AllocateBody):
        if (body.scenario is None) == (body.moments is None):
            return JSONResponse(
                status_code=400,
                content={"detail": "provide exactly one of scenario or moments"},
            )
        try:
            if body.scenario is not None:
                return _allocate_from_scenario(body)
            return _allocate_from_moments(body)
        except _INFEASIBLE as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.post("/simulate")
    def simulate(body: SimulateBody):
        if body.reps > max_reps:
            return JSONResponse(
                status_code=400, content={"detail": f"reps capped at {max_reps}"}
            )
        try:
            spec = ScenarioSpec.from_dict(body.spec.model_dump())
            if spec.N > MAX_COHORT:
                raise ValueError(f"cohort size capped at {MAX_COHORT} per request")
        except ValueError as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        future = pool.submit(
            run_mc, spec, body.designs, body.estimators, body.reps, body.seed
        )
        try:
            report = future.result(timeout=time_budget)
        except FutureTimeout:
            return JSONResponse(
                status_code=503,
                content={"detail": f"simulation exceeded the {time_budget:g}s time budget"},
            )
        except MonteCarloAbort as exc:
            return JSONResponse(
                status_code=422, content={"detail": str(exc), "failures": exc.diagnostics}
            )
        except _INFEASIBLE as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        return {"rows": report.rows}

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
