"""HTTP service exposing the library.

Every endpoint takes and returns JSON; the CLI drives the same app
in-process.  Library exceptions surface as structured error bodies
{"error": {"type", "message"}} so clients can map them to exit codes.
"""

from __future__ import annotations

import io
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__, filtered as fdesigns, ident
from .errors import (AssumptionViolated, DesignViolated, InvalidInput,
                     InvalidModel, ParseError, RankDeficient, TargetivError,
                     WeakIdentification)
from .estimation import (Dataset, bootstrap, check_relevance, empirical_moments,
                         load_dataset, moment_routine)
from .model import ModelSpec, MomentTable
from .simulator import ErrorSpec, OutcomeSpec, draw_population, oracle_moments
from .targeting import derive_targeting, enumerate_classes, excluded_groups
from .validation import config_hash, run_validation

_STATUS = {ParseError: 422, InvalidModel: 422, InvalidInput: 422,
           AssumptionViolated: 409, DesignViolated: 409,
           WeakIdentification: 409, RankDeficient: 409}


class EnumerateRequest(BaseModel):
    model: dict
    regime: str | None = None   # one_to_one | strict | strict_one_to_one


class SimulateRequest(BaseModel):
    model: dict
    errors: dict
    outcomes: dict
    n: int = Field(gt=0)
    seed: int = 0
    z_probs: dict[str, float] | None = None
    filtered: bool = False


class IdentifyRequest(BaseModel):
    moments: dict
    design: str                 # 2xT | 3x3
    homog: list[str] = []
    tsls: bool = False
    targeted: str = "1"
    z_on: str = "1"
    z_off: str = "0"


class IdentifyFilteredRequest(BaseModel):
    moments: dict
    design: str                 # m1 | m3 | 3x2 | factorial | star
    homogeneous: bool = False


class EstimateRequest(BaseModel):
    data_csv: str
    design: str                 # unfiltered or filtered design tag
    schema_map: dict | None = None
    homog: list[str] = []
    homogeneous: bool = False
    tsls: bool = False
    boot: int = 999
    seed: int = 0
    cluster: bool = False
    by: bool = False
    workers: int = 1
    targeted: str = "1"
    z_on: str = "1"
    z_off: str = "0"


class ValidateRequest(BaseModel):
    model: dict
    errors: dict
    outcomes: dict
    n: int = Field(default=100_000, gt=0)
    seed: int = 0
    z_probs: dict[str, float] | None = None


_FILTER_DESIGNS = {"m1": "binary_collapse", "m3": "ternary_collapse",
                   "3x2": "3x2", "factorial": "factorial", "star": "encouragement"}


def _identify_unfiltered(m: MomentTable, req) -> dict:
    if req.design == "2xT":
        rep = ident.identify_2xT_means(m, targeted=req.targeted,
                                       z_on=req.z_on, z_off=req.z_off)
        if req.homog:
            rep = rep.merged(ident.ate_2xT_homog(
                m, targeted=req.targeted, z_on=req.z_on, z_off=req.z_off))
        out = rep.to_dict()
    elif req.design == "3x3":
        rep = ident.identify_3x3_probs(m).merged(ident.identify_3x3_means(m))
        if req.homog:
            which = "both" if set(req.homog) >= {"eq1", "eq2"} else req.homog[0]
            rep = rep.merged(ident.ate_3x3_homog(m, which))
        out = rep.to_dict()
        if req.tsls:
            out["tsls"] = ident.tsls_3x3_moments(m).to_dict()
    else:
        raise InvalidInput(f"unknown design {req.design!r}; expected 2xT or 3x3")
    return out


def _routine_for(req: EstimateRequest):
    if req.design in ("2xT", "3x3"):
        def run(ds: Dataset) -> dict:
            return _identify_unfiltered(empirical_moments(ds), req).get("point", {})
        def full(m: MomentTable) -> dict:
            return _identify_unfiltered(m, req)
    elif req.design in _FILTER_DESIGNS:
        tag = _FILTER_DESIGNS[req.design]
        run = moment_routine(fdesigns.identify_filtered, design=tag,
                             homogeneous=req.homogeneous)
        def full(m: MomentTable) -> dict:
            return fdesigns.identify_filtered(m, tag, req.homogeneous).to_dict()
    else:
        raise InvalidInput(f"unknown design {req.design!r}")
    return run, full


def create_app() -> FastAPI:
    app = FastAPI(title="targetiv", version=__version__)

    @app.exception_handler(TargetivError)
    async def _domain_error(_: Request, exc: TargetivError) -> JSONResponse:
        return JSONResponse(status_code=_STATUS.get(type(exc), 400),
                            content={"error": {"type": type(exc).__name__,
                                               "message": str(exc)}})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/enumerate")
    def enumerate_endpoint(req: EnumerateRequest) -> dict:
        model = ModelSpec.from_dict(req.model)
        ts = derive_targeting(model)
        out: dict[str, Any] = {"targeting": ts.to_dict(),
                               "verdicts": ts.verdict.to_dict()}
        classes = enumerate_classes(ts)
        out["classes"] = [c.to_dict() for c in classes]
        out["counts"] = {"classes": len(classes)}
        if req.regime:
            comps = excluded_groups(ts, req.regime)
            out["excluded"] = {
                "regime": req.regime,
                "composite": [c.name for c in comps],
                "elemental": sorted({v.name for c in comps
                                     for v in c.elemental_vectors()})}
            out["counts"]["excluded_elemental"] = len(out["excluded"]["elemental"])
        return out

    @app.post("/simulate")
    def simulate_endpoint(req: SimulateRequest) -> dict:
        model = ModelSpec.from_dict(req.model)
        errors = ErrorSpec.from_dict(req.errors)
        outcomes = OutcomeSpec.from_dict(req.outcomes)
        pop = draw_population(model, errors, outcomes, req.n,
                              z_probs=req.z_probs, seed=req.seed)
        out = {"n": req.n, "seed": req.seed, "tie_count": pop.tie_count,
               "config_hash": config_hash(req.model, req.errors, req.outcomes,
                                          req.n, req.seed),
               "moments": oracle_moments(pop).to_dict()}
        if req.filtered:
            out["filtered_moments"] = oracle_moments(pop, filtered=True).to_dict()
        return out

    @app.post("/identify")
    def identify_endpoint(req: IdentifyRequest) -> dict:
        return _identify_unfiltered(MomentTable.from_dict(req.moments), req)

    @app.post("/identify-filtered")
    def identify_filtered_endpoint(req: IdentifyFilteredRequest) -> dict:
        if req.design not in _FILTER_DESIGNS:
            raise InvalidInput(f"unknown filtered design {req.design!r}; "
                               f"expected one of {sorted(_FILTER_DESIGNS)}")
        m = MomentTable.from_dict(req.moments)
        return fdesigns.identify_filtered(m, _FILTER_DESIGNS[req.design],
                                          req.homogeneous).to_dict()

    @app.post("/estimate")
    def estimate_endpoint(req: EstimateRequest) -> dict:
        ds = load_dataset(io.StringIO(req.data_csv), req.schema_map)
        run, full = _routine_for(req)
        cells = ds.split_cells() if req.by else {"": ds}
        results = {}
        for label, part in cells.items():
            boot = bootstrap(part, run, B=req.boot, seed=req.seed,
                             cluster=req.cluster, workers=req.workers)
            results[label] = {
                "report": full(empirical_moments(part.take(part.canonical_order()))),
                "relevance": check_relevance(part),
                "bootstrap": boot.to_dict(),
                "rows": part.counts_by_z(),
            }
        return {"seed": req.seed, "boot": req.boot, "design": req.design,
                "clustered": req.cluster,
                "config_hash": config_hash(req.design, req.boot, req.seed,
                                           req.cluster, req.by),
                "cells": results}

    @app.post("/validate")
    def validate_endpoint(req: ValidateRequest) -> dict:
        model = ModelSpec.from_dict(req.model)
        return run_validation(model, ErrorSpec.from_dict(req.errors),
                              OutcomeSpec.from_dict(req.outcomes),
                              n=req.n, seed=req.seed, z_probs=req.z_probs)

    return app


app = create_app()
