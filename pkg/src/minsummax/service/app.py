"""FastAPI application exposing runs, verification, and gradient checks.

Domain errors surface as 400s with the offending message, numerical failures
as 500s; body-shape problems are FastAPI's own 422s.  All computation happens
in the request handler, so this service is meant for desk-scale workloads,
not for queueing long sweeps.
"""

from __future__ import annotations

import math

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..errors import ContractError, DomainError, NumericalError, ParseError
from ..experiments import run_experiment
from ..gradcheck import run_gradcheck
from ..verify import run_suites
from .schemas import (
    GradcheckRequest, GradcheckResponse, RunRequest, RunResponse, SuiteOutcome,
    TraceRow, VerifyRequest, VerifyResponse,
)

_FLOAT_MAX = 1.7976931348623157e308


def _finite(x: float) -> float:
    """Clamp to representable JSON: the wire format has no infinities."""
    if math.isnan(x):
        return 0.0
    return max(-_FLOAT_MAX, min(_FLOAT_MAX, x))


def _sanitize_summary(summary: dict) -> dict:
    """JSON has no inf/nan; a diverged value crosses the wire as its string."""
    out = {}
    for k, v in summary.items():
        if isinstance(v, float) and not math.isfinite(v):
            out[k] = str(v)
        else:
            out[k] = v
    return out


def create_app() -> FastAPI:
    app = FastAPI(title="minsummax", version="0.1.0")

    @app.exception_handler(ParseError)
    @app.exception_handler(DomainError)
    @app.exception_handler(ContractError)
    async def _bad_request(request: Request, exc: Exception):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(NumericalError)
    async def _numerical(request: Request, exc: Exception):
        return JSONResponse(status_code=500, content={"detail": f"numerical failure: {exc}"})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "service": "minsummax"}

    @app.post("/run")
    def run(req: RunRequest) -> RunResponse:
        summary, records = run_experiment(req.config)
        return RunResponse(
            summary=_sanitize_summary(summary),
            trace=[TraceRow.from_record(r) for r in records],
        )

    @app.post("/verify")
    def verify(req: VerifyRequest) -> VerifyResponse:
        overrides = {}
        if req.fuzz_count is not None:
            overrides["parser_fuzz"] = {"count": req.fuzz_count}
        try:
            results = run_suites(req.suites, seed=req.seed, **overrides)
        except KeyError as exc:
            raise DomainError(str(exc.args[0])) from exc
        outcomes = [
            SuiteOutcome(
                name=r.name, passed=bool(r.passed), margin=_finite(float(r.margin)),
                detail=r.detail,
            )
            for r in results
        ]
        return VerifyResponse(
            all_passed=all(r.passed for r in results), results=outcomes
        )

    @app.post("/gradcheck")
    def gradcheck(req: GradcheckRequest) -> GradcheckResponse:
        res = run_gradcheck(req.config, points=req.points, mu=req.mu, tol=req.tol)
        err = None if math.isnan(res.max_rel_err) else res.max_rel_err
        return GradcheckResponse(
            experiment=res.experiment,
            checked=res.checked,
            max_rel_err=err,
            tol=res.tol,
            passed=res.passed,
            skipped=res.skipped,
            reason=res.reason,
        )

    return app
