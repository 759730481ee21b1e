"""Wire models for the HTTP endpoints.

The run endpoint takes the same nested configuration the command line
builds, so a config file, a set of CLI flags, and a request body are three
spellings of one object.  Trace rows mirror the CSV columns; the ``lambda``
column keeps its CSV name on the wire through a serialization alias.
"""

from __future__ import annotations

from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from ..config import RunConfig
from ..data_io import ConvergenceRecord

SummaryValue = Union[str, int, float, None]


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig = Field(default_factory=RunConfig)


class TraceRow(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    iter: int
    mu: float
    alpha: float
    obj_smoothed: float
    obj_primal_est: Optional[float] = None
    lambda_value: Optional[float] = Field(default=None, alias="lambda")
    stationarity_sq: Optional[float] = None
    wallclock_ms: float = 0.0

    @classmethod
    def from_record(cls, r: ConvergenceRecord) -> "TraceRow":
        return cls(
            iter=r.iter,
            mu=r.mu,
            alpha=r.alpha,
            obj_smoothed=r.obj_smoothed,
            obj_primal_est=r.obj_primal_est,
            lambda_value=r.lambda_value,
            stationarity_sq=r.stationarity_sq,
            wallclock_ms=r.wallclock_ms,
        )

    def to_record(self) -> ConvergenceRecord:
        return ConvergenceRecord(
            iter=self.iter,
            mu=self.mu,
            alpha=self.alpha,
            obj_smoothed=self.obj_smoothed,
            obj_primal_est=self.obj_primal_est,
            lambda_value=self.lambda_value,
            stationarity_sq=self.stationarity_sq,
            wallclock_ms=self.wallclock_ms,
        )


class RunResponse(BaseModel):
    summary: dict[str, SummaryValue]
    trace: list[TraceRow]


class VerifyRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    suites: Optional[list[str]] = None  # None: every suite
    seed: int = Field(default=0, ge=0)
    fuzz_count: Optional[int] = Field(default=None, ge=1)


class SuiteOutcome(BaseModel):
    name: str
    passed: bool
    margin: float
    detail: str


class VerifyResponse(BaseModel):
    all_passed: bool
    results: list[SuiteOutcome]


class GradcheckRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig = Field(default_factory=RunConfig)
    points: int = Field(default=20, ge=1)
    mu: float = Field(default=0.1, gt=0)
    tol: float = Field(default=1e-5, gt=0)


class GradcheckResponse(BaseModel):
    experiment: str
    checked: int
    max_rel_err: Optional[float]
    tol: float
    passed: bool
    skipped: bool
    reason: Optional[str] = None
