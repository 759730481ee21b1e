"""HTTP facade over the solver: request models and the app factory."""

from .app import create_app
from .schemas import (
    GradcheckRequest, GradcheckResponse, RunRequest, RunResponse, SuiteOutcome,
    TraceRow, VerifyRequest, VerifyResponse,
)

__all__ = [
    "create_app",
    "GradcheckRequest",
    "GradcheckResponse",
    "RunRequest",
    "RunResponse",
    "SuiteOutcome",
    "TraceRow",
    "VerifyRequest",
    "VerifyResponse",
]
