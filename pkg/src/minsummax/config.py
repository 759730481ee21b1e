"""Run configuration: validated models, file parsing, and override plumbing.

Precedence is command line over config file over built-in defaults.  The file
format is flat ``key = value`` lines with dotted keys for nested fields
(``schedule.kind = adaptive``); the same dotted keys work as command-line
overrides.  Values are plain strings here and coerced by the models, so
``schedule.mu0 = 0.5`` and ``--schedule.mu0 0.5`` behave identically.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ParseError


class ScheduleSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["constant", "power", "adaptive", "restart"] = "adaptive"
    mu0: Optional[float] = Field(default=None, gt=0)  # None: experiment picks
    eps: float = Field(default=0.1, gt=0)  # constant schedule level
    sigma1: float = Field(default=0.99, gt=0, lt=1)
    sigma2: float = Field(default=0.5, gt=0)
    floor_ratio: float = Field(default=1e-4, gt=0, le=1)
    delta_bound: float = Field(default=10.0, gt=0)  # restart stage sizing


class StepsizeSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rule: Literal["theory", "fixed", "staged"] = "fixed"
    alpha: float = Field(default=0.1, gt=0)
    gamma: float = Field(default=0.5, gt=0, le=1)
    period: int = Field(default=20, ge=1)


class EstimatorSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["exact", "ball"] = "ball"
    samples: int = Field(default=32, ge=1)
    eps_hat: float = Field(default=0.0, ge=0)  # 0: use `samples` and full batches
    retain_improvers: bool = False


class InnerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step_size: float = Field(default=1e-2, gt=0)
    iterations: int = Field(default=20, ge=0)
    init_noise_scale: float = Field(default=1e-3, ge=0)
    restarts: int = Field(default=1, ge=1)


class ProblemSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(default=100, ge=1)  # synthetic sample count
    rate: float = Field(default=1.0, gt=0)  # exponential demand rate
    delta: Optional[float] = Field(default=None, gt=0)  # ambiguity radius
    lambda_min: Optional[float] = Field(default=None, ge=0)
    lambda_cap: Optional[float] = Field(default=None, gt=0)
    lip_value: Optional[float] = Field(default=None, gt=0)
    grid_points: int = Field(default=0, ge=0)  # 0: continuous sample space
    data: Optional[str] = None  # sparse regression text file
    features: int = Field(default=2, ge=1)  # synthetic regression width
    noise: float = Field(default=0.1, ge=0)
    test_fraction: float = Field(default=0.25, gt=0, lt=1)
    upsilon: float = Field(default=2.0, ge=0)  # evaluation perturbation scale
    hidden: int = Field(default=3, ge=1)
    terms: int = Field(default=20, ge=1)  # toy: number of terms
    points: int = Field(default=8, ge=1)  # toy: support points per term
    dim: int = Field(default=4, ge=1)  # toy: decision dimension


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    experiment: Literal["newsvendor", "regression", "toy"] = "newsvendor"
    method: Literal["sspg", "gdmax", "sdro_fixed"] = "sspg"
    seed: int = Field(default=0, ge=0)
    iters: int = Field(default=500, ge=1)
    out: Optional[str] = None  # trace CSV path
    timing: bool = False  # real wallclock in traces (breaks byte-identity)
    workers: int = Field(default=1, ge=1)
    vectorize: bool = True
    lambda_fixed: float = Field(default=7.0, ge=0)  # frozen-multiplier baseline
    eta: float = Field(default=0.1, gt=0)  # its smoothing ratio: mu = lambda * eta
    diag_period: int = Field(default=10, ge=1)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    stepsize: StepsizeSpec = Field(default_factory=StepsizeSpec)
    estimator: EstimatorSpec = Field(default_factory=EstimatorSpec)
    inner: InnerSpec = Field(default_factory=InnerSpec)
    problem: ProblemSpec = Field(default_factory=ProblemSpec)


def _assign_dotted(tree: dict, key: str, value, line: int | None = None) -> None:
    parts = key.split(".")
    if not all(parts):
        raise ParseError(f"bad option key {key!r}", line=line, column=1)
    node = tree
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ParseError(
                f"option {key!r} descends into non-section {p!r}", line=line, column=1
            )
        node = nxt
    node[parts[-1]] = value


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines into a nested dict; values stay strings."""
    tree: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", line=lineno, column=1)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ParseError("empty option key", line=lineno, column=1)
        if not value:
            raise ParseError(f"option {key!r} has no value", line=lineno, column=1)
        _assign_dotted(tree, key, value, line=lineno)
    return tree


def merge_trees(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge_trees(out[k], v)
        else:
            out[k] = v
    return out


def build_config(
    file_text: str | None = None, overrides: dict | None = None
) -> RunConfig:
    """Validated config from an optional file plus dotted-key overrides."""
    tree: dict = {}
    if file_text is not None:
        tree = parse_config_text(file_text)
    if overrides:
        flat: dict = {}
        for key, value in overrides.items():
            _assign_dotted(flat, key, value)
        tree = merge_trees(tree, flat)
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise ParseError(f"config field {loc}: {first['msg']}") from exc
