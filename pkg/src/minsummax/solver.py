"""Stochastic smoothing proximal-gradient method and baselines.

One iteration samples a minibatch of terms, estimates the smoothed gradient,
takes a prox step, and then lowers (never raises) the smoothing temperature
according to a schedule.  A max-oracle descent baseline (``gdmax_run``) and a
fixed-smoothing baseline (``sdro_fixed_run``) share the trace format.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .data_io import ConvergenceRecord, RngSpec
from .errors import ContractError, DomainError
from .estimators import (
    EstimatorConfig,
    GradientEstimate,
    InnerMaxConfig,
    aggregate_gradient,
    minibatch_size,
    sample_without_replacement,
)
from .problem import MinSumMaxProblem
from .prox import prox

# --- smoothing temperature schedules ---------------------------------------


@dataclass
class ConstantMu:
    eps: float

    def __post_init__(self):
        if not (self.eps > 0):
            raise DomainError("constant temperature must be positive")


@dataclass
class PowerDecayMu:
    """mu_{k+1} = max(floor_ratio * mu0, (k+1)^(-1/3) * mu0)."""

    mu0: float
    floor_ratio: float = 1e-4

    def __post_init__(self):
        if not (self.mu0 > 0) or not (0 < self.floor_ratio <= 1):
            raise DomainError("need mu0 > 0 and floor_ratio in (0, 1]")


@dataclass
class AdaptiveMu:
    """Keep mu while the smoothed objective still falls fast enough.

    The temperature is held whenever the sampled objective decreased by more
    than ``mu^(2 sigma2)`` over the step, and otherwise shrunk by ``sigma1``
    down to a floor of ``floor_ratio * mu0``.
    """

    mu0: float
    sigma1: float = 0.99
    sigma2: float = 0.5
    floor_ratio: float = 1e-4

    def __post_init__(self):
        ok = self.mu0 > 0 and 0 < self.sigma1 <= 1 and 0 < self.sigma2 <= 1
        if not ok or not (0 < self.floor_ratio <= 1):
            raise DomainError("adaptive schedule rates must lie in (0, 1]")


@dataclass
class RestartMu:
    """Piecewise-constant mu = 1/t on stages of length ceil(36 c2 t^3 delta_bound)."""

    c2: float
    delta_bound: float
    mu0: float = 1.0

    def __post_init__(self):
        if not (self.c2 > 0) or not (self.delta_bound > 0):
            raise DomainError("restart schedule needs c2 > 0 and delta_bound > 0")


MuSchedule = Union[ConstantMu, PowerDecayMu, AdaptiveMu, RestartMu]


def initial_mu(schedule: MuSchedule) -> float:
    if isinstance(schedule, ConstantMu):
        return schedule.eps
    return schedule.mu0


def restart_stage_boundaries(schedule: RestartMu, k_max: int) -> list[int]:
    """Stage starts k_1=0, k_{t+1} = k_t + ceil(36 c2 t^3 delta_bound), up to k_max."""
    bounds = [0]
    t = 1
    while bounds[-1] <= k_max:
        bounds.append(bounds[-1] + math.ceil(36.0 * schedule.c2 * t**3 * schedule.delta_bound))
        t += 1
    return bounds


def _restart_mu_at(schedule: RestartMu, k: int) -> float:
    bound = 0
    t = 1
    while True:
        nxt = bound + math.ceil(36.0 * schedule.c2 * t**3 * schedule.delta_bound)
        if k < nxt:
            return 1.0 / t
        bound = nxt
        t += 1


@dataclass
class SolverState:
    y: np.ndarray
    mu: float
    iter: int = 0
    obj_smoothed: float = math.nan
    # last-step bookkeeping for the stationarity surrogate
    y_prev: np.ndarray | None = None
    grad_used: np.ndarray | None = None
    alpha_last: float = math.nan
    last_estimate: GradientEstimate | None = None
    history: list | None = None  # pre-step iterates, kept only on request


def schedule_next_mu(
    schedule: MuSchedule,
    state: SolverState,
    obj_prev: float | None = None,
    obj_new: float | None = None,
) -> float:
    """Temperature for the next iteration, given the one just completed.

    The adaptive schedule needs the sampled objective before and after the
    step (same candidate sets, same temperature); the others ignore them.
    Never increases the temperature.
    """
    k = state.iter
    mu = state.mu
    if isinstance(schedule, ConstantMu):
        return schedule.eps
    if isinstance(schedule, PowerDecayMu):
        return max(schedule.floor_ratio * schedule.mu0, (k + 1) ** (-1.0 / 3.0) * schedule.mu0)
    if isinstance(schedule, AdaptiveMu):
        if obj_prev is None or obj_new is None or not (
            math.isfinite(obj_prev) and math.isfinite(obj_new)
        ):
            raise DomainError("adaptive schedule needs finite objectives before and after the step")
        if obj_new - obj_prev < -(mu ** (2.0 * schedule.sigma2)):
            return mu
        return max(schedule.sigma1 * mu, schedule.floor_ratio * schedule.mu0)
    if isinstance(schedule, RestartMu):
        return _restart_mu_at(schedule, k + 1)
    raise ContractError(f"unknown schedule {type(schedule).__name__}")


# --- stepsize rules ---------------------------------------------------------


@dataclass
class TheoryStep:
    """alpha_k = mu_k / c2 with c2 = lip_grad * mu0 + 2 lip_value^2."""

    c2: float

    def __post_init__(self):
        if not (self.c2 > 0):
            raise DomainError("c2 must be positive")


@dataclass
class FixedStep:
    alpha: float

    def __post_init__(self):
        if not (self.alpha > 0):
            raise DomainError("stepsize must be positive")


@dataclass
class StagedDecayStep:
    """alpha_k = alpha0 * gamma^(k // period)."""

    alpha0: float
    gamma: float
    period: int = 20

    def __post_init__(self):
        if not (self.alpha0 > 0) or not (0 < self.gamma <= 1) or self.period < 1:
            raise DomainError("need alpha0 > 0, gamma in (0, 1], period >= 1")


StepsizeRule = Union[TheoryStep, FixedStep, StagedDecayStep]


def theory_c2(lip_value: float, lip_grad: float, mu0: float) -> float:
    """The smoothness constant the theory stepsize divides by."""
    if not (lip_value > 0) or lip_grad < 0 or not (mu0 > 0):
        raise DomainError("need lip_value > 0, lip_grad >= 0, mu0 > 0")
    return lip_grad * mu0 + 2.0 * lip_value**2


def stepsize_for(rule: StepsizeRule, mu: float, k: int) -> float:
    if isinstance(rule, TheoryStep):
        return mu / rule.c2
    if isinstance(rule, FixedStep):
        return rule.alpha
    if isinstance(rule, StagedDecayStep):
        return rule.alpha0 * rule.gamma ** (k // rule.period)
    raise ContractError(f"unknown stepsize rule {type(rule).__name__}")


def theory_iteration_budget(c2: float, eps: float, initial_gap: float) -> int:
    """Iterations the constant-temperature analysis asks for: ceil(36 c2 eps^-3 gap).

    Astronomically conservative for real instances; desk runs cap iterations
    explicitly and use this only as a reference number.
    """
    if not (c2 > 0) or not (eps > 0) or not (initial_gap > 0):
        raise DomainError("need positive c2, eps, and gap")
    return math.ceil(36.0 * c2 * eps**-3 * initial_gap)


# --- stationarity surrogate ---------------------------------------------


def stationarity_violation(
    problem: MinSumMaxProblem,
    y_prev: np.ndarray,
    y_new: np.ndarray,
    grad_used: np.ndarray,
    alpha: float,
    mu: float,
    est_cfg: EstimatorConfig | None = None,
    inner_cfg: InnerMaxConfig | None = None,
    streams: RngSpec | None = None,
    k: int = 0,
) -> float:
    """Squared norm bound on the distance to stationarity after a prox step.

    From the prox optimality condition, ``|grad(y_new) - G - (y_new - y_prev)
    / alpha|`` dominates the distance of 0 to the subdifferential at the new
    point, where G is the gradient estimate the step actually used.  The new
    full-batch gradient is exact for finite supports; otherwise a
    high-accuracy ball estimate (>= 10^4 samples per term) is required.
    """
    if not (alpha > 0):
        raise DomainError("alpha must be positive")
    if est_cfg is None or est_cfg.kind == "exact":
        gbar = problem.full_smoothed_gradient(y_new, mu)
    else:
        if est_cfg.samples < 10_000:
            raise DomainError("sampled stationarity check needs >= 10^4 samples per term")
        if inner_cfg is None or streams is None:
            raise DomainError("sampled stationarity check needs inner config and streams")
        idx = np.arange(problem.n)
        _, grads, _ = problem.family.sampled_estimates(
            y_new, mu, idx, est_cfg, inner_cfg, streams, k
        )
        gbar = grads.mean(axis=0)
        if problem.linear is not None:
            gbar = gbar + problem.linear
    resid = gbar - grad_used - (np.asarray(y_new) - np.asarray(y_prev)) / alpha
    return float(resid @ resid)


def sample_output_index(mu_trace, k1: int, rng: np.random.Generator) -> int:
    """Draw the reported iterate: index k with probability mu_k / sum(mu_t), t >= k1."""
    mu_trace = np.asarray(mu_trace, dtype=float)
    if mu_trace.ndim != 1 or mu_trace.size == 0:
        raise DomainError("mu trace must be a nonempty vector")
    if not (0 <= k1 < mu_trace.size):
        raise DomainError("k1 must index into the trace")
    tail = mu_trace[k1:]
    if np.any(tail <= 0):
        raise DomainError("temperatures must be positive")
    p = tail / tail.sum()
    return int(k1 + rng.choice(tail.size, p=p))


# --- main loops -------------------------------------------------------------


def _now_ms(timing: bool) -> float:
    return time.perf_counter() * 1e3 if timing else 0.0


def sspg_step(
    state: SolverState,
    problem: MinSumMaxProblem,
    est_cfg: EstimatorConfig,
    inner_cfg: InnerMaxConfig,
    stepsize: StepsizeRule,
    schedule: MuSchedule,
    streams: RngSpec,
) -> SolverState:
    """One prox-gradient step at the current temperature, then the mu update.

    Returns the mutated state; ``state.last_estimate`` carries the minibatch
    gradient for inspection.
    """
    y, mu, k = state.y, state.mu, state.iter
    n = problem.n
    m = minibatch_size(n, problem.lip_value, est_cfg.eps_hat)
    if m < n:
        idx = sample_without_replacement(n, m, streams.stream("minibatch", k))
    else:
        idx = np.arange(n)
    points = None
    if est_cfg.kind == "exact":
        values, grads = problem.family.exact_estimates(y, mu, idx)
    else:
        values, grads, points = problem.family.sampled_estimates(
            y, mu, idx, est_cfg, inner_cfg, streams, k
        )
    g = aggregate_gradient(grads)
    if problem.linear is not None:
        g = g + problem.linear
    alpha = stepsize_for(stepsize, mu, k)
    y_new = prox(problem.regularizer, y - alpha * g, alpha)

    obj_prev = problem.objective_from_values(y, values)
    obj_new = None
    if isinstance(schedule, AdaptiveMu):
        if est_cfg.kind == "exact":
            new_vals, _ = problem.family.exact_estimates(y_new, mu, idx)
        else:
            new_vals = problem.family.sampled_values(y_new, mu, idx, points)
        obj_new = problem.objective_from_values(y_new, new_vals)

    state.y_prev = y
    state.y = y_new
    state.grad_used = g
    state.alpha_last = alpha
    state.obj_smoothed = obj_prev
    state.last_estimate = GradientEstimate(
        grad=g, indices_used=np.asarray(idx), per_term_samples=(
            est_cfg.samples if est_cfg.kind == "ball" else 0
        ),
        value_estimate=obj_prev,
    )
    state.iter = k + 1
    state.mu = schedule_next_mu(schedule, SolverState(y=y_new, mu=mu, iter=k), obj_prev, obj_new)
    return state


def run_sspg(
    problem: MinSumMaxProblem,
    y0: np.ndarray,
    schedule: MuSchedule,
    stepsize: StepsizeRule,
    est_cfg: EstimatorConfig,
    inner_cfg: InnerMaxConfig,
    iters: int,
    streams: RngSpec,
    diag_period: int = 10,
    timing: bool = False,
    keep_iterates: bool = False,
) -> tuple[list[ConvergenceRecord], SolverState]:
    """Run the smoothing prox-gradient loop and collect the trace.

    Each record holds the pre-step sampled objective and the post-step
    iterate's diagnostics.  Diagnostics run every ``diag_period`` iterations
    (and on the last): an unsmoothed-objective estimate always, and the
    stationarity surrogate when the configured estimator is exact.  They draw
    from their own RNG purposes, so the trajectory does not depend on the
    cadence.  With ``timing=False`` wallclock cells are written as 0 so that
    identically-seeded runs produce byte-identical traces.  With
    ``keep_iterates`` the pre-step iterate of every iteration is stashed on
    ``state.history`` so a temperature-weighted output index can be drawn
    afterwards.
    """
    if iters < 0:
        raise DomainError("iters must be nonnegative")
    state = SolverState(y=np.asarray(y0, dtype=float).copy(), mu=initial_mu(schedule))
    if keep_iterates:
        state.history = []
    records: list[ConvergenceRecord] = []
    for k in range(iters):
        t0 = _now_ms(timing)
        mu_k = state.mu
        if keep_iterates:
            state.history.append(state.y.copy())
        sspg_step(state, problem, est_cfg, inner_cfg, stepsize, schedule, streams)
        primal = stat_sq = None
        if diag_period > 0 and ((k + 1) % diag_period == 0 or k == iters - 1):
            primal = _primal_estimate(problem, state.y, inner_cfg, streams, k)
            if est_cfg.kind == "exact":
                stat_sq = stationarity_violation(
                    problem, state.y_prev, state.y, state.grad_used, state.alpha_last, mu_k
                )
        records.append(
            ConvergenceRecord(
                iter=k,
                mu=mu_k,
                alpha=state.alpha_last,
                obj_smoothed=state.obj_smoothed,
                obj_primal_est=primal,
                lambda_value=_lambda_of(problem, state.y),
                stationarity_sq=stat_sq,
                wallclock_ms=_now_ms(timing) - t0,
            )
        )
    return records, state


def _lambda_of(problem: MinSumMaxProblem, y: np.ndarray) -> float | None:
    if problem.lambda_index is not None:
        return float(y[problem.lambda_index])
    if problem.fixed_lambda is not None:
        return problem.fixed_lambda
    return None


def _primal_estimate(problem, y, inner_cfg, streams, k) -> float:
    vals = problem.family.primal_values(y, np.arange(problem.n), inner_cfg, streams, k)
    return problem.outer_value(y) + float(np.mean(vals))


def gdmax_run(
    problem: MinSumMaxProblem,
    y0: np.ndarray,
    inner_cfg: InnerMaxConfig,
    stepsize: StepsizeRule,
    iters: int,
    streams: RngSpec,
    diag_period: int = 10,
    timing: bool = False,
) -> tuple[list[ConvergenceRecord], SolverState]:
    """Projected descent on the unsmoothed objective with an ascent inner oracle.

    Every iteration maximizes each term approximately, then steps against the
    mean gradient at those maximizers.  The trace's ``mu`` column is 0: there
    is no smoothing anywhere.
    """
    if iters < 0:
        raise DomainError("iters must be nonnegative")
    state = SolverState(y=np.asarray(y0, dtype=float).copy(), mu=0.0)
    records: list[ConvergenceRecord] = []
    idx = np.arange(problem.n)
    for k in range(iters):
        t0 = _now_ms(timing)
        y = state.y
        centers, _ = problem.family.inner_centers(y, idx, inner_cfg, streams, k)
        values, grads = problem.family.center_gradients(y, centers, idx)
        g = grads.mean(axis=0)
        if problem.linear is not None:
            g = g + problem.linear
        alpha = stepsize_for(stepsize, 1.0, k)
        y_new = prox(problem.regularizer, y - alpha * g, alpha)
        obj = problem.objective_from_values(y, values)
        primal = None
        if diag_period > 0 and ((k + 1) % diag_period == 0 or k == iters - 1):
            primal = _primal_estimate(problem, y_new, inner_cfg, streams, k)
        state.y_prev = y
        state.y = y_new
        state.grad_used = g
        state.alpha_last = alpha
        state.obj_smoothed = obj
        state.iter = k + 1
        records.append(
            ConvergenceRecord(
                iter=k,
                mu=0.0,
                alpha=alpha,
                obj_smoothed=obj,
                obj_primal_est=primal,
                lambda_value=_lambda_of(problem, y_new),
                stationarity_sq=None,
                wallclock_ms=_now_ms(timing) - t0,
            )
        )
    return records, state


def sdro_fixed_run(
    problem: MinSumMaxProblem,
    lambda_fixed: float,
    eta: float,
    y0: np.ndarray,
    stepsize: StepsizeRule,
    est_cfg: EstimatorConfig,
    inner_cfg: InnerMaxConfig,
    iters: int,
    streams: RngSpec,
    diag_period: int = 10,
    timing: bool = False,
    keep_iterates: bool = False,
) -> tuple[list[ConvergenceRecord], SolverState]:
    """Fixed-smoothing baseline: constant temperature ``lambda_fixed * eta``.

    ``problem`` must already have the dual multiplier frozen at
    ``lambda_fixed`` (so the iterate is the model parameters only); this is
    then exactly the smoothing prox-gradient loop with a constant schedule.
    """
    if problem.fixed_lambda is None or problem.fixed_lambda != lambda_fixed:
        raise ContractError("sdro_fixed_run needs a problem frozen at lambda_fixed")
    if not (eta > 0):
        raise DomainError("eta must be positive")
    schedule = ConstantMu(eps=lambda_fixed * eta)
    return run_sspg(
        problem, y0, schedule, stepsize, est_cfg, inner_cfg, iters, streams,
        diag_period=diag_period, timing=timing, keep_iterates=keep_iterates,
    )
