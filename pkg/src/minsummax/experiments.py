"""End-to-end experiment drivers shared by the command line and the service.

Each driver builds a problem instance from a validated config, seeds every
random stream from the single root seed, runs the requested method, and
returns a flat summary dict plus the per-iteration trace records.  Summaries
hold only scalars (str, int, float), in a stable key order, so callers can
print them as one ``key=value`` line or ship them over the wire unchanged.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data_io import (
    ConvergenceRecord, Dataset, RngSpec, gen_exponential_demand,
    parse_sparse_regression_text, standard_scale_fit_transform, train_test_split,
)
from .errors import ContractError, DomainError
from .estimators import EstimatorConfig, InnerMaxConfig, sampling_plan
from .problem import MinSumMaxProblem, TermFamily
from .prox import IndicatorBox
from .smoothing import FiniteSet, MaxTermSpec
from .solver import (
    AdaptiveMu, ConstantMu, FixedStep, MuSchedule, PowerDecayMu, RestartMu,
    StagedDecayStep, StepsizeRule, TheoryStep, gdmax_run, run_sspg,
    sample_output_index, sdro_fixed_run, theory_c2,
)
from .wdro import (
    MlpParams, NewsvendorFamily, closed_form_newsvendor_argmax,
    compile_to_minsummax, evaluate_perturbed, init_mlp_params, mlp_forward,
    newsvendor_instance, regression_instance,
)


def make_schedule(cfg: RunConfig, mu0_default: float, c2: float) -> MuSchedule:
    spec = cfg.schedule
    mu0 = spec.mu0 if spec.mu0 is not None else mu0_default
    if spec.kind == "constant":
        return ConstantMu(eps=spec.eps)
    if spec.kind == "power":
        return PowerDecayMu(mu0=mu0, floor_ratio=spec.floor_ratio)
    if spec.kind == "adaptive":
        return AdaptiveMu(
            mu0=mu0, sigma1=spec.sigma1, sigma2=spec.sigma2, floor_ratio=spec.floor_ratio
        )
    return RestartMu(c2=c2, delta_bound=spec.delta_bound, mu0=mu0)


def make_stepsize(cfg: RunConfig, c2: float) -> StepsizeRule:
    spec = cfg.stepsize
    if spec.rule == "theory":
        return TheoryStep(c2=c2)
    if spec.rule == "fixed":
        return FixedStep(alpha=spec.alpha)
    return StagedDecayStep(alpha0=spec.alpha, gamma=spec.gamma, period=spec.period)


def make_estimator(cfg: RunConfig, lip_value: float) -> EstimatorConfig:
    spec = cfg.estimator
    samples = spec.samples
    if spec.kind == "ball" and spec.eps_hat > 0:
        _, samples = sampling_plan(1, lip_value, spec.eps_hat)
    return EstimatorConfig(
        kind=spec.kind,
        samples=samples,
        eps_hat=spec.eps_hat,
        retain_improvers=spec.retain_improvers,
    )


def make_inner(cfg: RunConfig) -> InnerMaxConfig:
    spec = cfg.inner
    return InnerMaxConfig(
        step_size=spec.step_size,
        iterations=spec.iterations,
        init_noise_scale=spec.init_noise_scale,
        restarts=spec.restarts,
    )


def _run_method(
    cfg: RunConfig,
    problem: MinSumMaxProblem,
    frozen_problem: MinSumMaxProblem | None,
    y0: np.ndarray,
    y0_frozen: np.ndarray,
    mu0: float,
    streams: RngSpec,
) -> tuple[list[ConvergenceRecord], object, MinSumMaxProblem]:
    c2 = theory_c2(problem.lip_value, problem.lip_grad, mu0)
    stepsize = make_stepsize(cfg, c2)
    est_cfg = make_estimator(cfg, problem.lip_value)
    inner_cfg = make_inner(cfg)
    if cfg.method == "sspg":
        schedule = make_schedule(cfg, mu0, c2)
        records, state = run_sspg(
            problem, y0, schedule, stepsize, est_cfg, inner_cfg, cfg.iters,
            streams, diag_period=cfg.diag_period, timing=cfg.timing,
            keep_iterates=True,
        )
        return records, state, problem
    if cfg.method == "gdmax":
        records, state = gdmax_run(
            problem, y0, inner_cfg, stepsize, cfg.iters, streams,
            diag_period=cfg.diag_period, timing=cfg.timing,
        )
        return records, state, problem
    if frozen_problem is None:
        raise ContractError(f"{cfg.experiment} has no fixed-multiplier variant")
    records, state = sdro_fixed_run(
        frozen_problem, cfg.lambda_fixed, cfg.eta, y0_frozen, stepsize, est_cfg,
        inner_cfg, cfg.iters, streams, diag_period=cfg.diag_period,
        timing=cfg.timing, keep_iterates=True,
    )
    return records, state, frozen_problem


def _output_iterate(records, state, streams: RngSpec):
    """Temperature-weighted random iterate, the estimate the analysis reports."""
    if state.history is None or not records:
        return None, None
    mu_trace = np.array([r.mu for r in records])
    tau = sample_output_index(mu_trace, 0, streams.stream("output"))
    return tau, state.history[tau]


def _last(records: list[ConvergenceRecord], attr: str):
    for r in reversed(records):
        v = getattr(r, attr)
        if v is not None:
            return v
    return None


# --- inventory ----------------------------------------------------------------


def run_newsvendor(cfg: RunConfig) -> tuple[dict, list[ConvergenceRecord]]:
    t_start = time.perf_counter()
    p = cfg.problem
    streams = RngSpec(root_seed=cfg.seed)
    demands = gen_exponential_demand(p.n, p.rate, cfg.seed)
    inst = newsvendor_instance(
        demands,
        delta=p.delta if p.delta is not None else 1.0,
        lambda_min=p.lambda_min if p.lambda_min is not None else 7.0,
        lambda_cap=p.lambda_cap,
        lip_value=p.lip_value,
    )
    g = streams.stream("init")
    theta0 = g.uniform(0.0, 1.0)
    lam0 = g.uniform(inst.lambda_min, inst.lambda_min + 8.0)
    eta0 = g.uniform(0.1, 1.0)
    mu0 = cfg.schedule.mu0 if cfg.schedule.mu0 is not None else lam0 * eta0

    grid = None
    if p.grid_points > 0:
        grid = np.linspace(demands.min(), demands.max(), p.grid_points)
    problem = compile_to_minsummax(
        inst, grid=grid, vectorize=cfg.vectorize, workers=cfg.workers
    )
    frozen = compile_to_minsummax(
        inst, lambda_frozen=cfg.lambda_fixed, grid=grid, vectorize=cfg.vectorize,
        workers=cfg.workers,
    )
    y0 = np.array([theta0, lam0])
    records, state, used = _run_method(
        cfg, problem, frozen, y0, np.array([theta0]), mu0, streams
    )

    def primal_at(y):
        fam = used.family
        if isinstance(fam, NewsvendorFamily):
            return used.outer_value(y) + fam.exact_primal(y)
        box = (float(demands.min()), float(demands.max()))
        lam = y[used.lambda_index] if used.lambda_index is not None else used.fixed_lambda
        vals = [
            closed_form_newsvendor_argmax(float(y[0]), float(lam), float(x), box)[1]
            for x in demands
        ]
        return used.outer_value(y) + float(np.mean(vals))

    y_fin = state.y
    lam_fin = y_fin[1] if used.lambda_index is not None else cfg.lambda_fixed
    summary = {
        "experiment": "newsvendor",
        "method": cfg.method,
        "seed": cfg.seed,
        "iters": len(records),
        "n": p.n,
        "theta": float(y_fin[0]),
        "lambda": float(lam_fin),
        "obj_primal": primal_at(y_fin),
        "obj_smoothed": float(state.obj_smoothed),
    }
    tau, y_out = _output_iterate(records, state, streams)
    if y_out is not None:
        summary["output_iter"] = int(tau)
        summary["obj_primal_out"] = primal_at(y_out)
    summary["elapsed_s"] = round(time.perf_counter() - t_start, 3)
    return summary, records


# --- regression -----------------------------------------------------------------


def _load_regression_data(cfg: RunConfig, streams: RngSpec) -> Dataset:
    p = cfg.problem
    if p.data is not None:
        return parse_sparse_regression_text(Path(p.data).read_text(encoding="utf-8"))
    g = streams.stream("synth")
    w = g.standard_normal(p.features)
    A = g.standard_normal((p.n, p.features))
    b = A @ w + p.noise * g.standard_normal(p.n)
    return Dataset(features=A, targets=b)


def run_regression(cfg: RunConfig) -> tuple[dict, list[ConvergenceRecord]]:
    t_start = time.perf_counter()
    p = cfg.problem
    streams = RngSpec(root_seed=cfg.seed)
    full = _load_regression_data(cfg, streams)
    if full.n < 2:
        raise DomainError("regression needs at least two examples to split")
    train, test = train_test_split(full, p.test_fraction, cfg.seed)
    train, test, _ = standard_scale_fit_transform(train, test, mode="train")
    inst = regression_instance(
        train.features,
        train.targets,
        delta=p.delta if p.delta is not None else 10.0,
        lambda_min=p.lambda_min if p.lambda_min is not None else 0.0,
        hidden=p.hidden,
        lip_value=p.lip_value,
    )
    q = train.features.shape[1]
    g = streams.stream("init")
    params0 = init_mlp_params(q, g, hidden=p.hidden)
    lam0 = g.uniform(1.0, 10.0)
    mu0 = cfg.schedule.mu0 if cfg.schedule.mu0 is not None else 1.0
    if "kind" not in cfg.schedule.model_fields_set:
        cfg = cfg.model_copy(deep=True)
        cfg.schedule.kind = "power"

    problem = compile_to_minsummax(inst, vectorize=cfg.vectorize, workers=cfg.workers)
    frozen = compile_to_minsummax(
        inst, lambda_frozen=cfg.lambda_fixed, vectorize=cfg.vectorize,
        workers=cfg.workers,
    )
    theta0 = params0.flatten()
    y0 = np.concatenate([theta0, [lam0]])
    records, state, used = _run_method(cfg, problem, frozen, y0, theta0, mu0, streams)

    theta_fin = state.y if used.lambda_index is None else state.y[:-1]
    params_fin = MlpParams.from_flat(theta_fin, q, p.hidden)

    def predict(X):
        return np.asarray(mlp_forward(params_fin, np.atleast_2d(X)))

    rmse_clean = evaluate_perturbed(
        predict, test.features, test.targets, 0.0, streams.stream("perturb", 0)
    )
    rmse_pert = evaluate_perturbed(
        predict, test.features, test.targets, p.upsilon, streams.stream("perturb", 1)
    )
    lam_fin = state.y[-1] if used.lambda_index is not None else cfg.lambda_fixed
    summary = {
        "experiment": "regression",
        "method": cfg.method,
        "seed": cfg.seed,
        "iters": len(records),
        "n_train": train.n,
        "n_test": test.n,
        "lambda": float(lam_fin),
        "obj_smoothed": float(state.obj_smoothed),
        "obj_primal": _last(records, "obj_primal_est"),
        "rmse_clean": rmse_clean,
        "rmse_perturbed": rmse_pert,
    }
    tau, _ = _output_iterate(records, state, streams)
    if tau is not None:
        summary["output_iter"] = int(tau)
    summary["elapsed_s"] = round(time.perf_counter() - t_start, 3)
    return summary, records


# --- toy finite instance ----------------------------------------------------------


def _linear_term_spec(pts: np.ndarray, lip: float) -> MaxTermSpec:
    def psi(y, Z):
        vals = np.atleast_2d(np.asarray(Z, dtype=float)) @ np.asarray(y, dtype=float)
        return vals if np.ndim(Z) == 2 else float(vals[0])

    def grad_y(y, Z):
        out = np.atleast_2d(np.asarray(Z, dtype=float))
        return out if np.ndim(Z) == 2 else out[0]

    return MaxTermSpec(psi=psi, grad_y_psi=grad_y, support=FiniteSet(points=pts), lip_value=lip)


def build_toy_problem(cfg: RunConfig, streams: RngSpec) -> MinSumMaxProblem:
    """Random finite max-of-linear terms in a box, fully exact end to end.

    Each term maximizes ``z . y`` over its own finite set of coefficient
    points, so smoothing, gradients, and stationarity all have closed forms
    to check against.
    """
    p = cfg.problem
    g = streams.stream("synth")
    point_sets = [g.standard_normal((p.points, p.dim)) for _ in range(p.terms)]
    lip = max(float(np.linalg.norm(pts, axis=1).max()) for pts in point_sets)
    terms = [_linear_term_spec(pts, lip) for pts in point_sets]
    family = TermFamily(terms, None, workers=cfg.workers)
    reg = IndicatorBox(lower=-np.ones(p.dim), upper=np.ones(p.dim))
    return MinSumMaxProblem(
        family=family, regularizer=reg, lip_value=lip, lip_grad=0.0, name="toy"
    )


def run_toy(cfg: RunConfig) -> tuple[dict, list[ConvergenceRecord]]:
    t_start = time.perf_counter()
    streams = RngSpec(root_seed=cfg.seed)
    if "kind" not in cfg.estimator.model_fields_set:
        cfg = cfg.model_copy(deep=True)
        cfg.estimator.kind = "exact"
    problem = build_toy_problem(cfg, streams)
    y0 = streams.stream("init").uniform(-1.0, 1.0, cfg.problem.dim)
    if cfg.method != "sspg":
        raise ContractError("the toy experiment only runs the smoothing method")
    mu0 = cfg.schedule.mu0 if cfg.schedule.mu0 is not None else 1.0
    records, state, used = _run_method(cfg, problem, None, y0, y0, mu0, streams)
    summary = {
        "experiment": "toy",
        "method": cfg.method,
        "seed": cfg.seed,
        "iters": len(records),
        "obj_smoothed": float(state.obj_smoothed),
        "obj_primal": _last(records, "obj_primal_est"),
        "stationarity_sq": _last(records, "stationarity_sq"),
        "elapsed_s": round(time.perf_counter() - t_start, 3),
    }
    return summary, records


def run_experiment(cfg: RunConfig) -> tuple[dict, list[ConvergenceRecord]]:
    if cfg.experiment == "newsvendor":
        return run_newsvendor(cfg)
    if cfg.experiment == "regression":
        return run_regression(cfg)
    return run_toy(cfg)
