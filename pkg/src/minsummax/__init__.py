"""Smoothing-based solvers for min-sum-max problems.

The objective is a regularized finite sum whose terms are pointwise maxima
over compact sets.  Each max is replaced by a temperature-indexed soft
maximum that is driven toward zero over the run, and the smoothed problem is
solved by stochastic proximal gradient steps.  Wasserstein distributionally
robust formulations (a newsvendor model and a small ReLU regressor) are
included as ready-made problem builders, along with an HTTP service and a
command line front end.
"""

from .config import RunConfig, build_config, parse_config_text
from .data_io import (
    ConvergenceRecord,
    Dataset,
    RngSpec,
    gen_exponential_demand,
    parse_sparse_regression_text,
    read_trace_csv,
    serialize_sparse_regression_text,
    train_test_split,
    write_trace_csv,
)
from .errors import ContractError, DomainError, NumericalError, ParseError
from .estimators import (
    EstimatorConfig,
    InnerMaxConfig,
    ball_sample_size,
    ball_sampler_estimator,
    exact_finite_estimator,
    inner_maximize,
    minibatch_size,
    sampling_plan,
)
from .problem import MinSumMaxProblem, TermFamily
from .prox import (
    IndicatorBox,
    IndicatorHalfLineProduct,
    L1,
    Product,
    RegularizerSpec,
    Zero,
    prox,
    reg_value,
)
from .smoothing import (
    Ball,
    Box,
    FiniteSet,
    MaxTermSpec,
    grad_lipschitz_bound,
    linear_box_expectation,
    lse_shifted,
    mu_gap_bound_finite,
    smooth_grad_mu,
    smooth_value_finite,
)
from .solver import (
    AdaptiveMu,
    ConstantMu,
    FixedStep,
    MuSchedule,
    PowerDecayMu,
    RestartMu,
    SolverState,
    StagedDecayStep,
    StepsizeRule,
    TheoryStep,
    gdmax_run,
    run_sspg,
    sample_output_index,
    sdro_fixed_run,
    theory_c2,
    theory_iteration_budget,
)
from .wdro import (
    WdroInstance,
    closed_form_newsvendor_argmax,
    compile_to_minsummax,
    evaluate_perturbed,
    init_mlp_params,
    newsvendor_instance,
    regression_instance,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveMu",
    "Ball",
    "Box",
    "ConstantMu",
    "ContractError",
    "ConvergenceRecord",
    "Dataset",
    "DomainError",
    "EstimatorConfig",
    "FiniteSet",
    "FixedStep",
    "IndicatorBox",
    "IndicatorHalfLineProduct",
    "InnerMaxConfig",
    "L1",
    "MaxTermSpec",
    "MinSumMaxProblem",
    "MuSchedule",
    "NumericalError",
    "ParseError",
    "PowerDecayMu",
    "Product",
    "RegularizerSpec",
    "RestartMu",
    "RngSpec",
    "RunConfig",
    "SolverState",
    "StagedDecayStep",
    "StepsizeRule",
    "TermFamily",
    "TheoryStep",
    "WdroInstance",
    "Zero",
    "ball_sample_size",
    "ball_sampler_estimator",
    "build_config",
    "closed_form_newsvendor_argmax",
    "compile_to_minsummax",
    "evaluate_perturbed",
    "exact_finite_estimator",
    "gdmax_run",
    "gen_exponential_demand",
    "grad_lipschitz_bound",
    "init_mlp_params",
    "inner_maximize",
    "linear_box_expectation",
    "lse_shifted",
    "minibatch_size",
    "mu_gap_bound_finite",
    "newsvendor_instance",
    "parse_config_text",
    "parse_sparse_regression_text",
    "prox",
    "read_trace_csv",
    "reg_value",
    "regression_instance",
    "run_sspg",
    "sample_output_index",
    "sampling_plan",
    "sdro_fixed_run",
    "serialize_sparse_regression_text",
    "smooth_grad_mu",
    "smooth_value_finite",
    "theory_c2",
    "theory_iteration_budget",
    "train_test_split",
    "write_trace_csv",
]
