"""Robust instances: newsvendor and MLP regression, both solver backends.

The vectorized families must reproduce the generic per-term backend draw for
draw, so most tests here compare the two directly at tight tolerances.
"""

import numpy as np
import pytest

from minsummax.data_io import RngSpec
from minsummax.errors import ContractError, DomainError
from minsummax.estimators import EstimatorConfig, InnerMaxConfig
from minsummax.prox import IndicatorHalfLineProduct, Product, Zero
from minsummax.smoothing import Box
from minsummax.wdro import (
    MlpParams,
    NewsvendorFamily,
    RegressionFamily,
    closed_form_newsvendor_argmax,
    compile_to_minsummax,
    evaluate_perturbed,
    init_mlp_params,
    mlp_backward_input,
    mlp_backward_theta,
    mlp_forward,
    mlp_param_count,
    newsvendor_instance,
    regression_instance,
)

INNER = InnerMaxConfig(step_size=1e-2, iterations=30, init_noise_scale=1e-3, restarts=2)
BALL_PLAIN = EstimatorConfig(kind="ball", samples=16, retain_improvers=False)
BALL_FILTER = EstimatorConfig(kind="ball", samples=16, retain_improvers=True)


def news_psi(theta, lam, x, z, v=5.0, u=7.0):
    return v * theta - u * np.minimum(theta, z) - lam * 0.5 * (x - z) ** 2


@pytest.fixture(scope="module")
def news():
    demands = np.random.default_rng(0).exponential(1.0, 12)
    inst = newsvendor_instance(demands)
    return demands, inst


@pytest.fixture(scope="module")
def reg():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((8, 2))
    b = A @ np.array([1.5, -0.7]) + 0.1 * rng.standard_normal(8)
    return A, b, regression_instance(A, b, lip_value=20.0)


# --- closed-form newsvendor inner maximum -----------------------------------


def test_closed_form_known_case():
    # theta=0.5, lambda=7, x=1 on [0,3]: both branch optima hit -1 (left at
    # z=0, right at z=1); the tie goes to the smaller point
    z, val = closed_form_newsvendor_argmax(0.5, 7.0, 1.0, (0.0, 3.0))
    assert z == 0.0
    assert val == pytest.approx(-1.0, abs=1e-12)


def test_closed_form_accepts_box_object():
    z1, v1 = closed_form_newsvendor_argmax(0.5, 7.0, 1.0, Box(lower=[0.0], upper=[3.0]))
    z2, v2 = closed_form_newsvendor_argmax(0.5, 7.0, 1.0, (0.0, 3.0))
    assert (z1, v1) == (z2, v2)


def test_closed_form_zero_lambda():
    # with no transport penalty the left branch escapes to the lower endpoint
    z, val = closed_form_newsvendor_argmax(2.0, 0.0, 1.0, (0.0, 3.0))
    assert z == 0.0
    assert val == pytest.approx(news_psi(2.0, 0.0, 1.0, 0.0))
    with pytest.raises(DomainError):
        closed_form_newsvendor_argmax(0.5, -1.0, 1.0, (0.0, 3.0))


def test_closed_form_beats_fine_grid():
    rng = np.random.default_rng(2)
    lo, hi = 0.0, 3.0
    grid = np.linspace(lo, hi, 30_001)  # step 1e-4
    for _ in range(300):
        theta = float(rng.uniform(-0.5, 3.5))
        lam = float(rng.choice([0.0, rng.uniform(0.2, 8.0)]))
        x = float(rng.uniform(lo, hi))
        z, val = closed_form_newsvendor_argmax(theta, lam, x, (lo, hi))
        gvals = news_psi(theta, lam, x, grid)
        assert val >= gvals.max() - 1e-12
        assert lo <= z <= hi
        # the reported value is attained at the reported point
        assert val == pytest.approx(float(news_psi(theta, lam, x, z)), abs=1e-12)


# --- compilation ---------------------------------------------------------------


def test_newsvendor_problem_layout(news):
    demands, inst = news
    problem = compile_to_minsummax(inst)
    assert problem.lambda_index == 1
    assert problem.fixed_lambda is None
    assert isinstance(problem.regularizer, Product)
    # the exact ambiguity-radius part enters through the linear term: delta^2
    # on the multiplier coordinate
    assert np.array_equal(problem.linear, [0.0, 1.0])
    assert problem.constant == 0.0
    assert isinstance(problem.family, NewsvendorFamily)
    assert problem.n == 12


def test_newsvendor_frozen_layout(news):
    _, inst = news
    frozen = compile_to_minsummax(inst, lambda_frozen=7.0)
    assert frozen.lambda_index is None
    assert frozen.fixed_lambda == 7.0
    assert frozen.linear is None
    assert frozen.constant == pytest.approx(7.0)  # lambda * delta^order
    assert isinstance(frozen.regularizer, IndicatorHalfLineProduct)


def test_grid_needs_scalar_sample_space(reg):
    _, _, rinst = reg
    with pytest.raises(ContractError):
        compile_to_minsummax(rinst, grid=np.linspace(0, 1, 5))


def test_generic_backend_on_request(news):
    _, inst = news
    problem = compile_to_minsummax(inst, vectorize=False)
    assert not isinstance(problem.family, NewsvendorFamily)
    assert problem.family.n == inst.n


# --- generic vs vectorized: newsvendor ----------------------------------------


def test_news_centers_match(news):
    _, inst = news
    pg = compile_to_minsummax(inst, vectorize=False)
    pv = compile_to_minsummax(inst, vectorize=True)
    y = np.array([0.7, 7.5])
    idx = np.arange(inst.n)
    streams = RngSpec(root_seed=42)
    cg, vg = pg.family.inner_centers(y, idx, INNER, streams, 3)
    cv, vv = pv.family.inner_centers(y, idx, INNER, streams, 3)
    assert np.abs(cg - cv).max() < 1e-12
    assert np.abs(vg - vv).max() < 1e-12
    vals_g, grads_g = pg.family.center_gradients(y, cg, idx)
    vals_v, grads_v = pv.family.center_gradients(y, cv, idx)
    assert np.abs(vals_g - vals_v).max() < 1e-12
    assert np.abs(grads_g - grads_v).max() < 1e-12


@pytest.mark.parametrize("est_cfg", [BALL_PLAIN, BALL_FILTER], ids=["plain", "filtered"])
def test_news_sampled_estimates_match(news, est_cfg):
    _, inst = news
    pg = compile_to_minsummax(inst, vectorize=False)
    pv = compile_to_minsummax(inst, vectorize=True)
    y = np.array([0.7, 7.5])
    idx = np.arange(inst.n)
    streams = RngSpec(root_seed=42)
    sg = pg.family.sampled_estimates(y, 0.3, idx, est_cfg, INNER, streams, 5)
    sv = pv.family.sampled_estimates(y, 0.3, idx, est_cfg, INNER, streams, 5)
    assert np.abs(sg[0] - sv[0]).max() < 1e-10
    assert np.abs(sg[1] - sv[1]).max() < 1e-10
    # re-evaluating the stored candidate sets at a shifted iterate
    y2 = y + np.array([0.05, -0.2])
    rg = pg.family.sampled_values(y2, 0.3, idx, sg[2])
    rv = pv.family.sampled_values(y2, 0.3, idx, sv[2])
    assert np.abs(rg - rv).max() < 1e-10


def test_news_exact_grid_matches(news):
    demands, inst = news
    grid = np.linspace(demands.min(), demands.max(), 257)
    pgg = compile_to_minsummax(inst, grid=grid, vectorize=False)
    pvg = compile_to_minsummax(inst, grid=grid, vectorize=True)
    assert pvg.family.finite_supports()
    y = np.array([0.7, 7.5])
    idx = np.arange(inst.n)
    eg = pgg.family.exact_estimates(y, 0.3, idx)
    ev = pvg.family.exact_estimates(y, 0.3, idx)
    assert np.abs(eg[0] - ev[0]).max() < 1e-10
    assert np.abs(eg[1] - ev[1]).max() < 1e-10


def test_news_primal_is_closed_form(news):
    demands, inst = news
    pv = compile_to_minsummax(inst)
    y = np.array([0.7, 7.5])
    idx = np.arange(inst.n)
    box = (float(demands.min()), float(demands.max()))
    prim = pv.family.primal_values(y, idx, INNER, RngSpec(root_seed=0), 0)
    expect = np.array([
        closed_form_newsvendor_argmax(0.7, 7.5, float(x), box)[1] for x in demands
    ])
    assert np.abs(prim - expect).max() < 1e-12
    assert pv.family.exact_primal(y) == pytest.approx(float(expect.mean()), abs=1e-12)


def test_news_frozen_matches_generic(news):
    _, inst = news
    pf = compile_to_minsummax(inst, lambda_frozen=7.0, vectorize=True)
    pfg = compile_to_minsummax(inst, lambda_frozen=7.0, vectorize=False)
    yf = np.array([0.7])
    idx = np.arange(inst.n)
    streams = RngSpec(root_seed=42)
    sg = pfg.family.sampled_estimates(yf, 0.3, idx, BALL_PLAIN, INNER, streams, 5)
    sv = pf.family.sampled_estimates(yf, 0.3, idx, BALL_PLAIN, INNER, streams, 5)
    assert np.abs(sg[0] - sv[0]).max() < 1e-10
    assert np.abs(sg[1] - sv[1]).max() < 1e-10
    assert sv[1].shape == (inst.n, 1)  # gradients in theta only


def test_newsvendor_instance_validation():
    with pytest.raises(DomainError):
        newsvendor_instance(np.array([]))
    with pytest.raises(DomainError):
        newsvendor_instance(np.array([1.0]), delta=0.0)
    inst = newsvendor_instance(np.array([0.5, 2.0]), lambda_min=7.0)
    assert inst.extra == {"v": 5.0, "u": 7.0}
    assert inst.lambda_min == 7.0
    # coarse default bound: max(|v|, |u-v|) + cap * diameter
    assert inst.lip_value == pytest.approx(5.0 + 15.0 * 1.5)


# --- MLP pieces -----------------------------------------------------------------


def test_mlp_shapes_and_flat_round_trip():
    q = 4
    params = init_mlp_params(q, np.random.default_rng(3))
    flat = params.flatten()
    assert flat.shape == (mlp_param_count(q),) == (3 * q + 7,)
    back = MlpParams.from_flat(flat, q)
    assert np.array_equal(back.w1, params.w1)
    assert np.array_equal(back.b1, params.b1)
    assert np.array_equal(back.w2, params.w2)
    assert back.b2 == params.b2
    with pytest.raises(DomainError):
        MlpParams.from_flat(flat[:-1], q)


def test_mlp_init_within_fan_in_bounds():
    params = init_mlp_params(9, np.random.default_rng(4))
    assert np.abs(params.w1).max() <= 1.0 / 3.0
    assert np.abs(params.w2).max() <= 1.0 / np.sqrt(3.0)


def test_mlp_input_gradient_fd():
    q = 3
    params = init_mlp_params(q, np.random.default_rng(5))
    rng = np.random.default_rng(6)
    h = 1e-6
    for _ in range(10):
        a = rng.standard_normal(q)
        pre = params.w1 @ a + params.b1
        if np.any(np.abs(pre) < 1e-4):
            continue  # stay away from the activation kinks
        g = mlp_backward_input(params, a)
        for j in range(q):
            e = np.zeros(q)
            e[j] = h
            fd = (mlp_forward(params, a + e) - mlp_forward(params, a - e)) / (2 * h)
            assert fd == pytest.approx(g[j], rel=1e-5, abs=1e-7)


def test_mlp_theta_gradient_fd():
    q = 2
    theta = init_mlp_params(q, np.random.default_rng(7)).flatten()
    params = MlpParams.from_flat(theta, q)
    a = np.array([0.8, -0.3])
    if np.any(np.abs(params.w1 @ a + params.b1) < 1e-4):
        a = a + 0.01
    g = mlp_backward_theta(params, a)
    h = 1e-6
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = h
        fd = (mlp_forward(MlpParams.from_flat(theta + e, q), a)
              - mlp_forward(MlpParams.from_flat(theta - e, q), a)) / (2 * h)
        assert fd == pytest.approx(g[j], rel=1e-5, abs=1e-7)


def test_mlp_forward_batch_agrees_with_rows():
    params = init_mlp_params(3, np.random.default_rng(8))
    A = np.random.default_rng(9).standard_normal((5, 3))
    batch = mlp_forward(params, A)
    rows = np.array([mlp_forward(params, a) for a in A])
    assert np.allclose(batch, rows)


# --- generic vs vectorized: regression -------------------------------------------


def test_regression_layout(reg):
    A, b, inst = reg
    assert inst.theta_dim == mlp_param_count(2)
    assert isinstance(inst.theta_domain, Zero)
    assert bool(inst.frozen_mask[-1])  # the label coordinate is pinned
    assert not inst.frozen_mask[:-1].any()
    problem = compile_to_minsummax(inst)
    assert isinstance(problem.family, RegressionFamily)
    assert problem.lambda_index == inst.theta_dim


def test_reg_centers_match(reg):
    _, _, inst = reg
    pg = compile_to_minsummax(inst, vectorize=False)
    pv = compile_to_minsummax(inst, vectorize=True)
    theta0 = init_mlp_params(2, np.random.default_rng(7)).flatten()
    y = np.concatenate([theta0, [3.0]])
    idx = np.arange(inst.n)
    streams = RngSpec(root_seed=42)
    cg, vg = pg.family.inner_centers(y, idx, INNER, streams, 2)
    cv, vv = pv.family.inner_centers(y, idx, INNER, streams, 2)
    assert np.abs(cg - cv).max() < 1e-10
    assert np.abs(vg - vv).max() < 1e-10
    vals_g, grads_g = pg.family.center_gradients(y, cg, idx)
    vals_v, grads_v = pv.family.center_gradients(y, cv, idx)
    assert np.abs(vals_g - vals_v).max() < 1e-9
    assert np.abs(grads_g - grads_v).max() < 1e-9
    # candidate labels never move off the anchors
    assert np.abs(cg[:, -1] - inst.data[:, -1]).max() == 0.0


@pytest.mark.parametrize("est_cfg", [BALL_PLAIN, BALL_FILTER], ids=["plain", "filtered"])
def test_reg_sampled_estimates_match(reg, est_cfg):
    _, _, inst = reg
    pg = compile_to_minsummax(inst, vectorize=False)
    pv = compile_to_minsummax(inst, vectorize=True)
    theta0 = init_mlp_params(2, np.random.default_rng(7)).flatten()
    y = np.concatenate([theta0, [3.0]])
    idx = np.arange(inst.n)
    streams = RngSpec(root_seed=42)
    sg = pg.family.sampled_estimates(y, 0.5, idx, est_cfg, INNER, streams, 4)
    sv = pv.family.sampled_estimates(y, 0.5, idx, est_cfg, INNER, streams, 4)
    assert np.abs(sg[0] - sv[0]).max() < 1e-9
    assert np.abs(sg[1] - sv[1]).max() < 1e-9
    y2 = y.copy()
    y2[-1] = 2.0
    y2[0] += 0.01
    rg = pg.family.sampled_values(y2, 0.5, idx, sg[2])
    rv = pv.family.sampled_values(y2, 0.5, idx, sv[2])
    assert np.abs(rg - rv).max() < 1e-9


def test_reg_primal_and_frozen_match(reg):
    _, _, inst = reg
    pg = compile_to_minsummax(inst, vectorize=False)
    pv = compile_to_minsummax(inst, vectorize=True)
    theta0 = init_mlp_params(2, np.random.default_rng(7)).flatten()
    y = np.concatenate([theta0, [3.0]])
    idx = np.arange(inst.n)
    streams = RngSpec(root_seed=42)
    prim_g = pg.family.primal_values(y, idx, INNER, streams, 6)
    prim_v = pv.family.primal_values(y, idx, INNER, streams, 6)
    assert np.abs(prim_g - prim_v).max() < 1e-10
    fg = compile_to_minsummax(inst, lambda_frozen=4.0, vectorize=False)
    fv = compile_to_minsummax(inst, lambda_frozen=4.0, vectorize=True)
    sg = fg.family.sampled_estimates(theta0, 0.5, idx, BALL_PLAIN, INNER, streams, 4)
    sv = fv.family.sampled_estimates(theta0, 0.5, idx, BALL_PLAIN, INNER, streams, 4)
    assert np.abs(sg[0] - sv[0]).max() < 1e-9
    assert np.abs(sg[1] - sv[1]).max() < 1e-9


def test_regression_instance_validation():
    with pytest.raises(DomainError):
        regression_instance(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(DomainError):
        regression_instance(np.zeros((3, 2)), np.zeros(4))


# --- perturbed evaluation --------------------------------------------------------


def test_evaluate_perturbed_clean_is_plain_rmse(reg):
    A, b, _ = reg
    predict = lambda X: np.atleast_2d(X) @ np.array([1.5, -0.7])
    r = evaluate_perturbed(predict, A, b, 0.0, np.random.default_rng(0))
    manual = float(np.sqrt(np.mean((predict(A) - b) ** 2)))
    assert r == pytest.approx(manual, abs=1e-12)


def test_evaluate_perturbed_deterministic_and_scaling(reg):
    A, b, _ = reg
    predict = lambda X: np.atleast_2d(X) @ np.array([1.5, -0.7])
    r1 = evaluate_perturbed(predict, A, b, 2.0, np.random.default_rng(1))
    r2 = evaluate_perturbed(predict, A, b, 2.0, np.random.default_rng(1))
    assert r1 == r2
    r_clean = evaluate_perturbed(predict, A, b, 0.0, np.random.default_rng(1))
    assert r1 > r_clean  # noise at scale 2 visibly hurts a clean linear fit
