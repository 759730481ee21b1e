"""Self-check suites for the smoothing, estimator, and parsing layers.

Each suite samples randomized cases for one mathematical guarantee and
reports the worst margin it saw: the smallest slack to the bound being
checked, so a negative margin is a violation.  Suites are deterministic
given the seed.  They exist to be run (command line ``verify``, the service,
and the test suite all call them), not to prove anything once: a wrong
declared constant or a broken estimator shows up as a negative margin here
before it corrupts a long run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .data_io import (
    Dataset, RngSpec, parse_sparse_regression_text, serialize_sparse_regression_text,
)
from .errors import ParseError
from .estimators import EstimatorConfig, InnerMaxConfig, ball_sampler_estimator
from .problem import MinSumMaxProblem, TermFamily
from .prox import (
    IndicatorBox, IndicatorHalfLineProduct, L1, Product, Zero, prox, reg_value,
)
from .smoothing import (
    Box, FiniteSet, MaxTermSpec, linear_box_expectation, mu_gap_bound_finite,
    smooth_grad_mu, smooth_value_finite,
)
from .solver import ConstantMu, TheoryStep, run_sspg, theory_c2
from .wdro import _news_psi, closed_form_newsvendor_argmax


@dataclass
class SuiteResult:
    name: str
    passed: bool
    margin: float  # slack to the checked bound; negative means violated
    detail: str


def _linear_term(pts: np.ndarray, lip: float | None = None) -> MaxTermSpec:
    if lip is None:
        lip = float(np.linalg.norm(pts, axis=1).max())

    def psi(y, Z):
        vals = np.atleast_2d(np.asarray(Z, dtype=float)) @ np.asarray(y, dtype=float)
        return vals if np.ndim(Z) == 2 else float(vals[0])

    def grad_y(y, Z):
        out = np.atleast_2d(np.asarray(Z, dtype=float))
        return out if np.ndim(Z) == 2 else out[0]

    return MaxTermSpec(psi=psi, grad_y_psi=grad_y, support=FiniteSet(points=pts), lip_value=max(lip, 1e-12))


def _random_term(g: np.random.Generator):
    k = int(g.integers(1, 40))
    d = int(g.integers(1, 4))
    scale = 10.0 ** g.uniform(-2, 2)
    pts = scale * g.standard_normal((k, d))
    y = g.standard_normal(d)
    return _linear_term(pts), y, k


def suite_sandwich(seed: int, cases: int = 500) -> SuiteResult:
    """max - mu log k <= smoothed <= max, for uniform finite supports."""
    g = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(cases):
        term, y, k = _random_term(g)
        mu = 10.0 ** g.uniform(-6, 0)
        ev = smooth_value_finite(term, y, mu)
        true_max = float(np.max(term.psi(y, term.support.points)))
        worst = min(worst, true_max - ev.value, ev.value - (true_max - mu * np.log(k)))
    passed = worst >= -1e-9
    return SuiteResult("sandwich", passed, worst, f"{cases} cases, min slack {worst:.3e}")


def suite_mu_monotone(seed: int, cases: int = 300) -> SuiteResult:
    """Smoothed value nonincreasing in the temperature; its mu-derivative <= 0."""
    g = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(cases):
        term, y, _ = _random_term(g)
        mu2, mu1 = np.sort(10.0 ** g.uniform(-4, 0, 2))
        if mu1 == mu2:
            continue
        v1 = smooth_value_finite(term, y, mu1).value
        v2 = smooth_value_finite(term, y, mu2).value
        worst = min(worst, v2 - v1)  # smaller mu must give the larger value
        worst = min(worst, -smooth_grad_mu(term, y, mu1))
    passed = worst >= -1e-9
    return SuiteResult("mu_monotone", passed, worst, f"{cases} cases, min slack {worst:.3e}")


def suite_grad_fd(seed: int, cases: int = 200, tol: float = 1e-5) -> SuiteResult:
    """Analytic y- and mu-gradients against central finite differences."""
    g = np.random.default_rng(seed)
    worst_rel = 0.0
    for _ in range(cases):
        term, y, _ = _random_term(g)
        mu = 10.0 ** g.uniform(-1.3, 0)
        ev = smooth_value_finite(term, y, mu)
        h = 1e-6
        for j in range(y.shape[0]):
            e = np.zeros_like(y)
            e[j] = h
            fd = (
                smooth_value_finite(term, y + e, mu).value
                - smooth_value_finite(term, y - e, mu).value
            ) / (2 * h)
            rel = abs(fd - ev.grad_y[j]) / max(1.0, abs(ev.grad_y[j]))
            worst_rel = max(worst_rel, rel)
        hm = 1e-6 * mu
        fd_mu = (
            smooth_value_finite(term, y, mu + hm).value
            - smooth_value_finite(term, y, mu - hm).value
        ) / (2 * hm)
        rel = abs(fd_mu - smooth_grad_mu(term, y, mu)) / max(1.0, abs(fd_mu))
        worst_rel = max(worst_rel, rel)
    margin = tol - worst_rel
    return SuiteResult(
        "grad_fd", margin >= 0, margin, f"{cases} cases, worst rel err {worst_rel:.3e}"
    )


def suite_mu_gap(seed: int, cases: int = 300) -> SuiteResult:
    """|value(mu1) - value(mu2)| <= 2 log(k) (mu1 - mu2) on finite supports."""
    g = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(cases):
        term, y, k = _random_term(g)
        mu2, mu1 = np.sort(g.uniform(1e-4, 1.0, 2))
        if mu1 == mu2:
            continue
        v1 = smooth_value_finite(term, y, mu1).value
        v2 = smooth_value_finite(term, y, mu2).value
        bound = mu_gap_bound_finite(k, mu1, mu2)
        worst = min(worst, bound - abs(v1 - v2))
    passed = worst >= -1e-9
    return SuiteResult("mu_gap", passed, worst, f"{cases} cases, min slack {worst:.3e}")


def suite_grad_norm(seed: int, cases: int = 300, plant_lip: float | None = None) -> SuiteResult:
    """Smoothed gradient norm never exceeds the declared value bound.

    ``plant_lip`` swaps in a deliberately wrong declared constant; the suite
    is then expected to fail, which is how a bad declaration would surface.
    """
    g = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(cases):
        k = int(g.integers(1, 30))
        d = int(g.integers(1, 4))
        pts = g.standard_normal((k, d))
        term = _linear_term(pts, lip=plant_lip)
        y = g.standard_normal(d)
        mu = 10.0 ** g.uniform(-4, 0)
        ev = smooth_value_finite(term, y, mu)
        worst = min(worst, term.lip_value - float(np.linalg.norm(ev.grad_y)))
    passed = worst >= -1e-9
    return SuiteResult("grad_norm", passed, worst, f"{cases} cases, min slack {worst:.3e}")


def suite_estimator_variance(
    seed: int, replicas: int = 10_000, sample_counts: tuple = (8, 32, 128), slack: float = 1.5
) -> SuiteResult:
    """Empirical sampler variance against the 12 lip^2 / M guarantee."""
    streams = RngSpec(root_seed=seed)
    pts_box = Box(lower=np.array([-1.0]), upper=np.array([1.0]))

    def psi(y, Z):
        vals = np.atleast_2d(np.asarray(Z, dtype=float))[:, 0] * float(np.asarray(y).reshape(-1)[0])
        return vals if np.ndim(Z) == 2 else float(vals[0])

    def grad_y(y, Z):
        out = np.atleast_2d(np.asarray(Z, dtype=float))
        return out if np.ndim(Z) == 2 else out[0]

    def grad_z(y, z):
        return np.array([float(np.asarray(y).reshape(-1)[0])])

    term = MaxTermSpec(
        psi=psi, grad_y_psi=grad_y, support=pts_box, lip_value=1.0,
        anchor=np.array([0.3]),
    )
    y = np.array([0.9])
    mu = 0.25
    inner = InnerMaxConfig(step_size=1e-2, iterations=0, init_noise_scale=1e-3, restarts=1)
    worst = np.inf
    details = []
    for M in sample_counts:
        cfg = EstimatorConfig(kind="ball", samples=M, retain_improvers=False)
        grads = np.empty(replicas)
        for r in range(replicas):
            est = ball_sampler_estimator(term, grad_z, y, mu, cfg, inner, streams.stream("term", r, M))
            grads[r] = est.grad[0]
        var = float(np.mean((grads - grads.mean()) ** 2))
        bound = slack * 12.0 * term.lip_value**2 / M
        worst = min(worst, bound - var)
        details.append(f"M={M}: var {var:.3e} vs {bound:.3e}")
    return SuiteResult("estimator_variance", worst >= 0, worst, "; ".join(details))


def suite_prox(seed: int, cases: int = 200, probes: int = 20) -> SuiteResult:
    """Prox outputs must beat random feasible perturbations on the prox objective."""
    g = np.random.default_rng(seed)

    def objective(reg, x, v, alpha):
        pen = reg_value(reg, x)
        if not np.isfinite(pen):
            return np.inf
        return 0.5 * float(np.sum((x - v) ** 2)) + alpha * pen

    worst = np.inf
    for _ in range(cases):
        d = int(g.integers(1, 6))
        choice = g.integers(0, 5)
        if choice == 0:
            reg = Zero()
        elif choice == 1:
            lo = g.uniform(-2, 0, d)
            reg = IndicatorBox(lower=lo, upper=lo + g.uniform(0.1, 3, d))
        elif choice == 2:
            reg = IndicatorHalfLineProduct(lower=g.uniform(-1, 1, d))
        elif choice == 3:
            reg = L1(weight=float(g.uniform(0, 2)))
        else:
            reg = Product(blocks=((Zero(), 1), (L1(weight=0.5), max(d - 1, 1))))
            d = 1 + max(d - 1, 1)
        v = 3 * g.standard_normal(d)
        alpha = float(10.0 ** g.uniform(-2, 1))
        x = prox(reg, v, alpha)
        fx = objective(reg, x, v, alpha)
        if not np.isfinite(fx):
            return SuiteResult("prox", False, -np.inf, "prox returned an infeasible point")
        for _ in range(probes):
            probe = x + 10.0 ** g.uniform(-3, 0) * g.standard_normal(d)
            worst = min(worst, objective(reg, probe, v, alpha) - fx)
    passed = worst >= -1e-9
    return SuiteResult("prox", passed, worst, f"{cases} cases x {probes} probes, min advantage {worst:.3e}")


def _box_expectation_quadrature(a, c, box: Box, mu: float) -> float:
    total = np.exp(c / mu)
    for ai, lo, hi in zip(a, box.lower, box.upper):
        if hi == lo:
            total *= np.exp(ai * lo / mu)
            continue
        val, _ = integrate.quad(lambda z, s=ai: np.exp(s * z / mu), lo, hi, epsabs=0, epsrel=1e-12)
        total *= val / (hi - lo)
    return float(total)


def suite_box_expectation(
    seed: int,
    cases: int = 100,
    mc_cases: int = 20,
    mc_draws: int = 1_000_000,
    tol_quad: float = 1e-9,
    tol_mc: float = 1e-2,
) -> SuiteResult:
    """Closed-form box expectations against quadrature and brute Monte Carlo.

    Draw ranges keep the per-coordinate exponent half-width at or below 1.5,
    where one million Monte Carlo draws put the relative error well inside
    the 1e-2 gate.
    """
    g = np.random.default_rng(seed)
    worst_quad = 0.0
    worst_mc = 0.0
    for i in range(cases):
        d = int(g.integers(1, 4))
        mu = g.uniform(0.4, 2.0)
        lo = g.uniform(-2, 1, d)
        width = g.uniform(0.05, 2.0, d)
        if i % 7 == 0:
            width[int(g.integers(0, d))] = 0.0  # degenerate coordinate
        hi = lo + width
        a = np.where(
            width > 0,
            g.uniform(-1.5, 1.5, d) * mu / np.maximum(width, 1e-9),
            g.standard_normal(d),
        )
        c = g.uniform(-1, 1)
        box = Box(lower=lo, upper=hi)
        got = linear_box_expectation(a, c, box, mu)
        ref = _box_expectation_quadrature(a, c, box, mu)
        worst_quad = max(worst_quad, abs(got.value - ref) / max(abs(ref), 1e-300))
        if i < mc_cases:
            z = g.uniform(lo, np.maximum(hi, lo), (mc_draws, d))
            z = np.where(width > 0, z, lo)
            mc = float(np.mean(np.exp((z @ a + c) / mu)))
            worst_mc = max(worst_mc, abs(got.value - mc) / max(abs(mc), 1e-300))
    margin = min(tol_quad - worst_quad, tol_mc - worst_mc)
    return SuiteResult(
        "box_expectation", margin >= 0, margin,
        f"{cases} cases, worst rel: quad {worst_quad:.3e}, mc {worst_mc:.3e}",
    )


def suite_inner_argmax(seed: int, configs: int = 10_000, grid_step: float = 1e-3) -> SuiteResult:
    """Closed-form inventory inner maximum against a dense grid search."""
    g = np.random.default_rng(seed)
    worst = np.inf
    chunk = 200
    done = 0
    while done < configs:
        c = min(chunk, configs - done)
        lo = g.uniform(-1.0, 1.0, c)
        hi = lo + g.uniform(0.2, 3.0, c)
        theta = g.uniform(-0.5, 3.5, c)
        lam = np.where(g.random(c) < 0.05, 0.0, g.uniform(0.2, 8.0, c))
        x = g.uniform(lo, hi)
        npts = int(np.ceil((hi - lo).max() / grid_step)) + 2
        t = np.linspace(0.0, 1.0, npts)
        grid = lo[:, None] + (hi - lo)[:, None] * t[None, :]
        vals = _news_psi(theta[:, None], lam[:, None], x[:, None], grid, 5.0, 7.0)
        grid_best = vals.max(axis=1)
        for j in range(c):
            _, closed = closed_form_newsvendor_argmax(
                float(theta[j]), float(lam[j]), float(x[j]), (float(lo[j]), float(hi[j]))
            )
            worst = min(worst, 1e-6 - (closed - grid_best[j]))  # closed >= grid always
            worst = min(worst, closed - grid_best[j] + 1e-12)  # and never below it
        done += c
    return SuiteResult(
        "inner_argmax", worst >= 0, worst, f"{configs} configs, min slack {worst:.3e}"
    )


def suite_descent(seed: int, iters: int = 300) -> SuiteResult:
    """Exact-gradient constant-temperature runs never increase the objective."""
    streams = RngSpec(root_seed=seed)
    g = np.random.default_rng(seed)
    dim = 4
    point_sets = [g.standard_normal((8, dim)) for _ in range(15)]
    lip = max(float(np.linalg.norm(p, axis=1).max()) for p in point_sets)
    terms = [_linear_term(p, lip) for p in point_sets]
    problem = MinSumMaxProblem(
        family=TermFamily(terms, None),
        regularizer=IndicatorBox(lower=-np.ones(dim), upper=np.ones(dim)),
        lip_value=lip,
        lip_grad=0.0,
    )
    mu = 0.5
    records, _ = run_sspg(
        problem,
        y0=g.uniform(-1, 1, dim),
        schedule=ConstantMu(eps=mu),
        stepsize=TheoryStep(c2=theory_c2(lip, 0.0, mu)),
        est_cfg=EstimatorConfig(kind="exact"),
        inner_cfg=InnerMaxConfig(),
        iters=iters,
        streams=streams,
        diag_period=0,
    )
    objs = np.array([r.obj_smoothed for r in records])
    increases = np.diff(objs)
    worst = float(-increases.max()) if increases.size else np.inf
    bad = int((increases > 1e-12).sum())
    return SuiteResult(
        "descent", bad == 0, worst, f"{iters} iters, {bad} increases, largest rise {-worst:.3e}"
    )


_FUZZ_BYTES = bytes(range(32, 127)) + b"\t\n\xc3\xa9\xff\x00"


def suite_parser_fuzz(seed: int, count: int = 20_000) -> SuiteResult:
    """Mutated sparse-format inputs must parse or raise structured errors only."""
    g = np.random.default_rng(seed)
    base = serialize_sparse_regression_text(
        Dataset(
            features=np.array([[1.0, 0.0, 2.5], [0.0, -3.0, 0.125], [4.0, 5.0, 6.0]]),
            targets=np.array([1.5, -2.0, 0.0]),
        )
    ).encode()
    crashes = 0
    bad_detail = ""
    for _ in range(count):
        data = bytearray(base)
        for _ in range(int(g.integers(1, 6))):
            op = g.integers(0, 4)
            pos = int(g.integers(0, len(data) + 1)) if len(data) else 0
            if op == 0 and len(data):
                del data[min(pos, len(data) - 1)]
            elif op == 1:
                data.insert(pos, _FUZZ_BYTES[int(g.integers(0, len(_FUZZ_BYTES)))])
            elif op == 2 and len(data):
                data[min(pos, len(data) - 1)] = _FUZZ_BYTES[int(g.integers(0, len(_FUZZ_BYTES)))]
            else:
                data = bytearray(data[: pos]) + bytearray(data[: int(g.integers(0, len(data) + 1))])
        try:
            parse_sparse_regression_text(bytes(data))
        except ParseError as exc:
            if exc.line is not None and exc.line < 1:
                crashes += 1
                bad_detail = f"nonpositive line number in: {exc}"
        except Exception as exc:  # anything unstructured is a bug
            crashes += 1
            bad_detail = f"{type(exc).__name__}: {exc}"
    return SuiteResult(
        "parser_fuzz", crashes == 0, float(-crashes),
        f"{count} mutated inputs, {crashes} unstructured failures" + (f"; first: {bad_detail}" if bad_detail else ""),
    )


SUITES = {
    "sandwich": suite_sandwich,
    "mu_monotone": suite_mu_monotone,
    "grad_fd": suite_grad_fd,
    "mu_gap": suite_mu_gap,
    "grad_norm": suite_grad_norm,
    "estimator_variance": suite_estimator_variance,
    "prox": suite_prox,
    "box_expectation": suite_box_expectation,
    "inner_argmax": suite_inner_argmax,
    "descent": suite_descent,
    "parser_fuzz": suite_parser_fuzz,
}


def run_suites(names: list[str] | None = None, seed: int = 0, **overrides) -> list[SuiteResult]:
    """Run the named suites (all by default) and return their results."""
    if names is None:
        names = list(SUITES)
    results = []
    for name in names:
        if name not in SUITES:
            raise KeyError(f"unknown suite {name!r}; known: {', '.join(SUITES)}")
        kwargs = dict(overrides.get(name, {})) if name in overrides else {}
        results.append(SUITES[name](seed=seed, **kwargs))
    return results
