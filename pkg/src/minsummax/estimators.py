"""Per-term gradient estimators and minibatch utilities.

Two estimators produce the smoothed-gradient of a single inner-max term:

* exact softmax over a finite support, and
* softmax over points sampled uniformly from a small ball around an
  approximate inner maximizer, whose radius shrinks with the temperature so
  the relative second moment of the estimate stays bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .errors import ContractError, DomainError, NumericalError
from .prox import project
from .smoothing import Ball, Box, FiniteSet, MaxTermSpec, SmoothEval, _check_mu, lse_shifted, smooth_value_finite


@dataclass
class InnerMaxConfig:
    """Budget for the projected-ascent inner maximizer.

    ``iterations=0`` degenerates to evaluating the projected start point,
    which is occasionally useful as a baseline.
    """

    step_size: float = 1e-2
    iterations: int = 20
    init_noise_scale: float = 1e-3
    restarts: int = 1

    def __post_init__(self):
        if not (self.step_size > 0):
            raise DomainError("inner step size must be positive")
        if self.iterations < 0 or self.restarts < 1:
            raise DomainError("need iterations >= 0 and restarts >= 1")
        if self.init_noise_scale < 0:
            raise DomainError("init noise scale must be nonnegative")


@dataclass
class EstimatorConfig:
    kind: Literal["exact", "ball"] = "ball"
    samples: int = 32  # ball draws per term
    eps_hat: float = 0.0  # target estimator accuracy; 0 means full batch
    retain_improvers: bool = False  # keep only draws that beat the center

    def __post_init__(self):
        if self.kind not in ("exact", "ball"):
            raise DomainError(f"unknown estimator kind {self.kind!r}")
        if self.kind == "ball" and self.samples < 1:
            raise DomainError("ball sampler needs at least one sample")
        if self.eps_hat < 0:
            raise DomainError("eps_hat must be nonnegative")


@dataclass
class TermEstimate:
    """Smoothed value/gradient estimate for one term.

    ``points`` holds the candidate set the softmax ran over (None for the
    exact finite path, where the support itself is the candidate set); it lets
    the caller re-evaluate the same sampled objective at a different y.
    """

    value: float
    grad: np.ndarray
    points: np.ndarray | None = None
    center: np.ndarray | None = None
    center_value: float | None = None


@dataclass
class GradientEstimate:
    """Minibatch-aggregated gradient, with the indices that produced it."""

    grad: np.ndarray
    indices_used: np.ndarray
    per_term_samples: int
    value_estimate: float


def inner_maximize(
    term: MaxTermSpec,
    grad_z_psi: Callable | None,
    y: np.ndarray,
    cfg: InnerMaxConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Approximate ``argmax_z psi(y, z)`` over the term's support.

    Finite supports are solved exactly by enumeration (ties: highest value,
    then lexicographically smallest point).  Box/ball supports run projected
    gradient ascent from the anchor plus a small noise kick; with several
    restarts the best final iterate wins.
    """
    y = np.asarray(y, dtype=float)
    support = term.support
    if isinstance(support, FiniteSet):
        pts = support.points
        vals = np.asarray(term.psi(y, pts), dtype=float).reshape(-1)
        best = float(vals.max())
        ties = pts[vals == best]
        z = min(map(tuple, ties))
        return np.asarray(z, dtype=float), best
    if grad_z_psi is None:
        raise ContractError("continuous support needs a z-gradient callable")
    if term.anchor is None:
        raise ContractError("continuous support needs an anchor start point")
    best_z, best_val = None, -math.inf
    for _ in range(cfg.restarts):
        noise = cfg.init_noise_scale * rng.standard_normal(support.dim)
        z = project(support, np.asarray(term.anchor, dtype=float) + noise)
        for it in range(cfg.iterations):
            step = np.asarray(grad_z_psi(y, z), dtype=float)
            z = project(support, z + cfg.step_size * step)
            if not np.all(np.isfinite(z)):
                raise NumericalError(
                    f"inner ascent diverged at iteration {it}: z={z}"
                )
        val = float(term.psi(y, z))
        if not math.isfinite(val):
            raise NumericalError(f"inner ascent produced nonfinite value at z={z}")
        if val > best_val or (val == best_val and tuple(z) < tuple(best_z)):
            best_z, best_val = z, val
    return best_z, best_val


def exact_finite_estimator(term: MaxTermSpec, y: np.ndarray, mu: float) -> TermEstimate:
    """Exact smoothed value and gradient of a finite-support term."""
    ev: SmoothEval = smooth_value_finite(term, y, mu)
    return TermEstimate(value=ev.value, grad=ev.grad_y)


def uniform_ball_points(
    center: np.ndarray, radius: float, count: int, rng: np.random.Generator
) -> np.ndarray:
    """``count`` i.i.d. points uniform in the ball around ``center``.

    Direction from a normalized Gaussian, radius from the d-th root of a
    uniform; the draw order (normals first, then radii) is part of the
    reproducibility contract.
    """
    d = center.shape[0]
    g = rng.standard_normal((count, d))
    u = rng.random(count)
    norms = np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    return center + g / norms * (radius * u ** (1.0 / d))[:, None]


def ball_sampler_estimator(
    term: MaxTermSpec,
    grad_z_psi: Callable | None,
    y: np.ndarray,
    mu: float,
    cfg: EstimatorConfig,
    inner_cfg: InnerMaxConfig,
    rng: np.random.Generator,
) -> TermEstimate:
    """Sampled softmax gradient around an approximate inner maximizer.

    Draws ``cfg.samples`` points uniformly from the ball of radius
    ``mu / (4 lip_value)`` about the ascent solution, projects them onto the
    support, and softmax-combines values and gradients at temperature ``mu``.
    With ``retain_improvers`` only draws that strictly beat the center are
    kept; the center itself is always retained, so the candidate set is never
    empty.
    """
    mu = _check_mu(mu)
    if cfg.kind != "ball":
        raise ContractError("ball_sampler_estimator needs a ball estimator config")
    y = np.asarray(y, dtype=float)
    center, center_val = inner_maximize(term, grad_z_psi, y, inner_cfg, rng)
    radius = mu / (4.0 * term.lip_value)
    raw = uniform_ball_points(center, radius, cfg.samples, rng)
    if isinstance(term.support, Box):
        pts = np.clip(raw, term.support.lower, term.support.upper)
    elif isinstance(term.support, (Ball, FiniteSet)):
        if isinstance(term.support, FiniteSet):
            raise ContractError("ball sampling needs a continuous support")
        pts = np.vstack([project(term.support, row) for row in raw])
    else:
        raise ContractError(f"unknown support {type(term.support).__name__}")
    vals = np.asarray(term.psi(y, pts), dtype=float).reshape(-1)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("ball sampler saw nonfinite psi values")
    if cfg.retain_improvers:
        keep = vals > center_val
        pts = np.vstack([center[None, :], pts[keep]])
        vals = np.concatenate([[center_val], vals[keep]])
    shift = float(vals.max())
    e = np.exp((vals - shift) / mu)
    w = e / e.sum()
    grads = np.asarray(term.grad_y_psi(y, pts), dtype=float).reshape(pts.shape[0], -1)
    return TermEstimate(
        value=lse_shifted(vals, mu),
        grad=w @ grads,
        points=pts,
        center=center,
        center_value=center_val,
    )


def minibatch_size(n: int, lip_value: float, eps_hat: float) -> int:
    """Terms to sample per step: ``min(ceil(4 lip^2 / eps_hat^2), n)``.

    ``eps_hat = 0`` asks for exact aggregation and returns the full ``n``.
    """
    if n < 1:
        raise DomainError("need at least one term")
    if not (lip_value > 0) or eps_hat < 0:
        raise DomainError("need lip_value > 0 and eps_hat >= 0")
    if eps_hat == 0.0:
        return n
    return min(math.ceil(4.0 * lip_value**2 / eps_hat**2), n)


def ball_sample_size(lip_value: float, eps_hat: float) -> int:
    """Ball draws per term for estimator accuracy ``eps_hat``: ``ceil(12 lip^2 / eps_hat^2)``."""
    if not (lip_value > 0) or not (eps_hat > 0):
        raise DomainError("need lip_value > 0 and eps_hat > 0")
    return math.ceil(12.0 * lip_value**2 / eps_hat**2)


def sampling_plan(n: int, lip_value: float, eps_hat: float) -> tuple[int, int]:
    """Matched (minibatch size, ball draws per term) for one accuracy target."""
    m = minibatch_size(n, lip_value, eps_hat)
    big_m = ball_sample_size(lip_value, eps_hat) if eps_hat > 0 else 1
    return m, big_m


def aggregate_gradient(grads) -> np.ndarray:
    """Mean of per-term gradients, reduced in index order."""
    stack = np.asarray(grads, dtype=float)
    if stack.ndim == 1:
        stack = stack[None, :]
    if stack.size == 0:
        raise DomainError("nothing to aggregate")
    return np.add.reduce(stack, axis=0) / stack.shape[0]


def sample_without_replacement(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """m distinct indices from range(n), every m-subset equally likely."""
    if not (1 <= m <= n):
        raise DomainError(f"need 1 <= m <= n, got m={m}, n={n}")
    return rng.choice(n, size=m, replace=False)
