"""Soft-max smoothing of pointwise maxima.

The hard inner maximum ``max_z psi(y, z)`` is replaced by the smoothed value

    mu * log( mean_j exp(psi(y, z_j) / mu) )

over a finite candidate set, evaluated in shifted form so the exponentials
never overflow.  The smoothed value sits within ``mu * log(k)`` below the true
maximum, decreases monotonically as ``mu`` decreases, and its gradient in
``y`` is the softmax-weighted average of the per-point gradients.

The candidate weighting is uniform (a mean, not a sum); a nonuniform weighting
can be encoded by duplicating points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import ContractError, DomainError

# Temperatures below this are rejected outright rather than clamped: the
# smoothed objective is numerically meaningless there and silently clamping
# would hide configuration bugs.
MU_MIN = 1e-12

# Relative half-width below which the box-expectation factor switches to a
# second-order series; the direct expm1 form loses all digits around here.
_SERIES_CUTOFF = 1e-8


def _check_mu(mu: float) -> float:
    mu = float(mu)
    if not math.isfinite(mu) or mu < MU_MIN:
        raise DomainError(f"smoothing temperature must be >= {MU_MIN}, got {mu}")
    return mu


@dataclass(frozen=True)
class FiniteSet:
    """Finite candidate set, one point per row."""

    points: np.ndarray  # (k, m) with k >= 1

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            raise DomainError("finite support needs at least one point")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise DomainError("box needs lower <= upper coordinatewise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if not (self.radius > 0):
            raise DomainError("ball radius must be positive")
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.center.shape[0]


SupportSet = Union[FiniteSet, Box, Ball]


@dataclass
class MaxTermSpec:
    """One inner-max term: value/gradient callables plus declared constants.

    ``psi(y, Z)`` and ``grad_y_psi(y, Z)`` must accept a single point ``(m,)``
    or a batch ``(k, m)`` of candidates, returning ``(k,)`` values and
    ``(k, dim_y)`` gradients for a batch.  ``lip_value`` bounds both
    ``|grad_y_psi|`` and the Lipschitz constant of ``psi`` in z; ``lip_grad``
    bounds the Lipschitz constant of ``grad_y_psi`` in y.
    """

    psi: Callable[..., np.ndarray]
    grad_y_psi: Callable[..., np.ndarray]
    support: SupportSet
    lip_value: float
    lip_grad: float = 0.0
    anchor: np.ndarray | None = None

    def __post_init__(self):
        if not (self.lip_value > 0):
            raise DomainError("lip_value must be positive")
        if self.lip_grad < 0:
            raise DomainError("lip_grad must be nonnegative")


@dataclass
class SmoothEval:
    """Smoothed value of one term plus everything the chain rule needs."""

    value: float
    grad_y: np.ndarray
    weights: np.ndarray  # softmax weights over support points, sums to 1
    shift: float  # the max psi value used to stabilize the exponentials
    mu: float


def lse_shifted(values, mu: float) -> float:
    """Stable ``mu * log(mean(exp(values / mu)))``.

    Shifted by the max so the largest exponent is exactly 0; safe for any
    value scale representable in float64.
    """
    mu = _check_mu(mu)
    vals = np.asarray(values, dtype=float).reshape(-1)
    if vals.size == 0:
        raise DomainError("lse_shifted needs at least one value")
    if not np.all(np.isfinite(vals)):
        raise DomainError("lse_shifted values must be finite")
    s = float(vals.max())
    if vals.size == 1:
        return s
    return s + mu * float(np.log(np.exp((vals - s) / mu).mean()))


def _finite_softmax(term: MaxTermSpec, y: np.ndarray, mu: float):
    """Values, shift, and softmax weights of a finite-support term."""
    if not isinstance(term.support, FiniteSet):
        raise ContractError("finite support required")
    pts = term.support.points
    vals = np.asarray(term.psi(y, pts), dtype=float).reshape(-1)
    if vals.shape[0] != pts.shape[0]:
        raise DomainError(
            f"psi returned {vals.shape[0]} values for {pts.shape[0]} points"
        )
    if not np.all(np.isfinite(vals)):
        raise DomainError("psi produced nonfinite values on the support")
    s = float(vals.max())
    e = np.exp((vals - s) / mu)
    w = e / e.sum()
    return pts, vals, s, e, w


def smooth_value_finite(term: MaxTermSpec, y: np.ndarray, mu: float) -> SmoothEval:
    """Smoothed max of one finite-support term, with gradient and weights.

    A single-point support short-circuits to the exact value and gradient.
    """
    mu = _check_mu(mu)
    y = np.asarray(y, dtype=float)
    pts, vals, s, e, w = _finite_softmax(term, y, mu)
    k = pts.shape[0]
    grads = np.asarray(term.grad_y_psi(y, pts), dtype=float).reshape(k, -1)
    if k == 1:
        return SmoothEval(
            value=float(vals[0]), grad_y=grads[0].copy(),
            weights=np.ones(1), shift=float(vals[0]), mu=mu,
        )
    value = s + mu * float(np.log(e.mean()))
    grad = w @ grads
    return SmoothEval(value=value, grad_y=grad, weights=w, shift=s, mu=mu)


def smooth_grad_mu(term: MaxTermSpec, y: np.ndarray, mu: float) -> float:
    """Derivative of the smoothed value with respect to the temperature.

    Equals ``log(mean(exp(psi/mu))) - (weighted mean of psi)/mu`` with the
    softmax weights; always nonpositive here because the weighted mean
    dominates the smoothed value.  Exactly zero for a single-point support.
    """
    mu = _check_mu(mu)
    y = np.asarray(y, dtype=float)
    pts, vals, s, e, w = _finite_softmax(term, y, mu)
    if pts.shape[0] == 1:
        return 0.0
    log_mean = float(np.log(e.mean()))
    weighted = float(w @ vals)
    return log_mean + (s - weighted) / mu


def grad_lipschitz_bound(term: MaxTermSpec, mu: float) -> float:
    """Lipschitz constant of the smoothed gradient: ``lip_grad + 2 lip_value^2 / mu``."""
    mu = _check_mu(mu)
    return term.lip_grad + 2.0 * term.lip_value**2 / mu


def mu_gap_bound_finite(cardinality: int, mu1: float, mu2: float) -> float:
    """Bound on how far the smoothed value moves between two temperatures.

    For a finite support of size ``cardinality`` and ``1 >= mu1 > mu2 > 0``,
    the smoothed value changes by at most ``2 log(cardinality) (mu1 - mu2)``.
    """
    if int(cardinality) != cardinality or cardinality < 1:
        raise DomainError("cardinality must be a positive integer")
    if not (0.0 < mu2 < mu1 <= 1.0):
        raise DomainError("need 1 >= mu1 > mu2 > 0")
    return 2.0 * math.log(cardinality) * (mu1 - mu2)


@dataclass(frozen=True)
class BoxExpectation:
    """Expectation of an exponentiated affine score over a uniform box.

    ``value`` may overflow to inf for large exponents; ``log_value`` is the
    stable quantity.
    """

    value: float
    log_value: float


def linear_box_expectation(a, c: float, box: Box, mu: float) -> BoxExpectation:
    """``E[exp((a . z + c) / mu)]`` for z uniform on a box, in closed form.

    The expectation factorizes per coordinate; each factor is computed in log
    space from the two endpoint exponents.  Factors whose exponent half-width
    is below ``1e-8`` (including zero slope and degenerate coordinates) use a
    midpoint series accurate to machine precision.
    """
    mu = _check_mu(mu)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape[0] != box.dim:
        raise DomainError(f"slope has dim {a.shape[0]}, box has dim {box.dim}")
    log_value = float(c) / mu
    for ai, lo, hi in zip(a, box.lower, box.upper):
        h = ai * hi / mu
        g = ai * lo / mu
        delta = h - g
        if abs(delta) < _SERIES_CUTOFF:
            log_value += 0.5 * (h + g) + math.log1p(delta * delta / 24.0)
        elif delta > 0:
            log_value += h + math.log1p(-math.exp(-delta)) - math.log(delta)
        else:
            log_value += g + math.log1p(-math.exp(delta)) - math.log(-delta)
    try:
        value = math.exp(log_value)
    except OverflowError:
        value = math.inf
    return BoxExpectation(value=value, log_value=log_value)
