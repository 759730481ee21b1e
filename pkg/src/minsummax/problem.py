"""Problem container and the term-family evaluation backend.

A min-sum-max problem is an outer regularizer plus the mean of many inner-max
terms (optionally with an exact linear part that stays outside the
smoothing).  ``TermFamily`` evaluates per-term quantities; the base class
loops over per-term callables and is the reference implementation, while
specialized families may vectorize across terms.  Both must consume RNG
substreams keyed by (purpose, iteration, term index) so results never depend
on execution order or worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data_io import RngSpec
from .errors import ContractError, DomainError
from .estimators import (
    EstimatorConfig,
    InnerMaxConfig,
    TermEstimate,
    ball_sampler_estimator,
    exact_finite_estimator,
    inner_maximize,
    lse_shifted,
)
from .prox import RegularizerSpec, reg_value
from .smoothing import FiniteSet, MaxTermSpec


class TermFamily:
    """Per-term evaluations for the solver loop.

    ``workers > 1`` fans the per-term work out to a thread pool; results are
    collected by term index, so the fan-out is invisible in the output.
    """

    def __init__(self, terms: Sequence[MaxTermSpec], grad_z: Sequence[Callable] | None = None,
                 workers: int = 1):
        if not terms:
            raise DomainError("term family needs at least one term")
        if grad_z is not None and len(grad_z) != len(terms):
            raise DomainError("grad_z list must match terms")
        self._terms = list(terms)
        self._grad_z = list(grad_z) if grad_z is not None else None
        self.workers = max(1, int(workers))

    @property
    def n(self) -> int:
        return len(self._terms)

    def term(self, i: int) -> MaxTermSpec:
        return self._terms[i]

    def grad_z_fn(self, i: int) -> Callable | None:
        return self._grad_z[i] if self._grad_z is not None else None

    def _map(self, fn, items):
        if self.workers == 1 or len(items) == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, items))

    # -- exact finite path --

    def exact_estimates(self, y, mu, idx):
        """(values, grads) of the exact smoothed terms at y; finite supports only."""
        ests = self._map(lambda i: exact_finite_estimator(self._terms[i], y, mu), list(idx))
        values = np.array([e.value for e in ests])
        grads = np.vstack([e.grad for e in ests])
        return values, grads

    # -- ascent-based paths --

    def inner_centers(self, y, idx, inner_cfg: InnerMaxConfig, streams: RngSpec, k: int):
        """Approximate inner maximizers for the selected terms."""
        def solve(i):
            return inner_maximize(
                self._terms[i], self.grad_z_fn(i), y, inner_cfg, streams.stream("inner", k, i)
            )
        out = self._map(solve, list(idx))
        centers = np.vstack([z for z, _ in out])
        values = np.array([v for _, v in out])
        return centers, values

    def center_gradients(self, y, centers, idx):
        """psi values and y-gradients at externally chosen points, one per term."""
        values, grads = [], []
        for row, i in enumerate(idx):
            t = self._terms[i]
            z = centers[row]
            values.append(float(t.psi(y, z)))
            grads.append(np.asarray(t.grad_y_psi(y, z), dtype=float).reshape(-1))
        return np.array(values), np.vstack(grads)

    def sampled_estimates(self, y, mu, idx, est_cfg: EstimatorConfig,
                          inner_cfg: InnerMaxConfig, streams: RngSpec, k: int):
        """Ball-sampled estimates: (values, grads, points) for the selected terms."""
        def solve(i):
            return ball_sampler_estimator(
                self._terms[i], self.grad_z_fn(i), y, mu, est_cfg, inner_cfg,
                streams.stream("term", k, i),
            )
        ests: list[TermEstimate] = self._map(solve, list(idx))
        values = np.array([e.value for e in ests])
        grads = np.vstack([e.grad for e in ests])
        points = [e.points for e in ests]
        return values, grads, points

    def sampled_values(self, y, mu, idx, points):
        """Re-evaluate the sampled smoothed objective at a different y on the same points."""
        values = []
        for row, i in enumerate(idx):
            vals = np.asarray(self._terms[i].psi(y, points[row]), dtype=float).reshape(-1)
            values.append(lse_shifted(vals, mu))
        return np.array(values)

    def primal_values(self, y, idx, inner_cfg: InnerMaxConfig, streams: RngSpec, k: int):
        """Estimates of the unsmoothed inner maxima, from fresh ascent streams."""
        def solve(i):
            _, v = inner_maximize(
                self._terms[i], self.grad_z_fn(i), y, inner_cfg, streams.stream("primal", k, i)
            )
            return v
        return np.array(self._map(solve, list(idx)))

    def finite_supports(self) -> bool:
        return all(isinstance(t.support, FiniteSet) for t in self._terms)


@dataclass
class MinSumMaxProblem:
    """Outer regularizer + mean of inner-max terms (+ optional exact linear part).

    ``linear`` contributes ``linear . y`` to the objective and is added to
    every gradient outside the smoothing machinery.  ``lip_value`` and
    ``lip_grad`` are the declared problem-level constants (maxima over
    terms); the theory stepsize and batch-size rules trust them.
    """

    family: TermFamily
    regularizer: RegularizerSpec
    lip_value: float
    lip_grad: float = 0.0
    linear: np.ndarray | None = None
    constant: float = 0.0
    lambda_index: int | None = None
    fixed_lambda: float | None = None
    name: str = ""

    def __post_init__(self):
        if not (self.lip_value > 0) or self.lip_grad < 0:
            raise DomainError("need lip_value > 0 and lip_grad >= 0")
        if self.linear is not None:
            self.linear = np.asarray(self.linear, dtype=float)

    @property
    def n(self) -> int:
        return self.family.n

    def outer_value(self, y: np.ndarray) -> float:
        """Regularizer + linear + constant parts of the objective at y."""
        total = reg_value(self.regularizer, y) + self.constant
        if self.linear is not None:
            total += float(self.linear @ y)
        return total

    def objective_from_values(self, y: np.ndarray, term_values: np.ndarray) -> float:
        return self.outer_value(y) + float(np.mean(term_values))

    def full_smoothed_gradient(self, y, mu):
        """Exact full-batch gradient of the smooth part (finite supports only)."""
        if not self.family.finite_supports():
            raise ContractError("exact full gradient needs finite supports")
        _, grads = self.family.exact_estimates(y, mu, np.arange(self.n))
        g = grads.mean(axis=0)
        if self.linear is not None:
            g = g + self.linear
        return g
