"""Wasserstein distributionally robust instances as min-sum-max problems.

The dual of a Wasserstein-ball robust objective is, up to the multiplier
term ``lambda * delta^p``, a mean of inner maxima of

    psi(theta, lambda, z; x_i) = loss(theta, z) - lambda * transport(x_i, z)

over the sample space, so it compiles directly onto the solver machinery with
``y = (theta, lambda)``.  The multiplier term is affine and is carried as an
exact linear component outside the smoothing.

Two concrete instances are provided: an inventory (newsvendor) model with a
scalar decision and a closed-form inner maximizer, and a small-MLP regression
model whose label coordinate is frozen to the anchor's (moving it costs an
infinite transport).  Both come with term families vectorized across the
data; the generic per-term path remains available as the reference and the
vectorized families consume RNG substreams in exactly the same per-term
order, so the two backends agree to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data_io import RngSpec
from .errors import ContractError, DomainError
from .estimators import EstimatorConfig, InnerMaxConfig
from .problem import MinSumMaxProblem, TermFamily
from .prox import IndicatorHalfLineProduct, Product, RegularizerSpec, Zero
from .smoothing import Box, FiniteSet, MaxTermSpec


@dataclass
class WdroInstance:
    """A robust instance: loss/transport callables plus the ambiguity geometry.

    Callables accept a batch of candidate points ``(k, m2)`` and return
    ``(k,)`` values or ``(k, dim)`` gradients.  ``frozen_mask`` marks z
    coordinates pinned to the anchor's value (their support interval is
    degenerate and ascent gradients there are zero).  ``lip_value`` and
    ``lip_grad`` are declared bounds the solver's rules trust.  ``extra``
    holds model constants needed by specialized backends.
    """

    kind: str
    data: np.ndarray  # (n, m2) anchor points
    delta: float
    order: int
    lambda_min: float
    theta_dim: int
    theta_domain: RegularizerSpec
    support_lower: np.ndarray  # (m2,), frozen coords pinned per anchor at compile
    support_upper: np.ndarray
    frozen_mask: np.ndarray  # bool (m2,)
    lip_value: float
    lip_grad: float
    loss: Callable
    grad_theta_loss: Callable
    grad_z_loss: Callable
    transport: Callable
    grad_z_transport: Callable
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if not (self.delta > 0) or self.order < 1:
            raise DomainError("need delta > 0 and order >= 1")
        if self.lambda_min < 0:
            raise DomainError("lambda_min must be nonnegative")
        if not (self.lip_value > 0):
            raise DomainError("declared lip_value must be positive")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def m2(self) -> int:
        return self.data.shape[1]


# --- generic per-term compilation -------------------------------------------


def _term_support(inst: WdroInstance, i: int) -> Box:
    x = inst.data[i]
    lo = np.where(inst.frozen_mask, x, inst.support_lower)
    hi = np.where(inst.frozen_mask, x, inst.support_upper)
    return Box(lower=lo, upper=hi)


def _split(inst: WdroInstance, y: np.ndarray, lambda_frozen: float | None):
    y = np.asarray(y, dtype=float)
    if lambda_frozen is None:
        return y[: inst.theta_dim], float(y[inst.theta_dim])
    return y[: inst.theta_dim], float(lambda_frozen)


def _term_closures(inst: WdroInstance, i: int, lambda_frozen: float | None):
    """(MaxTermSpec, grad_z) pair for one anchor, shared by every backend."""
    x = inst.data[i]

    def psi(y, Z):
        theta, lam = _split(inst, y, lambda_frozen)
        Z2 = np.atleast_2d(np.asarray(Z, dtype=float))
        vals = inst.loss(theta, Z2) - lam * inst.transport(x, Z2)
        return vals if np.ndim(Z) == 2 else float(vals[0])

    def grad_y_psi(y, Z):
        theta, lam = _split(inst, y, lambda_frozen)
        Z2 = np.atleast_2d(np.asarray(Z, dtype=float))
        g_theta = np.atleast_2d(inst.grad_theta_loss(theta, Z2))
        if lambda_frozen is None:
            out = np.hstack([g_theta, -inst.transport(x, Z2)[:, None]])
        else:
            out = g_theta
        return out if np.ndim(Z) == 2 else out[0]

    def grad_z(y, z):
        theta, lam = _split(inst, y, lambda_frozen)
        Z2 = np.atleast_2d(np.asarray(z, dtype=float))
        g = inst.grad_z_loss(theta, Z2) - lam * inst.grad_z_transport(x, Z2)
        return np.where(inst.frozen_mask, 0.0, g)[0]

    term = MaxTermSpec(
        psi=psi,
        grad_y_psi=grad_y_psi,
        support=_term_support(inst, i),
        lip_value=inst.lip_value,
        lip_grad=inst.lip_grad,
        anchor=x,
    )
    return term, grad_z


def _regularizer(inst: WdroInstance, lambda_frozen: float | None) -> RegularizerSpec:
    if lambda_frozen is not None:
        return inst.theta_domain
    return Product(
        blocks=(
            (inst.theta_domain, inst.theta_dim),
            (IndicatorHalfLineProduct(lower=np.array([inst.lambda_min])), 1),
        )
    )


def compile_to_minsummax(
    inst: WdroInstance,
    lambda_frozen: float | None = None,
    grid: np.ndarray | None = None,
    vectorize: bool = True,
    workers: int = 1,
) -> MinSumMaxProblem:
    """Assemble the solver-facing problem from a robust instance.

    ``grid`` replaces the continuous sample space by a finite one (scalar
    sample spaces only), enabling the exact estimator.  ``lambda_frozen``
    drops the multiplier from the iterate and moves ``lambda * delta^p`` into
    the objective's constant part.  ``vectorize=False`` forces the generic
    per-term backend.
    """
    if grid is not None and inst.m2 != 1:
        raise ContractError("grid discretization needs a scalar sample space")
    if vectorize and inst.kind == "newsvendor":
        family: TermFamily = NewsvendorFamily(inst, lambda_frozen, grid)
    elif vectorize and inst.kind == "regression" and grid is None:
        family = RegressionFamily(inst, lambda_frozen)
    else:
        pairs = [_term_closures(inst, i, lambda_frozen) for i in range(inst.n)]
        terms = [t for t, _ in pairs]
        if grid is not None:
            support = FiniteSet(points=np.asarray(grid, dtype=float).reshape(-1, 1))
            for t in terms:
                t.support = support
        family = TermFamily(terms, [g for _, g in pairs], workers=workers)

    dim = inst.theta_dim + (0 if lambda_frozen is not None else 1)
    linear = None
    constant = 0.0
    if lambda_frozen is None:
        linear = np.zeros(dim)
        linear[inst.theta_dim] = float(inst.delta) ** inst.order
    else:
        constant = lambda_frozen * float(inst.delta) ** inst.order
    return MinSumMaxProblem(
        family=family,
        regularizer=_regularizer(inst, lambda_frozen),
        lip_value=inst.lip_value,
        lip_grad=inst.lip_grad,
        linear=linear,
        constant=constant,
        lambda_index=None if lambda_frozen is not None else inst.theta_dim,
        fixed_lambda=lambda_frozen,
        name=inst.kind,
    )


# --- shared RNG draw pattern -------------------------------------------------
#
# The generic backend consumes, per term and iteration, from one stream:
# ascent init noise (restarts draws of dim values), then for the sampler the
# ball directions ((M, dim) normals) and radii (M uniforms).  The vectorized
# families replay exactly that sequence per term before batching arithmetic.


def _draw_ascent_noise(streams, purpose, k, idx, restarts, dim):
    out = np.empty((len(idx), restarts, dim))
    gens = []
    for row, i in enumerate(idx):
        g = streams.stream(purpose, k, int(i))
        for r in range(restarts):
            out[row, r] = g.standard_normal(dim)
        gens.append(g)
    return out, gens


def _draw_ball(gens, count, dim):
    normals = np.empty((len(gens), count, dim))
    radii_u = np.empty((len(gens), count))
    for row, g in enumerate(gens):
        normals[row] = g.standard_normal((count, dim))
        radii_u[row] = g.random(count)
    return normals, radii_u


def _ball_offsets(normals, radii_u, radius, dim):
    norms = np.maximum(np.linalg.norm(normals, axis=2, keepdims=True), 1e-300)
    return normals / norms * (radius * radii_u ** (1.0 / dim))[:, :, None]


def _masked_softmax(vals, mask, mu):
    """Row-wise softmax over masked entries; returns (weights, lse values)."""
    neg = np.where(mask, vals, -np.inf)
    shift = neg.max(axis=1)
    e = np.where(mask, np.exp((vals - shift[:, None]) / mu), 0.0)
    tot = e.sum(axis=1)
    w = e / tot[:, None]
    count = mask.sum(axis=1)
    lse = shift + mu * np.log(tot / count)
    return w, lse


# --- newsvendor ---------------------------------------------------------------


def newsvendor_instance(
    demands: np.ndarray,
    v: float = 5.0,
    u: float = 7.0,
    delta: float = 1.0,
    order: int = 2,
    lambda_min: float = 7.0,
    lambda_cap: float | None = None,
    lip_value: float | None = None,
) -> WdroInstance:
    """Inventory model: loss ``v*theta - u*min(theta, x)``, quadratic transport.

    The order quantity is the scalar decision (nonnegative); samples live in
    the interval spanned by the observed demands.  The default declared
    ``lip_value`` is the coarse bound ``max(|v|, |u - v|) + lambda_cap *
    diam``; the loss gradient is piecewise constant in theta, so
    ``lip_grad = 0`` and all curvature comes from the smoothing.
    """
    demands = np.asarray(demands, dtype=float).reshape(-1)
    if demands.size == 0:
        raise DomainError("need at least one demand observation")
    lo, hi = float(demands.min()), float(demands.max())
    if lambda_cap is None:
        lambda_cap = lambda_min + 8.0
    if lip_value is None:
        lip_value = max(abs(v), abs(u - v)) + lambda_cap * max(hi - lo, 1e-6)

    def loss(theta, Z):
        t = float(theta[0])
        return v * t - u * np.minimum(t, Z[:, 0])

    def grad_theta_loss(theta, Z):
        t = float(theta[0])
        return (v - u * (t <= Z[:, 0]))[:, None]

    def grad_z_loss(theta, Z):
        t = float(theta[0])
        return (-u * (Z[:, 0] < t))[:, None]

    def transport(x, Z):
        return 0.5 * (x[0] - Z[:, 0]) ** 2

    def grad_z_transport(x, Z):
        return (Z[:, 0] - x[0])[:, None]

    return WdroInstance(
        kind="newsvendor",
        data=demands[:, None],
        delta=delta,
        order=order,
        lambda_min=lambda_min,
        theta_dim=1,
        theta_domain=IndicatorHalfLineProduct(lower=np.zeros(1)),
        support_lower=np.array([lo]),
        support_upper=np.array([hi]),
        frozen_mask=np.zeros(1, dtype=bool),
        lip_value=lip_value,
        lip_grad=0.0,
        loss=loss,
        grad_theta_loss=grad_theta_loss,
        grad_z_loss=grad_z_loss,
        transport=transport,
        grad_z_transport=grad_z_transport,
        extra={"v": v, "u": u},
    )


def _news_psi(theta, lam, x, z, v, u):
    return v * theta - u * np.minimum(theta, z) - lam * 0.5 * (x - z) ** 2


def closed_form_newsvendor_argmax(
    theta: float, lam: float, x: float, box, v: float = 5.0, u: float = 7.0
) -> tuple[float, float]:
    """Exact inner maximizer of the newsvendor term over an interval.

    The objective is piecewise concave-quadratic in z with a kink at theta;
    the maximum is among the two clamped branch optima and the kink.  Ties go
    to the smaller z.  ``lam = 0`` is handled as the limit (the left branch
    optimum escapes to the lower endpoint).
    """
    if isinstance(box, Box):
        lo, hi = float(box.lower[0]), float(box.upper[0])
    else:
        lo, hi = float(box[0]), float(box[1])
    if lam < 0:
        raise DomainError("multiplier must be nonnegative")
    candidates = []
    if theta >= lo:  # z <= theta branch nonempty
        left_opt = x - u / lam if lam > 0 else -math.inf
        candidates.append(min(max(left_opt, lo), min(theta, hi)))
    if theta <= hi:  # z >= theta branch nonempty
        candidates.append(min(max(x, max(theta, lo)), hi))
    candidates.append(min(max(theta, lo), hi))
    best_z, best_val = math.inf, -math.inf
    for z in candidates:
        val = float(_news_psi(theta, lam, x, z, v, u))
        if val > best_val or (val == best_val and z < best_z):
            best_z, best_val = z, val
    return best_z, best_val


class NewsvendorFamily(TermFamily):
    """Newsvendor terms vectorized across demand anchors."""

    def __init__(self, inst: WdroInstance, lambda_frozen: float | None = None,
                 grid: np.ndarray | None = None):
        self.inst = inst
        self.lambda_frozen = lambda_frozen
        self.x = inst.data[:, 0].copy()
        self.lo = float(inst.support_lower[0])
        self.hi = float(inst.support_upper[0])
        self.v = float(inst.extra["v"])
        self.u = float(inst.extra["u"])
        self.grid = None if grid is None else np.asarray(grid, dtype=float).reshape(-1)
        self.workers = 1
        self._term_cache: dict[int, tuple] = {}

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def _pair(self, i: int):
        if i not in self._term_cache:
            term, gz = _term_closures(self.inst, i, self.lambda_frozen)
            if self.grid is not None:
                term.support = FiniteSet(points=self.grid[:, None])
            self._term_cache[i] = (term, gz)
        return self._term_cache[i]

    def term(self, i: int) -> MaxTermSpec:
        return self._pair(i)[0]

    def grad_z_fn(self, i: int):
        return self._pair(i)[1]

    def _theta_lam(self, y):
        y = np.asarray(y, dtype=float)
        if self.lambda_frozen is None:
            return float(y[0]), float(y[1])
        return float(y[0]), float(self.lambda_frozen)

    def _psi_rows(self, theta, lam, x_sel, z):
        """psi for per-row anchors against per-row candidate arrays."""
        return (
            self.v * theta
            - self.u * np.minimum(theta, z)
            - lam * 0.5 * (x_sel[:, None] - z) ** 2
        )

    def _grads_rows(self, theta, x_sel, z):
        g_theta = self.v - self.u * (theta <= z)
        d = 0.5 * (x_sel[:, None] - z) ** 2
        return g_theta, -d

    def _combine(self, w, g_theta, g_lam):
        gt = (w * g_theta).sum(axis=1)
        if self.lambda_frozen is not None:
            return gt[:, None]
        return np.stack([gt, (w * g_lam).sum(axis=1)], axis=1)

    # -- exact finite path --

    def exact_estimates(self, y, mu, idx):
        if self.grid is None:
            raise ContractError("exact estimates need a grid-discretized sample space")
        theta, lam = self._theta_lam(y)
        idx = np.asarray(idx)
        x_sel = self.x[idx]
        z = np.broadcast_to(self.grid, (len(idx), self.grid.size))
        vals = self._psi_rows(theta, lam, x_sel, z)
        mask = np.ones_like(vals, dtype=bool)
        w, lse = _masked_softmax(vals, mask, mu)
        g_theta, g_lam = self._grads_rows(theta, x_sel, z)
        return lse, self._combine(w, g_theta, g_lam)

    # -- ascent --

    def _ascend(self, theta, lam, x_sel, z0, cfg: InnerMaxConfig):
        z = z0.copy()
        for _ in range(cfg.iterations):
            gz = -self.u * (z < theta) + lam * (x_sel - z)
            z = np.clip(z + cfg.step_size * gz, self.lo, self.hi)
        return z

    def inner_centers(self, y, idx, inner_cfg, streams, k):
        theta, lam = self._theta_lam(y)
        idx = np.asarray(idx)
        x_sel = self.x[idx]
        noise, _ = _draw_ascent_noise(streams, "inner", k, idx, inner_cfg.restarts, 1)
        best_z, best_v = None, None
        for r in range(inner_cfg.restarts):
            z0 = np.clip(x_sel + inner_cfg.init_noise_scale * noise[:, r, 0], self.lo, self.hi)
            z = self._ascend(theta, lam, x_sel, z0, inner_cfg)
            val = self._psi_rows(theta, lam, x_sel, z[:, None])[:, 0]
            if best_z is None:
                best_z, best_v = z, val
            else:
                better = (val > best_v) | ((val == best_v) & (z < best_z))
                best_z = np.where(better, z, best_z)
                best_v = np.where(better, val, best_v)
        return best_z[:, None], best_v

    def center_gradients(self, y, centers, idx):
        theta, lam = self._theta_lam(y)
        idx = np.asarray(idx)
        x_sel = self.x[idx]
        z = np.asarray(centers, dtype=float).reshape(-1)
        vals = self._psi_rows(theta, lam, x_sel, z[:, None])[:, 0]
        g_theta = self.v - self.u * (theta <= z)
        if self.lambda_frozen is not None:
            return vals, g_theta[:, None]
        g_lam = -0.5 * (x_sel - z) ** 2
        return vals, np.stack([g_theta, g_lam], axis=1)

    # -- ball sampling --

    def sampled_estimates(self, y, mu, idx, est_cfg, inner_cfg, streams, k):
        theta, lam = self._theta_lam(y)
        idx = np.asarray(idx)
        x_sel = self.x[idx]
        noise, gens = _draw_ascent_noise(streams, "term", k, idx, inner_cfg.restarts, 1)
        best_z, best_v = None, None
        for r in range(inner_cfg.restarts):
            z0 = np.clip(x_sel + inner_cfg.init_noise_scale * noise[:, r, 0], self.lo, self.hi)
            z = self._ascend(theta, lam, x_sel, z0, inner_cfg)
            val = self._psi_rows(theta, lam, x_sel, z[:, None])[:, 0]
            if best_z is None:
                best_z, best_v = z, val
            else:
                better = (val > best_v) | ((val == best_v) & (z < best_z))
                best_z = np.where(better, z, best_z)
                best_v = np.where(better, val, best_v)
        radius = mu / (4.0 * self.inst.lip_value)
        normals, radii_u = _draw_ball(gens, est_cfg.samples, 1)
        offsets = _ball_offsets(normals, radii_u, radius, 1)[:, :, 0]
        draws = np.clip(best_z[:, None] + offsets, self.lo, self.hi)
        cand = np.concatenate([best_z[:, None], draws], axis=1)  # col 0 = center
        vals = self._psi_rows(theta, lam, x_sel, cand)
        mask = np.ones_like(vals, dtype=bool)
        if est_cfg.retain_improvers:
            mask[:, 1:] = vals[:, 1:] > best_v[:, None]
        else:
            mask[:, 0] = False
        w, lse = _masked_softmax(vals, mask, mu)
        g_theta, g_lam = self._grads_rows(theta, x_sel, cand)
        return lse, self._combine(w, g_theta, g_lam), (cand, mask)

    def sampled_values(self, y, mu, idx, points):
        theta, lam = self._theta_lam(y)
        idx = np.asarray(idx)
        cand, mask = points
        vals = self._psi_rows(theta, lam, self.x[idx], cand)
        _, lse = _masked_softmax(vals, mask, mu)
        return lse

    # -- exact inner maximum (closed form) --

    def _closed_form_batch(self, theta, lam, x_sel):
        lo, hi = self.lo, self.hi
        cands = []
        left = x_sel - (self.u / lam if lam > 0 else math.inf)
        cands.append(
            np.where(theta >= lo, np.clip(left, lo, min(theta, hi)), -np.inf)
        )
        cands.append(
            np.where(theta <= hi, np.clip(x_sel, max(theta, lo), hi), -np.inf)
        )
        cands.append(np.full_like(x_sel, min(max(theta, lo), hi)))
        z = np.stack(cands, axis=1)
        feasible = np.isfinite(z)
        vals = np.where(
            feasible, self._psi_rows(theta, lam, x_sel, np.where(feasible, z, lo)), -np.inf
        )
        return vals.max(axis=1)

    def primal_values(self, y, idx, inner_cfg, streams, k):
        theta, lam = self._theta_lam(y)
        return self._closed_form_batch(theta, lam, self.x[np.asarray(idx)])

    def exact_primal(self, y) -> float:
        """Mean exact inner maximum at y (no outer terms)."""
        theta, lam = self._theta_lam(y)
        return float(self._closed_form_batch(theta, lam, self.x).mean())

    def finite_supports(self) -> bool:
        return self.grid is not None


# --- multilayer perceptron ----------------------------------------------------


@dataclass
class MlpParams:
    """One-hidden-layer ReLU network; the flat layout is (w1, b1, w2, b2)."""

    w1: np.ndarray  # (hidden, q)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    @classmethod
    def from_flat(cls, theta: np.ndarray, q: int, hidden: int = 3) -> "MlpParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape[0] != mlp_param_count(q, hidden):
            raise DomainError(
                f"expected {mlp_param_count(q, hidden)} parameters, got {theta.shape[0]}"
            )
        w1 = theta[: hidden * q].reshape(hidden, q)
        b1 = theta[hidden * q : hidden * q + hidden]
        w2 = theta[hidden * q + hidden : hidden * q + 2 * hidden]
        return cls(w1=w1, b1=b1, w2=w2, b2=float(theta[-1]))


def mlp_param_count(q: int, hidden: int = 3) -> int:
    return hidden * q + 2 * hidden + 1


def init_mlp_params(q: int, rng: np.random.Generator, hidden: int = 3) -> MlpParams:
    """Fan-in uniform init, the default of mainstream deep learning layers."""
    k1 = 1.0 / math.sqrt(q)
    k2 = 1.0 / math.sqrt(hidden)
    return MlpParams(
        w1=rng.uniform(-k1, k1, (hidden, q)),
        b1=rng.uniform(-k1, k1, hidden),
        w2=rng.uniform(-k2, k2, hidden),
        b2=float(rng.uniform(-k2, k2)),
    )


def mlp_forward(params: MlpParams, A) -> np.ndarray | float:
    A2 = np.atleast_2d(np.asarray(A, dtype=float))
    h = np.maximum(A2 @ params.w1.T + params.b1, 0.0)
    out = h @ params.w2 + params.b2
    return out if np.ndim(A) == 2 else float(out[0])


def mlp_backward_input(params: MlpParams, A) -> np.ndarray:
    """Gradient of the output with respect to the input features.

    ReLU uses subgradient 0 at the kink.
    """
    A2 = np.atleast_2d(np.asarray(A, dtype=float))
    act = (A2 @ params.w1.T + params.b1) > 0.0
    out = (act * params.w2) @ params.w1
    return out if np.ndim(A) == 2 else out[0]


def mlp_backward_theta(params: MlpParams, a) -> np.ndarray:
    """Flat parameter gradient of the output at a single input row."""
    a = np.asarray(a, dtype=float).reshape(-1)
    pre = params.w1 @ a + params.b1
    act = pre > 0.0
    h = np.maximum(pre, 0.0)
    s = act * params.w2
    return np.concatenate([np.outer(s, a).ravel(), s, h, [1.0]])


def _mlp_grad_theta_rows(params: MlpParams, feats, coef):
    """Per-row coefficients times per-sample parameter gradients, summed per row.

    ``feats`` is (m, M, q), ``coef`` is (m, M); returns (m, theta_dim).
    """
    m, M, q = feats.shape
    flat = feats.reshape(m * M, q)
    pre = flat @ params.w1.T + params.b1
    act = (pre > 0.0).reshape(m, M, -1)
    h = np.maximum(pre, 0.0).reshape(m, M, -1)
    s = act * params.w2  # (m, M, hidden)
    dw1 = np.einsum("mj,mjh,mjq->mhq", coef, s, feats)
    db1 = np.einsum("mj,mjh->mh", coef, s)
    dw2 = np.einsum("mj,mjh->mh", coef, h)
    db2 = coef.sum(axis=1)
    hidden = params.b1.shape[0]
    return np.concatenate(
        [dw1.reshape(m, hidden * q), db1, dw2, db2[:, None]], axis=1
    )


# --- regression ----------------------------------------------------------------


def regression_instance(
    features: np.ndarray,
    targets: np.ndarray,
    delta: float = 10.0,
    order: int = 2,
    lambda_min: float = 0.0,
    hidden: int = 3,
    lambda_cap: float = 10.0,
    lip_value: float | None = None,
) -> WdroInstance:
    """Squared-loss MLP regression with transport on the features only.

    The label coordinate is frozen: its transport cost is infinite, so every
    candidate point keeps the anchor's label and the support interval there is
    degenerate.  The multiplier is projected to ``lambda >= lambda_min``
    (0 by default, since no lower bound makes the smoothed objective exact
    here).  The default declared ``lip_value`` is a coarse data-driven bound;
    override it to control the sampling radius directly.
    """
    A = np.atleast_2d(np.asarray(features, dtype=float))
    b = np.asarray(targets, dtype=float).reshape(-1)
    if A.shape[0] != b.shape[0] or A.shape[0] == 0:
        raise DomainError("features and targets must be nonempty and aligned")
    n, q = A.shape
    lo = A.min(axis=0)
    hi = A.max(axis=0)
    diam = float(np.linalg.norm(hi - lo))
    if lip_value is None:
        spread = float(b.max() - b.min()) if n > 1 else 1.0
        lip_value = max(1.0, 4.0 * (spread + 1.0) * (1.0 + diam)) + lambda_cap * max(diam, 1e-6)
    theta_dim = mlp_param_count(q, hidden)

    def loss(theta, Z):
        params = MlpParams.from_flat(theta, q, hidden)
        out = mlp_forward(params, Z[:, :q])
        return (out - Z[:, q]) ** 2

    def grad_theta_loss(theta, Z):
        params = MlpParams.from_flat(theta, q, hidden)
        feats = Z[:, :q][:, None, :]  # (k, 1, q)
        out = mlp_forward(params, Z[:, :q])
        coef = (2.0 * (out - Z[:, q]))[:, None]  # (k, 1)
        return _mlp_grad_theta_rows(params, feats, coef)

    def grad_z_loss(theta, Z):
        params = MlpParams.from_flat(theta, q, hidden)
        out = mlp_forward(params, Z[:, :q])
        gin = mlp_backward_input(params, Z[:, :q])
        g = 2.0 * (out - Z[:, q])[:, None] * gin
        return np.hstack([g, np.zeros((Z.shape[0], 1))])

    def transport(x, Z):
        return 0.5 * ((x[:q] - Z[:, :q]) ** 2).sum(axis=1)

    def grad_z_transport(x, Z):
        return np.hstack([Z[:, :q] - x[:q], np.zeros((Z.shape[0], 1))])

    return WdroInstance(
        kind="regression",
        data=np.hstack([A, b[:, None]]),
        delta=delta,
        order=order,
        lambda_min=lambda_min,
        theta_dim=theta_dim,
        theta_domain=Zero(),
        support_lower=np.concatenate([lo, [0.0]]),  # label bound pinned per anchor
        support_upper=np.concatenate([hi, [0.0]]),
        frozen_mask=np.concatenate([np.zeros(q, dtype=bool), [True]]),
        lip_value=lip_value,
        lip_grad=0.0,
        loss=loss,
        grad_theta_loss=grad_theta_loss,
        grad_z_loss=grad_z_loss,
        transport=transport,
        grad_z_transport=grad_z_transport,
        extra={"hidden": hidden, "q": q},
    )


class RegressionFamily(TermFamily):
    """Regression terms vectorized across anchors.

    Candidate points are carried as feature blocks only; the frozen label
    column always equals the anchor's, exactly as the boxed projection of the
    full-dimensional draw would make it.
    """

    def __init__(self, inst: WdroInstance, lambda_frozen: float | None = None):
        self.inst = inst
        self.lambda_frozen = lambda_frozen
        self.q = int(inst.extra["q"])
        self.hidden = int(inst.extra["hidden"])
        self.A = inst.data[:, : self.q].copy()
        self.b = inst.data[:, self.q].copy()
        self.lo = inst.support_lower[: self.q]
        self.hi = inst.support_upper[: self.q]
        self.workers = 1
        self._term_cache: dict[int, tuple] = {}

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def _pair(self, i: int):
        if i not in self._term_cache:
            self._term_cache[i] = _term_closures(self.inst, i, self.lambda_frozen)
        return self._term_cache[i]

    def term(self, i: int) -> MaxTermSpec:
        return self._pair(i)[0]

    def grad_z_fn(self, i: int):
        return self._pair(i)[1]

    def _params_lam(self, y):
        y = np.asarray(y, dtype=float)
        if self.lambda_frozen is None:
            return MlpParams.from_flat(y[:-1], self.q, self.hidden), float(y[-1])
        return MlpParams.from_flat(y, self.q, self.hidden), float(self.lambda_frozen)

    def _psi_blocks(self, params, lam, feats, a_sel, b_sel):
        """psi over (m, M, q) feature blocks; returns values (m, M)."""
        m, M, q = feats.shape
        out = mlp_forward(params, feats.reshape(m * M, q)).reshape(m, M)
        d = 0.5 * ((feats - a_sel[:, None, :]) ** 2).sum(axis=2)
        return (out - b_sel[:, None]) ** 2 - lam * d, out, d

    def exact_estimates(self, y, mu, idx):
        raise ContractError("regression has a continuous sample space; use sampling")

    def _ascend(self, params, lam, a_sel, b_sel, z0, cfg: InnerMaxConfig):
        z = z0.copy()
        for _ in range(cfg.iterations):
            out = mlp_forward(params, z)
            gin = mlp_backward_input(params, z)
            gz = 2.0 * (out - b_sel)[:, None] * gin - lam * (z - a_sel)
            z = np.clip(z + cfg.step_size * gz, self.lo, self.hi)
        return z

    def _best_centers(self, params, lam, a_sel, b_sel, noise, cfg):
        best_z = best_v = None
        for r in range(cfg.restarts):
            z0 = np.clip(a_sel + cfg.init_noise_scale * noise[:, r, : self.q], self.lo, self.hi)
            z = self._ascend(params, lam, a_sel, b_sel, z0, cfg)
            out = mlp_forward(params, z)
            val = (out - b_sel) ** 2 - lam * 0.5 * ((z - a_sel) ** 2).sum(axis=1)
            if best_z is None:
                best_z, best_v = z, val
            else:
                better = val > best_v
                eq = val == best_v
                for col in range(self.q):  # lexicographic tie-break, rarely hit
                    better |= eq & (z[:, col] < best_z[:, col])
                    eq &= z[:, col] == best_z[:, col]
                best_z = np.where(better[:, None], z, best_z)
                best_v = np.where(better, val, best_v)
        return best_z, best_v

    def inner_centers(self, y, idx, inner_cfg, streams, k):
        params, lam = self._params_lam(y)
        idx = np.asarray(idx)
        a_sel, b_sel = self.A[idx], self.b[idx]
        dim = self.q + 1  # draws cover the frozen label coord too
        noise, _ = _draw_ascent_noise(streams, "inner", k, idx, inner_cfg.restarts, dim)
        z, v = self._best_centers(params, lam, a_sel, b_sel, noise, inner_cfg)
        return np.hstack([z, b_sel[:, None]]), v

    def center_gradients(self, y, centers, idx):
        params, lam = self._params_lam(y)
        idx = np.asarray(idx)
        a_sel, b_sel = self.A[idx], self.b[idx]
        feats = np.asarray(centers, dtype=float)[:, : self.q][:, None, :]
        vals, out, d = self._psi_blocks(params, lam, feats, a_sel, b_sel)
        coef = 2.0 * (out - b_sel[:, None])
        g_theta = _mlp_grad_theta_rows(params, feats, coef)
        if self.lambda_frozen is not None:
            return vals[:, 0], g_theta
        return vals[:, 0], np.hstack([g_theta, -d])

    def sampled_estimates(self, y, mu, idx, est_cfg, inner_cfg, streams, k):
        params, lam = self._params_lam(y)
        idx = np.asarray(idx)
        a_sel, b_sel = self.A[idx], self.b[idx]
        dim = self.q + 1
        noise, gens = _draw_ascent_noise(streams, "term", k, idx, inner_cfg.restarts, dim)
        centers, center_vals = self._best_centers(params, lam, a_sel, b_sel, noise, inner_cfg)
        radius = mu / (4.0 * self.inst.lip_value)
        normals, radii_u = _draw_ball(gens, est_cfg.samples, dim)
        offsets = _ball_offsets(normals, radii_u, radius, dim)[:, :, : self.q]
        draws = np.clip(centers[:, None, :] + offsets, self.lo, self.hi)
        feats = np.concatenate([centers[:, None, :], draws], axis=1)  # col 0 = center
        vals, out, d = self._psi_blocks(params, lam, feats, a_sel, b_sel)
        mask = np.ones_like(vals, dtype=bool)
        if est_cfg.retain_improvers:
            mask[:, 1:] = vals[:, 1:] > center_vals[:, None]
        else:
            mask[:, 0] = False
        w, lse = _masked_softmax(vals, mask, mu)
        coef = w * 2.0 * (out - b_sel[:, None])
        g_theta = _mlp_grad_theta_rows(params, feats, coef)
        if self.lambda_frozen is None:
            grads = np.hstack([g_theta, -(w * d).sum(axis=1)[:, None]])
        else:
            grads = g_theta
        return lse, grads, (feats, mask)

    def sampled_values(self, y, mu, idx, points):
        params, lam = self._params_lam(y)
        idx = np.asarray(idx)
        feats, mask = points
        vals, _, _ = self._psi_blocks(params, lam, feats, self.A[idx], self.b[idx])
        _, lse = _masked_softmax(vals, mask, mu)
        return lse

    def primal_values(self, y, idx, inner_cfg, streams, k):
        params, lam = self._params_lam(y)
        idx = np.asarray(idx)
        a_sel, b_sel = self.A[idx], self.b[idx]
        dim = self.q + 1
        noise, _ = _draw_ascent_noise(streams, "primal", k, idx, inner_cfg.restarts, dim)
        _, v = self._best_centers(params, lam, a_sel, b_sel, noise, inner_cfg)
        return v

    def finite_supports(self) -> bool:
        return False

    def predict(self, y, A) -> np.ndarray:
        params, _ = self._params_lam(y)
        return np.asarray(mlp_forward(params, np.atleast_2d(A)))


def evaluate_perturbed(
    predict: Callable,
    features: np.ndarray,
    targets: np.ndarray,
    upsilon: float,
    rng: np.random.Generator,
) -> float:
    """RMSE after one multiplicative-scale Laplace perturbation per test row.

    Each row moves by ``upsilon * omega * |row|`` with omega drawn i.i.d.
    Laplace(0,1) per coordinate; ``upsilon = 0`` reduces to the clean RMSE.
    """
    A = np.atleast_2d(np.asarray(features, dtype=float))
    b = np.asarray(targets, dtype=float).reshape(-1)
    if upsilon < 0:
        raise DomainError("perturbation scale must be nonnegative")
    if upsilon == 0:
        shifted = A
    else:
        omega = rng.laplace(0.0, 1.0, A.shape)
        shifted = A + upsilon * omega * np.linalg.norm(A, axis=1, keepdims=True)
    pred = np.asarray(predict(shifted), dtype=float).reshape(-1)
    return float(np.sqrt(np.mean((pred - b) ** 2)))
