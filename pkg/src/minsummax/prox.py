"""Proximal maps for the outer regularizer and Euclidean projections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ContractError, DomainError
from .smoothing import Ball, Box, FiniteSet, SupportSet


@dataclass(frozen=True)
class Zero:
    """No regularization; the prox is the identity."""


@dataclass(frozen=True)
class IndicatorBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise DomainError("indicator box needs lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


@dataclass(frozen=True)
class IndicatorHalfLineProduct:
    """Coordinatewise lower bounds, optionally capped above.

    ``upper=None`` leaves the block unbounded above; passing a finite cap
    restores compactness when a bounded domain is wanted.
    """

    lower: np.ndarray
    upper: np.ndarray | None = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "lower", lo)
        if self.upper is not None:
            hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
            if hi.shape != lo.shape or np.any(lo > hi):
                raise DomainError("half-line cap must dominate the lower bound")
            object.__setattr__(self, "upper", hi)


@dataclass(frozen=True)
class L1:
    weight: float

    def __post_init__(self):
        if self.weight < 0:
            raise DomainError("l1 weight must be nonnegative")


@dataclass(frozen=True)
class Product:
    """Block-separable regularizer; blocks partition the coordinates in order."""

    blocks: tuple  # of (spec, width) pairs

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        for spec, width in self.blocks:
            if int(width) < 1:
                raise DomainError("product block width must be >= 1")


RegularizerSpec = Union[Zero, IndicatorBox, IndicatorHalfLineProduct, L1, Product]


def prox(reg: RegularizerSpec, v: np.ndarray, alpha: float) -> np.ndarray:
    """Proximal map of ``alpha * reg`` at ``v``.

    Indicators project (independently of ``alpha``); L1 soft-thresholds at
    ``alpha * weight``; products apply blockwise.
    """
    if not (alpha > 0):
        raise DomainError("prox stepsize must be positive")
    v = np.asarray(v, dtype=float)
    if isinstance(reg, Zero):
        return v.copy()
    if isinstance(reg, IndicatorBox):
        _check_block(reg.lower.shape[0], v)
        return np.clip(v, reg.lower, reg.upper)
    if isinstance(reg, IndicatorHalfLineProduct):
        _check_block(reg.lower.shape[0], v)
        out = np.maximum(v, reg.lower)
        if reg.upper is not None:
            out = np.minimum(out, reg.upper)
        return out
    if isinstance(reg, L1):
        t = alpha * reg.weight
        return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    if isinstance(reg, Product):
        widths = [int(w) for _, w in reg.blocks]
        if sum(widths) != v.shape[0]:
            raise DomainError(
                f"product blocks cover {sum(widths)} coordinates, vector has {v.shape[0]}"
            )
        parts = []
        start = 0
        for (spec, _), w in zip(reg.blocks, widths):
            parts.append(prox(spec, v[start : start + w], alpha))
            start += w
        return np.concatenate(parts)
    raise ContractError(f"unknown regularizer {type(reg).__name__}")


def _check_block(width: int, v: np.ndarray):
    if v.shape[0] != width:
        raise DomainError(f"regularizer has width {width}, vector has {v.shape[0]}")


def reg_value(reg: RegularizerSpec, v: np.ndarray, tol: float = 1e-9) -> float:
    """Value of the regularizer at ``v``; inf outside an indicator's set."""
    v = np.asarray(v, dtype=float)
    if isinstance(reg, Zero):
        return 0.0
    if isinstance(reg, IndicatorBox):
        ok = np.all(v >= reg.lower - tol) and np.all(v <= reg.upper + tol)
        return 0.0 if ok else np.inf
    if isinstance(reg, IndicatorHalfLineProduct):
        ok = np.all(v >= reg.lower - tol)
        if reg.upper is not None:
            ok = ok and np.all(v <= reg.upper + tol)
        return 0.0 if ok else np.inf
    if isinstance(reg, L1):
        return reg.weight * float(np.abs(v).sum())
    if isinstance(reg, Product):
        total = 0.0
        start = 0
        for spec, w in reg.blocks:
            total += reg_value(spec, v[start : start + int(w)], tol)
            start += int(w)
        return total
    raise ContractError(f"unknown regularizer {type(reg).__name__}")


def project(support: SupportSet, v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto a box or ball.

    Finite sets are rejected: nearest-point snapping is never what the
    calling code wants there, so asking for it is a bug.
    """
    v = np.asarray(v, dtype=float)
    if isinstance(support, Box):
        return np.clip(v, support.lower, support.upper)
    if isinstance(support, Ball):
        d = v - support.center
        norm = float(np.linalg.norm(d))
        if norm <= support.radius:
            return v.copy()
        return support.center + d * (support.radius / norm)
    if isinstance(support, FiniteSet):
        raise ContractError("projection onto a finite set is not defined")
    raise ContractError(f"unknown support {type(support).__name__}")
