"""Rank-structured fields sampled on per-dimension node sets.

A separable field is sum_s c_s prod_i v[s,i,:] with one value vector per term
and dimension.  Everything the solver integrates (the PDE right side, initial
data, analytic references) is kept in this form, so all d-dimensional
integrals reduce to products of 1D quadratures no matter how large d is.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .quadrature import QuadratureRule1D

__all__ = ["SeparableField", "set_deterministic", "deterministic_enabled"]

_DETERMINISTIC = True


def set_deterministic(flag: bool):
    """Fixed-order (exactly rounded) reductions in the norm/inner sums.

    The heavy linear algebra is already reproducible run-to-run on one
    machine; this pins the final term reductions of the reported metrics so
    they cannot depend on summation order at all.
    """
    global _DETERMINISTIC
    _DETERMINISTIC = bool(flag)


def deterministic_enabled() -> bool:
    return _DETERMINISTIC


def _check_same_rules(a: "SeparableField", b: "SeparableField"):
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    for ra, rb in zip(a.rules, b.rules):
        if ra.size != rb.size or ra.interval != rb.interval:
            raise ValueError("fields are sampled on different quadrature rules")


@dataclass(frozen=True)
class SeparableField:
    """coeffs: (r,); values[i]: (r, Q_i) node samples of the i-th 1D factors."""

    coeffs: np.ndarray
    values: tuple[np.ndarray, ...]
    rules: tuple[QuadratureRule1D, ...]

    def __post_init__(self):
        coeffs = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "values", tuple(np.asarray(v, dtype=float) for v in self.values))
        r = coeffs.shape[0]
        if len(self.values) != len(self.rules):
            raise ValueError("need one value block per dimension")
        for v, rule in zip(self.values, self.rules):
            if v.shape != (r, rule.size):
                raise ValueError(f"value block shape {v.shape} != ({r}, {rule.size})")

    @property
    def rank(self) -> int:
        return int(self.coeffs.shape[0])

    @property
    def d(self) -> int:
        return len(self.values)

    @classmethod
    def from_univariate(
        cls,
        fns: Sequence[Callable[[np.ndarray], np.ndarray]],
        rules: Sequence[QuadratureRule1D],
        coeff: float = 1.0,
    ) -> "SeparableField":
        """Rank-1 field prod_i fns[i](x_i) sampled at the rules' nodes."""
        vals = tuple(np.asarray(f(r.nodes), dtype=float)[None, :] for f, r in zip(fns, rules))
        return cls(np.array([coeff]), vals, tuple(rules))

    @classmethod
    def zero(cls, rules: Sequence[QuadratureRule1D]) -> "SeparableField":
        vals = tuple(np.zeros((1, r.size)) for r in rules)
        return cls(np.array([0.0]), vals, tuple(rules))

    def eval_at(self, idx: Sequence[int]) -> float:
        """Value at the tensor grid point selected by one node index per dim."""
        prod = self.coeffs.copy()
        for i, q in enumerate(idx):
            prod = prod * self.values[i][:, q]
        return float(prod.sum())

    def eval_at_many(self, idx: np.ndarray) -> np.ndarray:
        """Values at a batch of grid multi-indices, idx of shape (n, d)."""
        idx = np.asarray(idx, dtype=int)
        prod = np.broadcast_to(self.coeffs, (idx.shape[0], self.rank)).copy()
        for i in range(self.d):
            prod *= self.values[i][:, idx[:, i]].T
        return prod.sum(axis=1)

    def scale(self, alpha: float) -> "SeparableField":
        return SeparableField(self.coeffs * alpha, self.values, self.rules)

    def __add__(self, other: "SeparableField") -> "SeparableField":
        _check_same_rules(self, other)
        coeffs = np.concatenate([self.coeffs, other.coeffs])
        vals = tuple(np.concatenate([a, b], axis=0) for a, b in zip(self.values, other.values))
        return SeparableField(coeffs, vals, self.rules)

    def __sub__(self, other: "SeparableField") -> "SeparableField":
        return self + other.scale(-1.0)

    def product(self, other: "SeparableField") -> "SeparableField":
        """Pointwise product; rank multiplies (closure under products)."""
        _check_same_rules(self, other)
        coeffs = np.outer(self.coeffs, other.coeffs).ravel()
        vals = []
        for a, b in zip(self.values, other.values):
            vals.append((a[:, None, :] * b[None, :, :]).reshape(-1, a.shape[1]))
        return SeparableField(coeffs, tuple(vals), self.rules)

    def inner(self, other: "SeparableField") -> float:
        """L2 inner product integral((self)(other)) by factorized quadrature."""
        _check_same_rules(self, other)
        acc = np.outer(self.coeffs, other.coeffs)
        for a, b, rule in zip(self.values, other.values, self.rules):
            acc *= (a * rule.weights) @ b.T
        if _DETERMINISTIC:
            return math.fsum(acc.ravel())
        return float(acc.sum())

    def norm2(self) -> float:
        return self.inner(self)

    def norm(self) -> float:
        return float(np.sqrt(max(self.norm2(), 0.0)))
