"""1D Gauss-Legendre rules and composite panel rules.

Every integral in the solver is a tensor product of 1D quadratures, so this
module is deliberately minimal: a rule is a pair of node/weight arrays tied to
an interval, and integration is a weighted dot product.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = ["QuadratureRule1D", "gauss_legendre", "composite_rule", "integrate_1d"]


@dataclass(frozen=True)
class QuadratureRule1D:
    """Nodes and positive weights on an interval.

    Attributes
    ----------
    nodes : ndarray
        Strictly increasing abscissae, all interior to ``interval``.
    weights : ndarray
        Positive weights; they sum to the interval length.
    interval : (float, float)
        Endpoints (lo, hi) with lo < hi.
    """

    nodes: np.ndarray
    weights: np.ndarray
    interval: tuple[float, float]

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def length(self) -> float:
        return self.interval[1] - self.interval[0]


@lru_cache(maxsize=None)
def _gauss_legendre_ref(n: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    # Newton iteration on P_n starting from the Chebyshev-like guess.
    # Converges in a handful of sweeps for any n; no table limit.
    def legendre_and_derivative(x):
        p0 = np.ones_like(x)
        p1 = x.copy()
        for m in range(2, n + 1):
            p0, p1 = p1, ((2 * m - 1) * x * p1 - (m - 1) * p0) / m
        dp = n * (x * p1 - p0) / (x * x - 1.0)
        return p1, dp

    k = np.arange(1, n + 1)
    x = np.cos(np.pi * (k - 0.25) / (n + 0.5))
    for _ in range(100):
        pn, dp = legendre_and_derivative(x)
        dx = pn / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    _, dp = legendre_and_derivative(x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    # enforce exact symmetry of the rule about 0
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    order = np.argsort(x)
    return tuple(x[order]), tuple(w[order])


def gauss_legendre(n: int) -> QuadratureRule1D:
    """n-point Gauss-Legendre rule on [-1, 1].

    Exact for polynomials of degree <= 2n - 1.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"point count must be a positive integer, got {n!r}")
    if n == 1:
        return QuadratureRule1D(np.array([0.0]), np.array([2.0]), (-1.0, 1.0))
    x, w = _gauss_legendre_ref(int(n))
    return QuadratureRule1D(np.array(x), np.array(w), (-1.0, 1.0))


def composite_rule(
    base: QuadratureRule1D, panels: int, interval: tuple[float, float]
) -> QuadratureRule1D:
    """Tile an affinely mapped copy of ``base`` over equal panels of ``interval``."""
    lo, hi = float(interval[0]), float(interval[1])
    if lo >= hi:
        raise ValueError(f"interval must satisfy lo < hi, got ({lo}, {hi})")
    if not isinstance(panels, (int, np.integer)) or panels < 1:
        raise ValueError(f"panel count must be a positive integer, got {panels!r}")
    blo, bhi = base.interval
    scale = (hi - lo) / (panels * (bhi - blo))
    nodes = []
    weights = []
    for k in range(panels):
        a = lo + k * (hi - lo) / panels
        nodes.append(a + (base.nodes - blo) * scale)
        weights.append(base.weights * scale)
    return QuadratureRule1D(np.concatenate(nodes), np.concatenate(weights), (lo, hi))


def integrate_1d(values: np.ndarray, rule: QuadratureRule1D) -> float:
    """Weighted sum of node values: sum_q w[q] * values[q]."""
    values = np.asarray(values)
    if values.shape != rule.nodes.shape:
        raise ValueError(
            f"values have shape {values.shape}, rule has {rule.nodes.shape[0]} nodes"
        )
    return float(np.dot(rule.weights, values))
