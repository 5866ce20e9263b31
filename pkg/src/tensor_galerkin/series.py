"""Truncated Taylor-series arithmetic for factor evaluation.

Spatial derivatives of the per-dimension factors are propagated through the
sub-networks in Taylor (jet) form: an array ``c`` with leading axis of length
K+1 holds scaled coefficients ``c[m] = f^(m)(x) / m!`` at every node.  Affine
layers act order-by-order; tanh uses the recurrence induced by
``y' = (1 - y^2) z'``, which is exact to arbitrary order and avoids nested
finite differences entirely.

Reverse counterparts accumulate adjoints of the same recurrences so parameter
Jacobians of the x-derivatives come out of a single backward sweep.  Adjoint
arrays carry one extra leading seed axis: primal ``(K+1, Q, W)``, adjoint
``(S, K+1, Q, W)``.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "identity_input_series",
    "periodic_input_series",
    "envelope_series",
    "affine_series",
    "tanh_series",
    "tanh_series_reverse",
    "envelope_apply",
    "envelope_apply_reverse",
    "derivatives_from_series",
]


def identity_input_series(x: np.ndarray, max_order: int) -> np.ndarray:
    """Jet of the identity map: (K+1, Q, 1)."""
    out = np.zeros((max_order + 1, x.size, 1))
    out[0, :, 0] = x
    if max_order >= 1:
        out[1, :, 0] = 1.0
    return out


def periodic_input_series(x: np.ndarray, max_order: int, a: float, b: float) -> np.ndarray:
    """Jet of x -> a*[cos(bx), sin(bx)]: (K+1, Q, 2).

    d^m/dx^m of cos(bx) is b^m cos(bx + m pi/2); same phase shift for sin.
    """
    out = np.empty((max_order + 1, x.size, 2))
    fact = 1.0
    for m in range(max_order + 1):
        if m > 0:
            fact *= m
        scale = a * b**m / fact
        phase = m % 4
        c, s = np.cos(b * x), np.sin(b * x)
        if phase == 0:
            cm, sm = c, s
        elif phase == 1:
            cm, sm = -s, c
        elif phase == 2:
            cm, sm = -c, -s
        else:
            cm, sm = s, -c
        out[m, :, 0] = scale * cm
        out[m, :, 1] = scale * sm
    return out


def envelope_series(x: np.ndarray, max_order: int, lo: float, hi: float) -> np.ndarray:
    """Jet of the boundary cutoff g(x) = 1 - t(x)^2, t = (2x - lo - hi)/(hi - lo).

    Vanishes at both endpoints; reduces to 1 - x^2 on [-1, 1].  Shape (K+1, Q).
    """
    alpha = 2.0 / (hi - lo)
    t = (2.0 * x - lo - hi) / (hi - lo)
    out = np.zeros((max_order + 1, x.size))
    out[0] = 1.0 - t * t
    if max_order >= 1:
        out[1] = -2.0 * t * alpha
    if max_order >= 2:
        out[2] = -(alpha * alpha)  # g''/2!
    return out


def affine_series(h: np.ndarray, weight: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """Affine layer applied order-by-order; bias enters order 0 only."""
    z = h @ weight.T
    if bias is not None:
        z[0] += bias
    return z


def tanh_series(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Propagate a jet through tanh.

    Returns (y, s) with s the jet of 1 - y^2; both are needed by the reverse
    sweep and s[..0..] doubles as tanh' for plain backprop.
    """
    K = z.shape[0] - 1
    y = np.empty_like(z)
    s = np.empty_like(z)
    y[0] = np.tanh(z[0])
    s[0] = 1.0 - y[0] * y[0]
    for m in range(1, K + 1):
        acc = np.zeros_like(z[0])
        for k in range(1, m + 1):
            acc += k * z[k] * s[m - k]
        y[m] = acc / m
        acc = np.zeros_like(z[0])
        for a in range(m + 1):
            acc += y[a] * y[m - a]
        s[m] = -acc
    return y, s


def tanh_series_reverse(
    ybar: np.ndarray, z: np.ndarray, y: np.ndarray, s: np.ndarray
) -> np.ndarray:
    """Adjoint of :func:`tanh_series`.

    ``ybar`` has a leading seed axis; it is consumed (mutated).  Returns the
    adjoint of ``z`` with the same seed axis.
    """
    K = z.shape[0] - 1
    zbar = np.zeros_like(ybar)
    sbar = np.zeros_like(ybar)
    for m in range(K, 0, -1):
        ym_bar = ybar[:, m]
        for k in range(1, m + 1):
            zbar[:, k] += (k / m) * s[m - k] * ym_bar
            sbar[:, m - k] += (k / m) * z[k] * ym_bar
        j = m - 1
        sj_bar = sbar[:, j]
        for a in range(j + 1):
            ybar[:, a] += -2.0 * y[j - a] * sj_bar
    zbar[:, 0] += s[0] * ybar[:, 0]
    return zbar


def envelope_apply(u: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Cauchy product of an output jet (K+1, Q, p) with the cutoff jet (K+1, Q)."""
    K = u.shape[0] - 1
    v = np.zeros_like(u)
    for m in range(K + 1):
        for k in range(min(m, 2) + 1):
            v[m] += g[k][:, None] * u[m - k]
    return v


def envelope_apply_reverse(vbar: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`envelope_apply` (g is constant w.r.t. parameters)."""
    K = vbar.shape[1] - 1
    ubar = np.zeros_like(vbar)
    for m in range(K + 1):
        for k in range(min(m, 2) + 1):
            ubar[:, m - k] += g[k][:, None] * vbar[:, m]
    return ubar


def derivatives_from_series(c: np.ndarray) -> np.ndarray:
    """Convert scaled jet coefficients to plain derivatives: f^(m) = m! c[m]."""
    out = c.copy()
    fact = 1.0
    for m in range(1, c.shape[0]):
        fact *= m
        out[m] *= fact
    return out
