"""Parameter derivatives of factor values and their x-derivatives.

For a masked weight w in dimension k the Galerkin assembly needs
d(d^m f_kj / dx^m)/dw at every node of dimension k's rule.  These come from a
reverse sweep through the stored jet forward pass: one seed per (rank, order)
pair, batched over nodes, so each sub-network is traversed once per stage
evaluation regardless of how many parameters are selected.

The same sweep in "summed" mode contracts the per-node gradients against a
cotangent field in a single pass; that is the work-horse of the initial fit,
where only sum_q w_q cot[q, j] * d f_kj(x_q)/dw is needed.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from . import series
from .quadrature import QuadratureRule1D
from .tnn import ENVELOPE, ParamMask, TnnParams, subnet_forward

__all__ = ["JacobianTable", "factor_param_jacobian", "subnet_param_vjp"]


@dataclass(frozen=True)
class JacobianTable:
    """Per-dimension dense arrays (masked param, rank, node, x-order).

    ``entries[k]`` has shape (n_k, p, Q_k, orders+1) where n_k is the number
    of selected parameters in sub-network k; the order axis holds plain
    derivatives, matching :class:`FactorTable`.
    """

    entries: tuple[np.ndarray, ...]
    orders: int
    mask: ParamMask
    rules: tuple[QuadratureRule1D, ...]


def _reverse_sweep(params: TnnParams, dim: int, stored, vbar: np.ndarray, per_node: bool):
    """Backpropagate an adjoint of the factor jet to parameter space.

    vbar: (S, K+1, Q, p).  Returns per-subnet gradients, shape
    (S, Q, per_subnet) when per_node else (per_subnet,) with the seed and node
    axes contracted away (S must then be 1).
    """
    arch = params.arch
    layout = params.layout
    n_hidden = len(arch.hidden)
    if arch.input_map.kind == ENVELOPE:
        ubar = series.envelope_apply_reverse(vbar, stored["g"])
    else:
        ubar = vbar
    S, _, Q, _ = ubar.shape
    if per_node:
        grads = np.zeros((S, Q, layout.per_subnet))
    else:
        grads = np.zeros(layout.per_subnet)

    def put(sl: slice, value):
        lo = sl.start - dim * layout.per_subnet
        hi = sl.stop - dim * layout.per_subnet
        if per_node:
            grads[:, :, lo:hi] = value.reshape(S, Q, -1)
        else:
            grads[lo:hi] = value.ravel()

    h_last = stored["y"][-1] if n_hidden else stored["x"]
    w_out = params.weight(dim, n_hidden)
    if per_node:
        put(layout.weight_slice(dim, n_hidden), np.einsum("smqj,mqh->sqjh", ubar, h_last))
    else:
        put(layout.weight_slice(dim, n_hidden), np.einsum("smqj,mqh->jh", ubar, h_last))
    hbar = np.einsum("smqj,jh->smqh", ubar, w_out)

    for l in range(n_hidden - 1, -1, -1):
        zbar = series.tanh_series_reverse(hbar, stored["z"][l], stored["y"][l], stored["s"][l])
        h_prev = stored["y"][l - 1] if l > 0 else stored["x"]
        if per_node:
            put(layout.weight_slice(dim, l), np.einsum("smqo,mqi->sqoi", zbar, h_prev))
            put(layout.bias_slice(dim, l), zbar[:, 0])
        else:
            put(layout.weight_slice(dim, l), np.einsum("smqo,mqi->oi", zbar, h_prev))
            put(layout.bias_slice(dim, l), zbar[:, 0].sum(axis=(0, 1)))
        hbar = np.einsum("smqo,oi->smqi", zbar, params.weight(dim, l))
    return grads


def factor_param_jacobian(
    params: TnnParams,
    mask: ParamMask,
    rules: tuple[QuadratureRule1D, ...],
    x_order: int,
) -> JacobianTable:
    """Exact d(d^m f_kj/dx_k^m)/dw at the nodes for every selected w."""
    if x_order > 2:
        raise ValueError(f"parameter Jacobians support x-orders 0..2, got {x_order}")
    if x_order < 0:
        raise ValueError("x_order must be >= 0")
    arch = params.arch
    layout = params.layout
    if mask.selected.shape != (layout.total,):
        raise ValueError("mask does not match parameter layout")
    if len(rules) != arch.d:
        raise ValueError("need one quadrature rule per dimension")
    p, K = arch.p, x_order
    entries = []
    for dim in range(arch.d):
        local = mask.selected[layout.subnet_slice(dim)]
        n_sel = int(local.sum())
        Q = rules[dim].size
        if n_sel == 0:
            entries.append(np.zeros((0, p, Q, K + 1)))
            continue
        _, stored = subnet_forward(params, dim, rules[dim].nodes, K, keep=True)
        S = p * (K + 1)
        vbar = np.zeros((S, K + 1, Q, p))
        for j in range(p):
            for m in range(K + 1):
                # seed scaled by m! so the sweep emits plain derivatives
                vbar[j * (K + 1) + m, m, :, j] = factorial(m)
        grads = _reverse_sweep(params, dim, stored, vbar, per_node=True)
        sel = grads[:, :, local]  # (S, Q, n_sel)
        table = sel.transpose(2, 0, 1).reshape(n_sel, p, K + 1, Q).transpose(0, 1, 3, 2)
        entries.append(np.ascontiguousarray(table))
    return JacobianTable(tuple(entries), K, mask, tuple(rules))


def subnet_param_vjp(
    params: TnnParams, dim: int, x: np.ndarray, cot: np.ndarray
) -> np.ndarray:
    """Gradient of sum_{q,j} cot[q,j] * f_dim,j(x_q) w.r.t. one sub-network.

    Returns the per-subnet flat gradient (length layout.per_subnet).
    """
    _, stored = subnet_forward(params, dim, x, 0, keep=True)
    vbar = np.asarray(cot)[None, None, :, :]
    return _reverse_sweep(params, dim, stored, vbar, per_node=False)
