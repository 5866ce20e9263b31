"""Rank-p tensor network of per-dimension MLPs.

The solution ansatz is u(x) = sum_j prod_i f_ij(x_i): each spatial dimension
owns a small feedforward sub-network whose p outputs are the factor values
f_i1..f_ip.  Sub-networks share one architecture; the output layer is linear
with no bias so a factor can be exactly zero.

Parameters live in a single flat float64 vector with a deterministic layout
(dimension-major, then layer, row-major within a matrix, bias after its
matrix).  Masks, flattening and the Galerkin assembly all index into that
layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import series
from .quadrature import QuadratureRule1D

__all__ = [
    "InputMap",
    "TnnArchitecture",
    "TnnParams",
    "ParamMask",
    "FactorTable",
    "ParamLayout",
    "init_network",
    "eval_point",
    "eval_points",
    "eval_factors",
    "flatten",
    "unflatten_add",
    "full_mask",
    "mask_from_flags",
]

IDENTITY = "identity"
PERIODIC = "periodic_embedding"
ENVELOPE = "dirichlet_envelope"


@dataclass(frozen=True)
class InputMap:
    """First-layer input transform; selects the boundary treatment.

    ``periodic_embedding`` feeds a*[cos(bx), sin(bx)] to the sub-network so
    every factor is periodic by construction.  ``dirichlet_envelope`` feeds x
    and multiplies the sub-network output by a cutoff vanishing at the domain
    endpoints.  ``identity`` feeds x unchanged.
    """

    kind: str = IDENTITY
    a: float = 1.0
    b: float | None = None

    def __post_init__(self):
        if self.kind not in (IDENTITY, PERIODIC, ENVELOPE):
            raise ValueError(f"unknown input map {self.kind!r}")

    @property
    def width(self) -> int:
        return 2 if self.kind == PERIODIC else 1

    def frequency(self, interval: tuple[float, float]) -> float:
        """Embedding frequency; defaults to one period per domain length."""
        if self.b is not None:
            return self.b
        return 2.0 * np.pi / (interval[1] - interval[0])


@dataclass(frozen=True)
class TnnArchitecture:
    d: int
    p: int
    hidden: tuple[int, ...]
    domain: tuple[tuple[float, float], ...]
    input_map: InputMap = field(default_factory=InputMap)
    activation: str = "tanh"

    def __post_init__(self):
        if self.d < 1 or self.p < 1:
            raise ValueError("d and p must be >= 1")
        if not self.hidden or any(w < 1 for w in self.hidden):
            raise ValueError("hidden widths must all be >= 1")
        if len(self.domain) != self.d:
            raise ValueError("domain must give one interval per dimension")
        for lo, hi in self.domain:
            if not lo < hi:
                raise ValueError(f"bad interval ({lo}, {hi})")
        if self.activation != "tanh":
            raise ValueError("only tanh sub-networks are supported")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        object.__setattr__(
            self, "domain", tuple((float(lo), float(hi)) for lo, hi in self.domain)
        )

    @property
    def input_width(self) -> int:
        return self.input_map.width

    def layer_dims(self) -> list[tuple[int, int]]:
        """(out, in) for hidden layers, then the linear output layer."""
        widths = [self.input_width, *self.hidden]
        dims = [(widths[i + 1], widths[i]) for i in range(len(self.hidden))]
        dims.append((self.p, self.hidden[-1]))
        return dims


class ParamLayout:
    """Offsets of every weight matrix and bias vector in the flat vector."""

    def __init__(self, arch: TnnArchitecture):
        self.arch = arch
        dims = arch.layer_dims()
        self.n_hidden = len(arch.hidden)
        self.slices: list[list[tuple[slice, slice | None]]] = []
        off = 0
        per_dim = []
        for l, (nout, nin) in enumerate(dims):
            wsl = slice(off, off + nout * nin)
            off += nout * nin
            if l < self.n_hidden:  # output layer carries no bias
                bsl = slice(off, off + nout)
                off += nout
            else:
                bsl = None
            per_dim.append((wsl, bsl))
        self.per_subnet = off
        self.layer_dims_list = dims
        self.total = off * arch.d
        self.slices = [per_dim]

    def weight_slice(self, dim: int, layer: int) -> slice:
        wsl, _ = self.slices[0][layer]
        base = dim * self.per_subnet
        return slice(wsl.start + base, wsl.stop + base)

    def bias_slice(self, dim: int, layer: int) -> slice | None:
        _, bsl = self.slices[0][layer]
        if bsl is None:
            return None
        base = dim * self.per_subnet
        return slice(bsl.start + base, bsl.stop + base)

    def subnet_slice(self, dim: int) -> slice:
        return slice(dim * self.per_subnet, (dim + 1) * self.per_subnet)

    def category_flags(self) -> dict[str, np.ndarray]:
        """Boolean flags (per subnet, length per_subnet) for mask strategies."""
        first = np.zeros(self.per_subnet, dtype=bool)
        bias = np.zeros(self.per_subnet, dtype=bool)
        wsl, bsl = self.slices[0][0]
        first[wsl] = True
        if bsl is not None:
            first[bsl] = True
        for l in range(self.n_hidden):
            _, b = self.slices[0][l]
            if b is not None:
                bias[b] = True
        return {"first_layer": first, "bias": bias}


@dataclass(frozen=True)
class TnnParams:
    arch: TnnArchitecture
    flat: np.ndarray

    def __post_init__(self):
        layout = ParamLayout(self.arch)
        if self.flat.shape != (layout.total,):
            raise ValueError(
                f"parameter vector has length {self.flat.shape}, expected {layout.total}"
            )
        object.__setattr__(self, "_layout", layout)

    @property
    def layout(self) -> ParamLayout:
        return self._layout

    def weight(self, dim: int, layer: int) -> np.ndarray:
        nout, nin = self.layout.layer_dims_list[layer]
        return self.flat[self.layout.weight_slice(dim, layer)].reshape(nout, nin)

    def bias(self, dim: int, layer: int) -> np.ndarray | None:
        sl = self.layout.bias_slice(dim, layer)
        return None if sl is None else self.flat[sl]

    def with_flat(self, flat: np.ndarray) -> "TnnParams":
        return TnnParams(self.arch, flat)


@dataclass(frozen=True)
class ParamMask:
    """Boolean selection of time-evolved parameters, in flat layout order."""

    selected: np.ndarray

    def __post_init__(self):
        sel = np.asarray(self.selected, dtype=bool)
        object.__setattr__(self, "selected", sel)
        if not sel.any():
            raise ValueError("mask selects no parameters")

    def counts_per_dim(self, layout: ParamLayout) -> np.ndarray:
        return self.selected.reshape(layout.arch.d, layout.per_subnet).sum(axis=1)

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.selected)

    @property
    def total(self) -> int:
        return int(self.selected.sum())


def full_mask(params: TnnParams) -> ParamMask:
    return ParamMask(np.ones(params.layout.total, dtype=bool))


def mask_from_flags(params: TnnParams, per_subnet_flags: np.ndarray) -> ParamMask:
    """Tile one per-subnet boolean pattern across all dimensions."""
    return ParamMask(np.tile(per_subnet_flags, params.arch.d))


@dataclass(frozen=True)
class FactorTable:
    """Factor values and x-derivatives at the quadrature nodes.

    ``values[i]`` has shape (p, Q_i, max_order+1); the last axis holds plain
    derivatives d^m f / dx^m, m = 0..max_order.
    """

    values: tuple[np.ndarray, ...]
    max_order: int
    rules: tuple[QuadratureRule1D, ...]

    def deriv(self, dim: int, order: int) -> np.ndarray:
        """(p, Q) slice of the order-th derivative in one dimension."""
        if order > self.max_order:
            raise ValueError(f"table holds orders <= {self.max_order}, asked {order}")
        return self.values[dim][:, :, order]

    def contract(self, idx: tuple[int, ...]) -> float:
        """Order-0 tensor contraction at one grid multi-index."""
        prod = np.ones(self.values[0].shape[0])
        for i, q in enumerate(idx):
            prod = prod * self.values[i][:, q, 0]
        return float(prod.sum())


def init_network(arch: TnnArchitecture, seed: int) -> TnnParams:
    """Uniform init scaled by 1/sqrt(fan-in), reproducible from the seed."""
    layout = ParamLayout(arch)
    rng = np.random.default_rng(seed)
    flat = np.empty(layout.total)
    for dim in range(arch.d):
        for l, (nout, nin) in enumerate(layout.layer_dims_list):
            bound = 1.0 / np.sqrt(nin)
            flat[layout.weight_slice(dim, l)] = rng.uniform(-bound, bound, nout * nin)
            bsl = layout.bias_slice(dim, l)
            if bsl is not None:
                flat[bsl] = rng.uniform(-bound, bound, nout)
    return TnnParams(arch, flat)


def _input_series(arch: TnnArchitecture, dim: int, x: np.ndarray, max_order: int):
    im = arch.input_map
    if im.kind == PERIODIC:
        return series.periodic_input_series(x, max_order, im.a, im.frequency(arch.domain[dim]))
    return series.identity_input_series(x, max_order)


def subnet_forward(
    params: TnnParams, dim: int, x: np.ndarray, max_order: int, keep: bool = False
):
    """Jet forward pass of one sub-network at a batch of points.

    Returns the factor jet (K+1, Q, p) in scaled-coefficient form; with
    ``keep=True`` also returns the intermediates needed by a reverse sweep.
    """
    arch = params.arch
    h = _input_series(arch, dim, x, max_order)
    stored = {"x": h, "z": [], "y": [], "s": []}
    for l in range(len(arch.hidden)):
        z = series.affine_series(h, params.weight(dim, l), params.bias(dim, l))
        h, s = series.tanh_series(z)
        if keep:
            stored["z"].append(z)
            stored["y"].append(h)
            stored["s"].append(s)
    out_layer = len(arch.hidden)
    u = series.affine_series(h, params.weight(dim, out_layer), None)
    if arch.input_map.kind == ENVELOPE:
        lo, hi = arch.domain[dim]
        g = series.envelope_series(x, max_order, lo, hi)
        if keep:
            stored["g"] = g
            stored["u_pre_envelope"] = u
        u = series.envelope_apply(u, g)
    if keep:
        stored["last_hidden"] = h
        return u, stored
    return u


def eval_points(params: TnnParams, x: np.ndarray) -> np.ndarray:
    """Ansatz values at a batch of points, x of shape (n, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    acc = np.ones((x.shape[0], params.arch.p))
    for dim in range(params.arch.d):
        u = subnet_forward(params, dim, x[:, dim], 0)
        acc *= u[0]
    return acc.sum(axis=1)


def eval_point(params: TnnParams, x) -> float:
    """Ansatz value at a single d-vector."""
    return float(eval_points(params, np.asarray(x, dtype=float)[None, :])[0])


def eval_factors(
    params: TnnParams, rules: tuple[QuadratureRule1D, ...], max_order: int
) -> FactorTable:
    """Factor values with exact x-derivatives up to ``max_order`` at the nodes."""
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    if max_order > 4:
        raise ValueError(f"derivative order {max_order} unsupported (max 4)")
    if len(rules) != params.arch.d:
        raise ValueError("need one quadrature rule per dimension")
    values = []
    for dim in range(params.arch.d):
        jet = subnet_forward(params, dim, rules[dim].nodes, max_order)
        derivs = series.derivatives_from_series(jet)  # (K+1, Q, p)
        values.append(np.ascontiguousarray(derivs.transpose(2, 1, 0)))
    return FactorTable(tuple(values), max_order, tuple(rules))


def flatten(params: TnnParams, mask: ParamMask) -> np.ndarray:
    """Extract the selected scalars in layout order."""
    if mask.selected.shape != params.flat.shape:
        raise ValueError("mask length does not match parameter count")
    return params.flat[mask.selected].copy()


def unflatten_add(params: TnnParams, mask: ParamMask, delta: np.ndarray) -> TnnParams:
    """Add ``delta`` to the selected entries; unselected entries are untouched."""
    if mask.selected.shape != params.flat.shape:
        raise ValueError("mask length does not match parameter count")
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (mask.total,):
        raise ValueError(
            f"delta has length {delta.shape}, mask selects {mask.total} entries"
        )
    flat = params.flat.copy()
    flat[mask.selected] += delta
    return params.with_flat(flat)
