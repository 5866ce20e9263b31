"""Initial-condition fitting and L2 error metrics.

The network is trained to the initial data by minimizing the quadrature L2
distance ||u_hat - u0||.  Both the loss and its gradient come from the same
factorized expansions used everywhere else: the cross terms split into
products of 1D integrals, and the gradient reaches each sub-network through a
single weighted cotangent, so no full-grid evaluation ever happens.

The optimizer is Adam with a cosine-decayed learning rate.  For rank-1 initial
data (every reference problem here) an optional per-dimension 1D pre-fit
initializes each sub-network before the joint fit, which cuts the work by an
order of magnitude in high dimension.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .fields import SeparableField
from .jacobian import subnet_param_vjp
from .problems import field_from_factors
from .quadrature import QuadratureRule1D
from .tnn import TnnParams, eval_factors

__all__ = [
    "FitConfig",
    "FitResult",
    "l2_norm",
    "l2_error",
    "ansatz_expansion",
    "fit_initial",
    "loss_gradient",
]


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 4000
    learning_rate: float = 2e-3
    lr_floor_ratio: float = 1e-3  # cosine decays to learning_rate * ratio
    target: float = 1e-7  # absolute L2 loss
    seed: int = 0
    prefit: bool = True
    prefit_iterations: int | None = None  # defaults to 800
    secondary_rank_scale: float = 1e-4

    def __post_init__(self):
        if self.target <= 0:
            raise ValueError("target loss must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class FitResult:
    params: TnnParams
    loss: float
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)  # (iteration, loss, wall_ms)


def ansatz_expansion(params: TnnParams, rules) -> SeparableField:
    """The network itself as a rank-p separable field at the nodes."""
    factors = eval_factors(params, tuple(rules), 0)
    return field_from_factors(factors, (0,) * params.arch.d)


def l2_norm(obj, rules) -> float:
    """Quadrature L2 norm of a separable field or of the ansatz."""
    if isinstance(obj, SeparableField):
        return obj.norm()
    return ansatz_expansion(obj, rules).norm()


def l2_error(
    params: TnnParams, reference: SeparableField, rules
) -> tuple[float, float | None]:
    """(absolute, relative) L2 distance between the ansatz and a reference.

    Computed as ||u||^2 - 2<u, ref> + ||ref||^2 with each piece factorized, so
    a reference equal to the ansatz expansion cancels exactly.
    """
    expansion = ansatz_expansion(params, rules)
    return _expansion_error(expansion, reference)


def _expansion_error(expansion: SeparableField, reference: SeparableField):
    a = expansion.norm2()
    b = expansion.inner(reference)
    c = reference.norm2()
    abs_err = float(np.sqrt(max(a - 2.0 * b + c, 0.0)))
    rel = float(abs_err / np.sqrt(c)) if c > 0 else None
    return abs_err, rel


def loss_gradient(
    params: TnnParams, u0: SeparableField, rules
) -> tuple[float, np.ndarray]:
    """Squared loss ||u_hat - u0||^2 and its gradient over all parameters."""
    rules = tuple(rules)
    d, p = params.arch.d, params.arch.p
    factors = eval_factors(params, rules, 0)
    f0 = [factors.deriv(m, 0) for m in range(d)]  # (p, Q_m)
    w = [r.weights for r in rules]

    A = [(f0[m] * w[m]) @ f0[m].T for m in range(d)]
    FV = [f0[m] @ (u0.values[m] * w[m]).T for m in range(d)]  # (p, r)

    def prods(mats, like):
        pre = [None] * (d + 1)
        pre[0] = np.ones_like(like)
        for m in range(d):
            pre[m + 1] = pre[m] * mats[m]
        suf = [None] * (d + 1)
        suf[d] = np.ones_like(like)
        for m in range(d - 1, -1, -1):
            suf[m] = suf[m + 1] * mats[m]
        return pre, suf

    preA, sufA = prods(A, A[0])
    preF, sufF = prods(FV, FV[0])

    norm2 = float(preA[d].sum())
    cross = float((preF[d] * u0.coeffs).sum())
    loss2 = norm2 - 2.0 * cross + u0.norm2()

    grad = np.zeros(params.layout.total)
    for k in range(d):
        P = preA[k] * sufA[k + 1]  # (p, p)
        F = preF[k] * sufF[k + 1] * u0.coeffs  # (p, r)
        cot = 2.0 * w[k][:, None] * (
            f0[k].T @ P - (u0.values[k].T @ F.T)
        )  # (Q, p)
        grad[params.layout.subnet_slice(k)] = subnet_param_vjp(
            params, k, rules[k].nodes, cot
        )
    return loss2, grad


def _cosine_lr(cfg: FitConfig, it: int, total: int) -> float:
    floor = cfg.learning_rate * cfg.lr_floor_ratio
    return floor + 0.5 * (cfg.learning_rate - floor) * (1.0 + np.cos(np.pi * it / total))


class _Adam:
    def __init__(self, n: int, beta1=0.9, beta2=0.999, eps=1e-12):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, x: np.ndarray, g: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mh = self.m / (1 - self.beta1**self.t)
        vh = self.v / (1 - self.beta2**self.t)
        return x - lr * mh / (np.sqrt(vh) + self.eps)


def _prefit_targets(u0: SeparableField) -> list[np.ndarray] | None:
    if u0.rank != 1:
        return None
    targets = [v[0].copy() for v in u0.values]
    targets[0] = targets[0] * u0.coeffs[0]
    return targets


def _prefit_subnet(
    params: TnnParams, dim: int, target: np.ndarray, rule: QuadratureRule1D, cfg: FitConfig
) -> np.ndarray:
    """Train one sub-network's first output to a 1D node profile.

    The first output row is a weighted least-squares solve in the hidden
    features (the loss is quadratic in it); Adam only has to move the hidden
    stack.  Periodically re-solving the row keeps the two in lockstep.
    """
    from .tnn import subnet_forward

    layout = params.layout
    sl = layout.subnet_slice(dim)
    wout_sl = layout.weight_slice(dim, layout.n_hidden)
    lo = wout_sl.start - sl.start
    width = params.arch.hidden[-1]
    sub = params.flat[sl].copy()
    iters = cfg.prefit_iterations if cfg.prefit_iterations is not None else 800
    adam = _Adam(sub.size)
    w = rule.weights
    sqw = np.sqrt(w)
    work = params.with_flat(params.flat.copy())
    best, best_loss = sub.copy(), np.inf
    for it in range(iters + 1):
        work.flat[sl] = sub
        if it % 50 == 0:
            _, stored = subnet_forward(work, dim, rule.nodes, 0, keep=True)
            feats = stored["last_hidden"][0]
            if params.arch.input_map.kind == "dirichlet_envelope":
                feats = feats * stored["g"][0][:, None]
            row, *_ = np.linalg.lstsq(sqw[:, None] * feats, sqw * target, rcond=None)
            sub[lo : lo + width] = row
            work.flat[sl] = sub
        out = subnet_forward(work, dim, rule.nodes, 0)[0]  # (Q, p)
        resid = out[:, 0] - target
        loss = float(np.sqrt(w @ (resid * resid)))
        if loss < best_loss:
            best_loss, best = loss, sub.copy()
        if loss <= 0.3 * cfg.target or it == iters:
            break
        cot = np.zeros_like(out)
        cot[:, 0] = 2.0 * w * resid
        g = subnet_param_vjp(work, dim, rule.nodes, cot)
        sub = adam.step(sub, g, _cosine_lr(cfg, it, iters))
    return best


def fit_initial(
    params: TnnParams, u0: SeparableField, rules, cfg: FitConfig
) -> FitResult:
    """Minimize the quadrature L2 loss over all parameters.

    Stops at the target loss or the iteration budget; on a budget exhaustion
    the best parameters seen are returned with ``converged=False``.
    """
    rules = tuple(rules)
    t_start = time.perf_counter()
    trace: list[tuple[int, float, float]] = []

    def record(it, loss):
        trace.append((it, loss, (time.perf_counter() - t_start) * 1e3))

    loss0 = l2_error(params, u0, rules)[0]
    record(0, loss0)
    if loss0 <= cfg.target:
        return FitResult(params, loss0, True, 0, trace)

    flat = params.flat.copy()
    layout = params.layout
    targets = _prefit_targets(u0) if cfg.prefit else None
    if targets is not None:
        fitted: dict[int, np.ndarray] = {}
        for dim in range(params.arch.d):
            key = None
            # identical target, rule and domain: reuse the first fit
            for seen in fitted:
                same = (
                    targets[seen].shape == targets[dim].shape
                    and np.array_equal(targets[seen], targets[dim])
                    and rules[seen].size == rules[dim].size
                    and rules[seen].interval == rules[dim].interval
                    and params.arch.domain[seen] == params.arch.domain[dim]
                )
                if same:
                    key = seen
                    break
            if key is None:
                sub = _prefit_subnet(params.with_flat(flat), dim, targets[dim], rules[dim], cfg)
                fitted[dim] = sub
            else:
                sub = fitted[key]
            flat[layout.subnet_slice(dim)] = sub
            # shrink the spare ranks so their products start negligible
            wout = layout.weight_slice(dim, layout.n_hidden)
            block = flat[wout].reshape(params.arch.p, -1)
            block[1:] *= cfg.secondary_rank_scale
            flat[wout] = block.ravel()

    work = params.with_flat(flat)
    adam = _Adam(flat.size)
    best_flat = flat.copy()
    best_loss2 = l2_error(work, u0, rules)[0] ** 2
    record(0, np.sqrt(max(best_loss2, 0.0)))
    converged = best_loss2 <= cfg.target**2
    it = 0
    # the squared loss is tracked unclamped: near the metric's double-precision
    # floor the cancellation noise may dip below zero, which just means the
    # target is met as far as the quadrature metric can resolve
    while not converged and it < cfg.max_iterations:
        loss2, grad = loss_gradient(work, u0, rules)
        if loss2 < best_loss2:
            best_loss2, best_flat = loss2, work.flat.copy()
        if loss2 <= cfg.target**2:
            converged = True
            break
        new_flat = adam.step(work.flat, grad, _cosine_lr(cfg, it, cfg.max_iterations))
        work = params.with_flat(new_flat)
        it += 1
        if it % 50 == 0:
            record(it, float(np.sqrt(max(loss2, 0.0))))
    final = params.with_flat(best_flat)
    final_loss = l2_error(final, u0, rules)[0]
    if final_loss <= cfg.target:
        converged = True
    record(it, final_loss)
    return FitResult(final, final_loss, converged, it, trace)
