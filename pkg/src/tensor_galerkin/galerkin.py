"""Normal-equation assembly and time integration of the parameter ODE.

The evolved observable G(theta) (the ansatz itself, or its negated Laplacian
for the streamfunction runs) induces the least-squares problem

    min_gamma  || dG/dtheta_hat gamma - N ||_L2

whose normal equations M gamma = b are assembled without ever touching the
full tensor grid: every entry factorizes into products of 1D quadratures of
factor values, factor derivatives and parameter-Jacobian rows.  The solve is
a truncated symmetric eigendecomposition (the SVD of a PSD matrix), and the
resulting gamma is advanced with either the predictor-corrector scheme or
classical RK4, with the active mask frozen inside each step.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .fields import SeparableField
from .jacobian import JacobianTable, factor_param_jacobian
from .problems import PdeProblem, apply_operator, observable_terms
from .quadrature import QuadratureRule1D
from .tnn import FactorTable, ParamMask, TnnParams, eval_factors, unflatten_add

__all__ = [
    "NumericalFailure",
    "GramSystem",
    "SolveDiagnostics",
    "StepDiagnostics",
    "EvolutionState",
    "assemble_gram",
    "assemble_rhs",
    "solve_lstsq",
    "make_gamma",
    "gamma_rhs",
    "step_modified_euler",
    "step_rk4",
]

IDENTITY_OBSERVABLE = None  # sentinel: use observable_terms(problem)


class NumericalFailure(RuntimeError):
    """Raised when a stage produces non-finite numbers; the step is aborted."""


@dataclass(frozen=True)
class SolveDiagnostics:
    effective_rank: int
    condition_estimate: float
    truncated: int


@dataclass(frozen=True)
class StepDiagnostics:
    gamma_norm: float
    residual: float
    effective_rank: int
    condition_estimate: float
    truncated: int
    wall_ms: float


@dataclass(frozen=True)
class GramSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    diagnostics: SolveDiagnostics | None = None


@dataclass(frozen=True)
class EvolutionState:
    params: TnnParams
    t: float
    step_index: int
    mask: ParamMask


def _check_tables(factors: FactorTable, jac: JacobianTable):
    if len(factors.values) != len(jac.entries):
        raise ValueError("factor table and Jacobian table disagree on dimension count")
    for fv, jv, fr, jr in zip(factors.values, jac.entries, factors.rules, jac.rules):
        if fv.shape[1] != jv.shape[2] or fr.size != jr.size:
            raise ValueError("factor table and Jacobian table use different rules")


def _orders_of(observable, dim_count):
    for coeff, alpha in observable:
        if len(alpha) != dim_count:
            raise ValueError("observable orders must give one entry per dimension")
    return observable


def _range_product(mats: list[np.ndarray], skip: tuple[int, ...]) -> np.ndarray:
    """Elementwise product of per-dimension matrices excluding ``skip`` dims."""
    out = None
    for m, mat in enumerate(mats):
        if m in skip:
            continue
        out = mat.copy() if out is None else out * mat
    if out is None:
        out = np.ones_like(mats[0])
    return out


def assemble_gram(
    factors: FactorTable,
    jac: JacobianTable,
    rules: tuple[QuadratureRule1D, ...],
    observable=IDENTITY_OBSERVABLE,
) -> np.ndarray:
    """M[i,j] = integral (dG/dw_i)(dG/dw_j) dx by factorized contraction."""
    _check_tables(factors, jac)
    d = len(factors.values)
    p = factors.values[0].shape[0]
    if observable is None:
        observable = ((1.0, (0,) * d),)
    observable = _orders_of(observable, d)

    w = [r.weights for r in rules]
    jac_orders = sorted({alpha[k] for _, alpha in observable for k in range(d)})
    for o in jac_orders:
        if o > jac.orders:
            raise ValueError("Jacobian table lacks the orders the observable needs")
        if o > factors.max_order:
            raise ValueError("factor table lacks the orders the observable needs")

    # per-dim overlaps A[m][(oa, ob)] = int f^(oa)_a f^(ob)_b
    A: list[dict] = []
    for m in range(d):
        blocks = {}
        for oa in jac_orders:
            fa = factors.deriv(m, oa)
            for ob in jac_orders:
                blocks[(oa, ob)] = (fa * w[m]) @ factors.deriv(m, ob).T
        A.append(blocks)

    # per-dim Jacobian-vs-factor integrals C[k][(oj, of)][i, a, b]
    C: list[dict] = []
    for k in range(d):
        blocks = {}
        if jac.entries[k].shape[0]:
            for oj in jac_orders:
                J = jac.entries[k][:, :, :, oj] * w[k]
                for of in jac_orders:
                    blocks[(oj, of)] = np.einsum(
                        "iaq,bq->iab", J, factors.deriv(k, of), optimize=True
                    )
        C.append(blocks)

    counts = [jac.entries[k].shape[0] for k in range(d)]
    offsets = np.concatenate([[0], np.cumsum(counts)])
    n = offsets[-1]
    M = np.zeros((n, n))

    for (cmu, amu) in observable:
        for (cnu, anu) in observable:
            cc = cmu * cnu
            Amats = [A[m][(amu[m], anu[m])] for m in range(d)]
            for k in range(d):
                if counts[k] == 0:
                    continue
                sk = slice(offsets[k], offsets[k + 1])
                # same-dimension block via the weighted-Jacobian product
                P = _range_product(Amats, (k,))
                Jmu = jac.entries[k][:, :, :, amu[k]]
                Jnu = jac.entries[k][:, :, :, anu[k]] * w[k]
                G = np.einsum("iaq,ab->ibq", Jmu, P, optimize=True)
                M[sk, sk] += cc * (
                    G.reshape(counts[k], -1) @ Jnu.reshape(counts[k], -1).T
                )
                for l in range(k + 1, d):
                    if counts[l] == 0:
                        continue
                    sl = slice(offsets[l], offsets[l + 1])
                    R = _range_product(Amats, (k, l))
                    Ck = C[k][(amu[k], anu[k])] * R
                    Cl = C[l][(anu[l], amu[l])]
                    block = cc * (
                        Ck.reshape(counts[k], -1)
                        @ Cl.transpose(0, 2, 1).reshape(counts[l], -1).T
                    )
                    M[sk, sl] += block
                    M[sl, sk] += block.T
    return 0.5 * (M + M.T)


def assemble_rhs(
    factors: FactorTable,
    jac: JacobianTable,
    field: SeparableField,
    rules: tuple[QuadratureRule1D, ...],
    observable=IDENTITY_OBSERVABLE,
) -> np.ndarray:
    """b[i] = integral (dG/dw_i) N dx for a separable right side N."""
    _check_tables(factors, jac)
    d = len(factors.values)
    if field.d != d:
        raise ValueError("field dimension does not match the tables")
    for fv, rule in zip(field.values, rules):
        if fv.shape[1] != rule.size:
            raise ValueError("field is sampled on different rules")
    if observable is None:
        observable = ((1.0, (0,) * d),)
    observable = _orders_of(observable, d)

    w = [r.weights for r in rules]
    orders = sorted({alpha[k] for _, alpha in observable for k in range(d)})
    wv = [field.values[m] * w[m] for m in range(d)]

    # FV[m][o][a, s] = int f^(o)_{m,a} v_{s,m}
    FV = [{o: factors.deriv(m, o) @ wv[m].T for o in orders} for m in range(d)]

    counts = [jac.entries[k].shape[0] for k in range(d)]
    offsets = np.concatenate([[0], np.cumsum(counts)])
    b = np.zeros(offsets[-1])

    for (cmu, alpha) in observable:
        mats = [FV[m][alpha[m]] for m in range(d)]
        # prefix/suffix products over dimensions, excluding one at a time
        prefix = [None] * (d + 1)
        prefix[0] = np.ones_like(mats[0])
        for m in range(d):
            prefix[m + 1] = prefix[m] * mats[m]
        suffix = [None] * (d + 1)
        suffix[d] = np.ones_like(mats[0])
        for m in range(d - 1, -1, -1):
            suffix[m] = suffix[m + 1] * mats[m]
        for k in range(d):
            if counts[k] == 0:
                continue
            env = prefix[k] * suffix[k + 1] * field.coeffs  # (p, r)
            J = jac.entries[k][:, :, :, alpha[k]]
            JV = np.einsum("iaq,sq->ias", J, wv[k], optimize=True)
            b[offsets[k] : offsets[k + 1]] += cmu * np.einsum(
                "ias,as->i", JV, env, optimize=True
            )
    return b


def solve_lstsq(
    M: np.ndarray, b: np.ndarray, rcond: float
) -> tuple[np.ndarray, SolveDiagnostics]:
    """Minimum-norm truncated solve of the (PSD) normal equations.

    Spectral components below rcond * sigma_max are dropped; for a symmetric
    positive semidefinite matrix the eigendecomposition is its SVD.
    """
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    if not 0.0 < rcond < 1.0:
        raise ValueError(f"rcond must lie in (0, 1), got {rcond}")
    if not (np.isfinite(M).all() and np.isfinite(b).all()):
        raise NumericalFailure("non-finite entries in the normal equations")
    lam, V = np.linalg.eigh(M)
    smax = max(float(lam[-1]), 0.0)
    keep = lam > rcond * smax if smax > 0 else np.zeros_like(lam, dtype=bool)
    kept = int(keep.sum())
    if kept == 0:
        diag = SolveDiagnostics(0, 0.0, M.shape[0])
        return np.zeros_like(b), diag
    Vk = V[:, keep]
    gamma = Vk @ ((Vk.T @ b) / lam[keep])
    diag = SolveDiagnostics(kept, float(smax / lam[keep][0]), M.shape[0] - kept)
    return gamma, diag


def make_gamma(
    problem: PdeProblem,
    rules: tuple[QuadratureRule1D, ...],
    rcond: float,
):
    """Bundle one full gamma evaluation: tables -> operator -> solve.

    Returns gamma_fn(params, mask, t) -> (gamma, StepDiagnostics without wall
    time).  This is the ODE right side d(theta_hat)/dt.
    """
    observable = observable_terms(problem)
    forder = problem.factor_order
    jorder = problem.jacobian_order

    def gamma_fn(params: TnnParams, mask: ParamMask, t: float):
        factors = eval_factors(params, rules, forder)
        jac = factor_param_jacobian(params, mask, rules, jorder)
        field = apply_operator(problem, factors, t)
        M = assemble_gram(factors, jac, rules, observable)
        b = assemble_rhs(factors, jac, field, rules, observable)
        gamma, sdiag = solve_lstsq(M, b, rcond)
        if not np.isfinite(gamma).all():
            raise NumericalFailure("non-finite parameter velocity")
        two_j = float(gamma @ (M @ gamma) - 2.0 * (gamma @ b) + field.norm2())
        diag = StepDiagnostics(
            gamma_norm=float(np.linalg.norm(gamma)),
            residual=float(np.sqrt(max(two_j, 0.0))),
            effective_rank=sdiag.effective_rank,
            condition_estimate=sdiag.condition_estimate,
            truncated=sdiag.truncated,
            wall_ms=0.0,
        )
        return gamma, diag

    return gamma_fn


def gamma_rhs(
    state: EvolutionState,
    problem: PdeProblem,
    rules: tuple[QuadratureRule1D, ...],
    rcond: float,
) -> tuple[np.ndarray, StepDiagnostics]:
    """One evaluation of the optimal parameter velocity at the current state."""
    return make_gamma(problem, rules, rcond)(state.params, state.mask, state.t)


def _advance(state: EvolutionState, dt: float, delta: np.ndarray) -> EvolutionState:
    if not np.isfinite(delta).all():
        raise NumericalFailure("non-finite update in time step")
    params = unflatten_add(state.params, state.mask, delta)
    return replace(state, params=params, t=state.t + dt, step_index=state.step_index + 1)


def step_modified_euler(
    state: EvolutionState, dt: float, gamma_fn
) -> tuple[EvolutionState, StepDiagnostics]:
    """Explicit Euler predictor plus trapezoidal corrector; mask held fixed."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    t0 = time.perf_counter()
    g1, diag = gamma_fn(state.params, state.mask, state.t)
    pred = unflatten_add(state.params, state.mask, dt * g1)
    g2, _ = gamma_fn(pred, state.mask, state.t + dt)
    new_state = _advance(state, dt, 0.5 * dt * (g1 + g2))
    wall = (time.perf_counter() - t0) * 1e3
    return new_state, replace(diag, wall_ms=wall)


def step_rk4(
    state: EvolutionState, dt: float, gamma_fn
) -> tuple[EvolutionState, StepDiagnostics]:
    """Classical four-stage scheme; mask held fixed across the stages."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    t0 = time.perf_counter()
    p, m, t = state.params, state.mask, state.t
    k1, diag = gamma_fn(p, m, t)
    k2, _ = gamma_fn(unflatten_add(p, m, 0.5 * dt * k1), m, t + 0.5 * dt)
    k3, _ = gamma_fn(unflatten_add(p, m, 0.5 * dt * k2), m, t + 0.5 * dt)
    k4, _ = gamma_fn(unflatten_add(p, m, dt * k3), m, t + dt)
    new_state = _advance(state, dt, (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
    wall = (time.perf_counter() - t0) * 1e3
    return new_state, replace(diag, wall_ms=wall)
