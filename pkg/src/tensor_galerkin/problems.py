"""Problem families: operators, initial data and closed-form references.

Four families are supported, matching the experiments the solver reproduces:

* transport  u_t + c sum_i u_{x_i} = 0, periodic on [-1,1]^d
* heat       u_t = nu Lap(u), homogeneous Dirichlet on [-1,1]^d
* kdv        u_t + c sum_i u_{x_i x_i x_i} = f, periodic on [-1,1]^d
* navier_stokes  2D incompressible flow in streamfunction form on [-pi,pi]^2

For the first three the evolved Galerkin observable is the ansatz itself; for
Navier-Stokes the observable is the vorticity w = -Lap(psi) and the operator
is the vorticity transport right side nu Lap(w) - (psi_y w_x - psi_x w_y),
which keeps every term separable and eliminates pressure.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import SeparableField
from .tnn import ENVELOPE, FactorTable, PERIODIC, InputMap

__all__ = [
    "PdeProblem",
    "make_problem",
    "apply_operator",
    "analytic_solution",
    "source_field",
    "initial_condition",
    "observable_terms",
    "field_from_factors",
    "analytic_velocity",
]

KINDS = ("transport", "heat", "kdv", "navier_stokes")

# spatial derivative order the operator consumes, per family
_FACTOR_ORDER = {"transport": 1, "heat": 2, "kdv": 3, "navier_stokes": 4}
# x-order of the parameter Jacobian of the evolved observable
_JACOBIAN_ORDER = {"transport": 0, "heat": 0, "kdv": 0, "navier_stokes": 2}


@dataclass(frozen=True)
class PdeProblem:
    kind: str
    d: int
    domain: tuple[tuple[float, float], ...]
    boundary: str
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind == "navier_stokes" and self.d != 2:
            raise ValueError("the streamfunction formulation is two-dimensional")
        if self.kind == "heat" and self.boundary != "dirichlet":
            raise ValueError("heat runs with homogeneous Dirichlet boundaries")
        if self.kind != "heat" and self.boundary != "periodic":
            raise ValueError(f"{self.kind} runs with periodic boundaries")

    @property
    def factor_order(self) -> int:
        return _FACTOR_ORDER[self.kind]

    @property
    def jacobian_order(self) -> int:
        return _JACOBIAN_ORDER[self.kind]

    def default_input_map(self) -> InputMap:
        if self.boundary == "periodic":
            return InputMap(PERIODIC)
        return InputMap(ENVELOPE)


def make_problem(kind: str, d: int | None = None, **constants) -> PdeProblem:
    """Build a problem with its reference constants; overrides are keywords."""
    if kind == "transport":
        d = 2 if d is None else d
        c = {"c": 1.0}
        c.update(constants)
        return PdeProblem(kind, d, (((-1.0, 1.0),) * d), "periodic", c)
    if kind == "heat":
        d = 10 if d is None else d
        c = {"nu": 1.0 / np.pi**2}
        c.update(constants)
        return PdeProblem(kind, d, (((-1.0, 1.0),) * d), "dirichlet", c)
    if kind == "kdv":
        d = 10 if d is None else d
        c = {"c": 1.0 / np.pi**3}
        c.update(constants)
        return PdeProblem(kind, d, (((-1.0, 1.0),) * d), "periodic", c)
    if kind == "navier_stokes":
        if d not in (None, 2):
            raise ValueError("navier_stokes is two-dimensional")
        c = {"nu": 1.0, "u0": 1.0}
        c.update(constants)
        return PdeProblem(kind, 2, (((-np.pi, np.pi),) * 2), "periodic", c)
    raise ValueError(f"unknown problem kind {kind!r}")


def observable_terms(problem: PdeProblem) -> tuple[tuple[float, tuple[int, ...]], ...]:
    """The evolved observable as sum of (coeff, per-dim derivative orders).

    Identity for scalar equations; -Lap for the streamfunction (the Galerkin
    system is posed on the vorticity).
    """
    if problem.kind == "navier_stokes":
        return ((-1.0, (2, 0)), (-1.0, (0, 2)))
    return ((1.0, (0,) * problem.d),)


def field_from_factors(
    factors: FactorTable, orders: tuple[int, ...], coeff: float = 1.0
) -> SeparableField:
    """The rank-p field prod_i d^{orders[i]} f_i at the nodes."""
    vals = tuple(factors.deriv(i, o).copy() for i, o in enumerate(orders))
    p = vals[0].shape[0]
    return SeparableField(np.full(p, coeff), vals, factors.rules)


def _sum_of_single_dim_derivs(
    factors: FactorTable, order: int, coeff: float
) -> SeparableField:
    """coeff * sum_k D_k^order applied to the ansatz, as one rank p*d field."""
    d = len(factors.values)
    parts = None
    for k in range(d):
        orders = tuple(order if i == k else 0 for i in range(d))
        term = field_from_factors(factors, orders, coeff)
        parts = term if parts is None else parts + term
    return parts


def apply_operator(problem: PdeProblem, factors: FactorTable, t: float) -> SeparableField:
    """The PDE right side N(u) (or N(w) for NS) in separable form."""
    if factors.max_order < problem.factor_order:
        raise ValueError(
            f"{problem.kind} needs factor derivatives up to order "
            f"{problem.factor_order}, table has {factors.max_order}"
        )
    if problem.kind == "transport":
        return _sum_of_single_dim_derivs(factors, 1, -problem.constants["c"])
    if problem.kind == "heat":
        return _sum_of_single_dim_derivs(factors, 2, problem.constants["nu"])
    if problem.kind == "kdv":
        drift = _sum_of_single_dim_derivs(factors, 3, -problem.constants["c"])
        return drift + source_field(problem, t, factors.rules)
    if problem.kind == "navier_stokes":
        nu = problem.constants["nu"]
        D = lambda mx, my, c=1.0: field_from_factors(factors, (mx, my), c)
        lap_omega = (D(4, 0) + D(2, 2).scale(2.0) + D(0, 4)).scale(-1.0)
        psi_x, psi_y = D(1, 0), D(0, 1)
        omega_x = (D(3, 0) + D(1, 2)).scale(-1.0)
        omega_y = (D(2, 1) + D(0, 3)).scale(-1.0)
        advect = psi_y.product(omega_x) - psi_x.product(omega_y)
        return lap_omega.scale(nu) - advect
    raise ValueError(problem.kind)


def initial_condition(problem: PdeProblem, rules) -> SeparableField:
    return analytic_solution(problem, 0.0, rules)


def analytic_solution(problem: PdeProblem, t: float, rules) -> SeparableField:
    """Closed-form reference sampled at the rules' nodes."""
    rules = tuple(rules)
    if problem.kind == "transport":
        c = problem.constants["c"]
        fns = [lambda x, s=c * t: np.sin(np.pi * (x - s))] * problem.d
        return SeparableField.from_univariate(fns, rules)
    if problem.kind == "heat":
        decay = np.exp(-problem.constants["nu"] * np.pi**2 * problem.d * t)
        fns = [lambda x: np.sin(np.pi * x)] * problem.d
        return SeparableField.from_univariate(fns, rules, coeff=decay)
    if problem.kind == "kdv":
        fns = [lambda x: np.sin(np.pi * x)] * problem.d
        return SeparableField.from_univariate(fns, rules, coeff=np.exp(-t))
    if problem.kind == "navier_stokes":
        # psi with u = psi_y, v = -psi_x reproducing the decaying vortex pair
        u0, nu = problem.constants["u0"], problem.constants["nu"]
        coeff = -u0 * np.exp(-2.0 * nu * t)
        return SeparableField.from_univariate([np.cos, np.cos], rules, coeff=coeff)
    raise ValueError(problem.kind)


def source_field(problem: PdeProblem, t: float, rules) -> SeparableField:
    """Manufactured forcing for the dispersive family (rank d+1)."""
    if problem.kind != "kdv":
        raise ValueError(f"{problem.kind} has no source term")
    rules = tuple(rules)
    d = problem.d
    decay = np.exp(-t)
    sin_part = SeparableField.from_univariate(
        [lambda x: np.sin(np.pi * x)] * d, rules, coeff=-decay
    )
    # the cosine block cancels the dispersion term; scaling by c*pi^3 keeps
    # the closed form an exact solution for any configured c
    amp = -decay * problem.constants["c"] * np.pi**3
    parts = sin_part
    for k in range(d):
        fns = [
            (lambda x: np.cos(np.pi * x)) if i == k else (lambda x: np.sin(np.pi * x))
            for i in range(d)
        ]
        parts = parts + SeparableField.from_univariate(fns, rules, coeff=amp)
    return parts


def analytic_velocity(problem: PdeProblem, x: float, y: float, t: float) -> tuple[float, float]:
    """Closed-form velocity (u, v) of the vortex benchmark at one point."""
    if problem.kind != "navier_stokes":
        raise ValueError("velocity reference only exists for navier_stokes")
    u0, nu = problem.constants["u0"], problem.constants["nu"]
    decay = np.exp(-2.0 * nu * t)
    return (
        u0 * np.cos(x) * np.sin(y) * decay,
        -u0 * np.sin(x) * np.cos(y) * decay,
    )
