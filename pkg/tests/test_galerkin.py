import numpy as np
import pytest

import oracles
from tensor_galerkin.fields import SeparableField
from tensor_galerkin.galerkin import (
    EvolutionState,
    NumericalFailure,
    StepDiagnostics,
    assemble_gram,
    assemble_rhs,
    gamma_rhs,
    make_gamma,
    solve_lstsq,
    step_modified_euler,
    step_rk4,
)
from tensor_galerkin.jacobian import factor_param_jacobian
from tensor_galerkin.problems import apply_operator, initial_condition, make_problem, observable_terms
from tensor_galerkin.quadrature import composite_rule, gauss_legendre
from tensor_galerkin.tnn import (
    InputMap,
    PERIODIC,
    ParamMask,
    TnnArchitecture,
    eval_factors,
    full_mask,
    init_network,
    subnet_forward,
)

RULE = composite_rule(gauss_legendre(6), 5, (-1.0, 1.0))
RULES = (RULE, RULE)

DIAG0 = StepDiagnostics(0.0, 0.0, 0, 0.0, 0, 0.0)


def make_instance(seed, d=2, p=3, hidden=(6, 5)):
    arch = TnnArchitecture(d=d, p=p, hidden=hidden, domain=((-1.0, 1.0),) * d,
                           input_map=InputMap(PERIODIC, b=np.pi))
    return init_network(arch, seed=seed)


def random_mask(params, per_dim, rng):
    sel = np.zeros(params.layout.total, dtype=bool)
    for dim in range(params.arch.d):
        idx = rng.choice(params.layout.per_subnet, per_dim, replace=False)
        sel[idx + dim * params.layout.per_subnet] = True
    return ParamMask(sel)


# ------------------------------------------------------------ gram matrix

def test_single_output_weight_gram_closed_form():
    """One masked final-layer weight, p=1: M = int h^2 * prod of factor norms."""
    params = make_instance(0, p=1)
    layout = params.layout
    h_idx = 2
    sel = np.zeros(layout.total, dtype=bool)
    wsl = layout.weight_slice(0, layout.n_hidden)
    sel[wsl.start + h_idx] = True
    mask = ParamMask(sel)
    factors = eval_factors(params, RULES, 0)
    jac = factor_param_jacobian(params, mask, RULES, 0)
    M = assemble_gram(factors, jac, RULES)
    _, stored = subnet_forward(params, 0, RULE.nodes, 0, keep=True)
    hidden = stored["last_hidden"][0][:, h_idx]
    expected = float(RULE.weights @ hidden**2) * float(
        RULE.weights @ factors.values[1][0, :, 0] ** 2
    )
    assert M.shape == (1, 1)
    assert M[0, 0] == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_gram_matches_bruteforce_oracle(seed):
    rng = np.random.default_rng(seed)
    params = make_instance(seed)
    mask = random_mask(params, 6, rng)  # 12 parameters total
    factors = eval_factors(params, RULES, 0)
    jac = factor_param_jacobian(params, mask, RULES, 0)
    M = assemble_gram(factors, jac, RULES)
    M_ref = oracles.gram_bruteforce(params, mask, RULES)
    assert np.max(np.abs(M - M_ref) / (1e-300 + np.abs(M_ref))) <= 1e-10


def test_gram_symmetry_and_psd():
    rng = np.random.default_rng(7)
    params = make_instance(7)
    mask = random_mask(params, 10, rng)
    factors = eval_factors(params, RULES, 0)
    jac = factor_param_jacobian(params, mask, RULES, 0)
    M = assemble_gram(factors, jac, RULES)
    assert np.max(np.abs(M - M.T)) == 0.0
    lam = np.linalg.eigvalsh(M)
    assert lam[0] >= -1e-10 * lam[-1]


def test_scaling_unmasked_dimension_scales_gram_by_four():
    params = make_instance(11, d=3)
    rng = np.random.default_rng(11)
    sel = np.zeros(params.layout.total, dtype=bool)
    for dim in (0, 1):  # dimension 2 stays unmasked
        idx = rng.choice(params.layout.per_subnet, 5, replace=False)
        sel[idx + dim * params.layout.per_subnet] = True
    mask = ParamMask(sel)
    rules3 = (RULE, RULE, RULE)

    def gram(p):
        factors = eval_factors(p, rules3, 0)
        jac = factor_param_jacobian(p, mask, rules3, 0)
        return assemble_gram(factors, jac, rules3)

    M1 = gram(params)
    flat = params.flat.copy()
    flat[params.layout.weight_slice(2, params.layout.n_hidden)] *= 2.0
    M2 = gram(params.with_flat(flat))
    assert np.array_equal(M2, 4.0 * M1)


def test_gram_rejects_mismatched_tables():
    params = make_instance(1)
    other_rule = composite_rule(gauss_legendre(6), 4, (-1.0, 1.0))
    factors = eval_factors(params, RULES, 0)
    jac = factor_param_jacobian(params, full_mask(params), (other_rule, other_rule), 0)
    with pytest.raises(ValueError):
        assemble_gram(factors, jac, RULES)


# ------------------------------------------------------------ right side

def test_rhs_zero_field_gives_zero():
    params = make_instance(2)
    mask = random_mask(params, 4, np.random.default_rng(0))
    factors = eval_factors(params, RULES, 0)
    jac = factor_param_jacobian(params, mask, RULES, 0)
    b = assemble_rhs(factors, jac, SeparableField.zero(RULES), RULES)
    assert np.array_equal(b, np.zeros(8))


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_rhs_matches_bruteforce_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    params = make_instance(seed)
    mask = random_mask(params, 6, rng)
    prob = make_problem("transport", d=2)
    factors = eval_factors(params, RULES, 1)
    jac = factor_param_jacobian(params, mask, RULES, 0)
    field = apply_operator(prob, factors, 0.0)
    b = assemble_rhs(factors, jac, field, RULES)
    b_ref = oracles.rhs_bruteforce(params, mask, RULES, field)
    assert np.max(np.abs(b - b_ref) / (1e-300 + np.abs(b_ref))) <= 1e-10


def test_rhs_with_self_field_is_energy_gradient():
    """b_i = d/dw_i of ||u||^2 / 2 when the field is the ansatz itself."""
    from tensor_galerkin.fitting import ansatz_expansion, l2_norm

    rng = np.random.default_rng(5)
    params = make_instance(5)
    mask = random_mask(params, 5, rng)
    factors = eval_factors(params, RULES, 0)
    jac = factor_param_jacobian(params, mask, RULES, 0)
    b = assemble_rhs(factors, jac, ansatz_expansion(params, RULES), RULES)
    h = 1e-5
    idx = mask.indices()
    for row, gi in enumerate(idx):
        fp, fm = params.flat.copy(), params.flat.copy()
        fp[gi] += h
        fm[gi] -= h
        np_ = l2_norm(params.with_flat(fp), RULES) ** 2
        nm = l2_norm(params.with_flat(fm), RULES) ** 2
        fd = (np_ - nm) / (4 * h)  # half the gradient of the squared norm
        assert abs(fd - b[row]) <= 1e-6 * (1 + abs(fd))


# ------------------------------------------------------ observable (vortex)

def test_vortex_observable_gram_and_rhs_match_fd_oracle():
    prob = make_problem("navier_stokes")
    arch = TnnArchitecture(d=2, p=2, hidden=(5, 4), domain=prob.domain,
                           input_map=InputMap(PERIODIC, b=1.0))
    params = init_network(arch, seed=9)
    rules = tuple(composite_rule(gauss_legendre(6), 6, iv) for iv in prob.domain)
    rng = np.random.default_rng(9)
    mask = random_mask(params, 5, rng)
    obs = observable_terms(prob)
    factors = eval_factors(params, rules, 4)
    jac = factor_param_jacobian(params, mask, rules, 2)
    M = assemble_gram(factors, jac, rules, obs)
    field = apply_operator(prob, factors, 0.0)
    b = assemble_rhs(factors, jac, field, rules, obs)

    def omega_grid(p):
        t = eval_factors(p, rules, 2)
        u1, u2 = t.values
        return -(
            np.einsum("aq,ar->qr", u1[:, :, 2], u2[:, :, 0])
            + np.einsum("aq,ar->qr", u1[:, :, 0], u2[:, :, 2])
        )

    h = 1e-6
    idx = mask.indices()
    G = np.zeros((idx.size, rules[0].size, rules[1].size))
    for row, gi in enumerate(idx):
        fp, fm = params.flat.copy(), params.flat.copy()
        fp[gi] += h
        fm[gi] -= h
        G[row] = (omega_grid(params.with_flat(fp)) - omega_grid(params.with_flat(fm))) / (2 * h)
    w = np.outer(rules[0].weights, rules[1].weights)
    M_ref = np.einsum("iqr,jqr,qr->ij", G, G, w)
    b_ref = np.einsum("iqr,qr,qr->i", G, oracles.field_grid(field), w)
    assert np.max(np.abs(M - M_ref) / (1e-6 + np.abs(M_ref))) <= 1e-6
    assert np.max(np.abs(b - b_ref) / (1e-6 + np.abs(b_ref))) <= 1e-6


# ------------------------------------------------------------ least squares

def test_solve_identity():
    g, diag = solve_lstsq(np.eye(3), np.array([1.0, 2.0, 3.0]), 1e-10)
    assert np.allclose(g, [1, 2, 3])
    assert diag.effective_rank == 3 and diag.truncated == 0


def test_solve_truncates_tiny_singular_values():
    M = np.diag([1.0, 1e-20])
    g, diag = solve_lstsq(M, np.array([1.0, 1.0]), 1e-12)
    assert np.allclose(g, [1.0, 0.0])
    assert diag.effective_rank == 1 and diag.truncated == 1


def test_solve_minimum_norm_on_singular_consistent_system():
    M = np.array([[1.0, 1.0], [1.0, 1.0]])
    g, diag = solve_lstsq(M, np.array([2.0, 2.0]), 1e-12)
    assert np.allclose(g, [1.0, 1.0], atol=1e-12)
    assert diag.effective_rank == 1


def test_solve_rejects_nonfinite():
    with pytest.raises(NumericalFailure):
        solve_lstsq(np.array([[np.nan, 0], [0, 1.0]]), np.zeros(2), 1e-10)


def test_solve_rejects_bad_rcond():
    with pytest.raises(ValueError):
        solve_lstsq(np.eye(2), np.zeros(2), 0.0)


# ------------------------------------------------------------ gamma

def test_gamma_residual_small_on_fitted_transport(transport2d_fit):
    params, fit_loss = transport2d_fit
    prob = make_problem("transport", d=2)
    rules = tuple(composite_rule(gauss_legendre(8), 10, iv) for iv in prob.domain)
    state = EvolutionState(params, 0.0, 0, full_mask(params))
    _, diag = gamma_rhs(state, prob, rules, rcond=1e-14)
    assert diag.residual <= 10.0 * max(fit_loss, 1e-6)


def test_gamma_heat_normal_equations_consistent():
    prob = make_problem("heat", d=2)
    rules = tuple(composite_rule(gauss_legendre(8), 10, iv) for iv in prob.domain)
    arch = TnnArchitecture(d=2, p=4, hidden=(20, 20), domain=prob.domain,
                           input_map=InputMap("dirichlet_envelope"))
    from tensor_galerkin.fitting import FitConfig, fit_initial

    res = fit_initial(init_network(arch, 0), initial_condition(prob, rules), rules,
                      FitConfig(max_iterations=300, target=1e-6))
    mask = full_mask(res.params)
    factors = eval_factors(res.params, rules, 2)
    jac = factor_param_jacobian(res.params, mask, rules, 0)
    field = apply_operator(prob, factors, 0.0)
    M = assemble_gram(factors, jac, rules)
    b = assemble_rhs(factors, jac, field, rules)
    g, _ = solve_lstsq(M, b, 1e-10)
    assert np.linalg.norm(M @ g - b) <= 1e-6 * np.linalg.norm(b)


def test_gamma_zero_field_gives_zero_velocity():
    params = make_instance(3)
    mask = random_mask(params, 5, np.random.default_rng(1))
    factors = eval_factors(params, RULES, 0)
    jac = factor_param_jacobian(params, mask, RULES, 0)
    M = assemble_gram(factors, jac, RULES)
    b = assemble_rhs(factors, jac, SeparableField.zero(RULES), RULES)
    g, _ = solve_lstsq(M, b, 1e-10)
    assert np.array_equal(g, np.zeros(10))


def test_gamma_optimality_quadratic_form():
    """J(gamma_opt) <= J(0) and J is minimal within the kept subspace."""
    rng = np.random.default_rng(17)
    params = make_instance(17)
    mask = random_mask(params, 8, rng)
    prob = make_problem("transport", d=2)
    factors = eval_factors(params, RULES, 1)
    jac = factor_param_jacobian(params, mask, RULES, 0)
    field = apply_operator(prob, factors, 0.0)
    M = assemble_gram(factors, jac, RULES)
    b = assemble_rhs(factors, jac, field, RULES)
    g, diag = solve_lstsq(M, b, 1e-10)
    n2 = field.norm2()

    def J(v):
        return 0.5 * float(v @ M @ v - 2 * b @ v + n2)

    assert J(g) <= J(np.zeros_like(g)) + 1e-12
    lam, V = np.linalg.eigh(M)
    kept = V[:, lam > 1e-10 * lam[-1]]
    for _ in range(100):
        delta = kept @ rng.standard_normal(kept.shape[1]) * 1e-3
        assert J(g) <= J(g + delta) + 1e-12


# ------------------------------------------------------------ integrators

def test_modified_euler_with_constant_velocity():
    params = make_instance(4)
    mask = random_mask(params, 5, np.random.default_rng(2))
    c = np.arange(1.0, 11.0)
    state = EvolutionState(params, 0.0, 0, mask)
    new, _ = step_modified_euler(state, 0.1, lambda p, m, t: (c.copy(), DIAG0))
    from tensor_galerkin.tnn import flatten

    assert np.allclose(flatten(new.params, mask), flatten(params, mask) + 0.1 * c, atol=1e-15)
    assert new.t == pytest.approx(0.1) and new.step_index == 1


def test_modified_euler_matches_second_order_taylor_on_linear_ode():
    params = make_instance(5)
    sel = np.zeros(params.layout.total, dtype=bool)
    sel[0] = True
    mask = ParamMask(sel)
    lam, dt = -2.0, 0.05
    y0 = params.flat[0]
    gamma_fn = lambda p, m, t: (lam * np.array([p.flat[0]]), DIAG0)
    new, _ = step_modified_euler(EvolutionState(params, 0.0, 0, mask), dt, gamma_fn)
    expected = y0 * (1 + lam * dt + (lam * dt) ** 2 / 2)
    assert new.params.flat[0] == pytest.approx(expected, rel=1e-14)


def test_rk4_zero_velocity_only_advances_time():
    params = make_instance(6)
    mask = random_mask(params, 4, np.random.default_rng(3))
    zero = lambda p, m, t: (np.zeros(mask.total), DIAG0)
    new, _ = step_rk4(EvolutionState(params, 0.0, 0, mask), 0.25, zero)
    assert np.array_equal(new.params.flat, params.flat)
    assert new.t == pytest.approx(0.25)


def test_rk4_reproduces_quartic_taylor_on_linear_ode():
    params = make_instance(7)
    sel = np.zeros(params.layout.total, dtype=bool)
    sel[0] = True
    mask = ParamMask(sel)
    lam, dt = 1.3, 0.05
    y0 = params.flat[0]
    gamma_fn = lambda p, m, t: (lam * np.array([p.flat[0]]), DIAG0)
    new, _ = step_rk4(EvolutionState(params, 0.0, 0, mask), dt, gamma_fn)
    z = lam * dt
    expected = y0 * (1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24)
    assert new.params.flat[0] == pytest.approx(expected, rel=1e-14)


def test_step_aborts_on_nonfinite_velocity():
    params = make_instance(8)
    mask = random_mask(params, 4, np.random.default_rng(4))
    bad = lambda p, m, t: (np.full(mask.total, np.nan), DIAG0)
    with pytest.raises(NumericalFailure):
        step_modified_euler(EvolutionState(params, 0.0, 0, mask), 0.1, bad)


def test_unmasked_parameters_survive_steps_bitwise():
    params = make_instance(9)
    rng = np.random.default_rng(5)
    mask = random_mask(params, 6, rng)
    gamma_fn = lambda p, m, t: (rng.standard_normal(mask.total), DIAG0)
    state = EvolutionState(params, 0.0, 0, mask)
    for _ in range(5):
        state, _ = step_rk4(state, 0.01, gamma_fn)
    frozen = ~mask.selected
    assert np.array_equal(state.params.flat[frozen], params.flat[frozen])


def test_fixed_mask_is_special_case_of_per_step_redraw():
    """A per-step strategy that redraws the same mask must give a bitwise
    identical trajectory to the fixed-mask strategy."""
    from tensor_galerkin.partition import MaskProvider, PartitionStrategy
    from tensor_galerkin.problems import make_problem

    prob = make_problem("transport", d=2)
    params = make_instance(23)
    gamma = make_gamma(prob, RULES, rcond=1e-10)

    def run(kind):
        provider = MaskProvider(PartitionStrategy(kind, ratio=0.3, seed=5), params, seed=5)
        state = EvolutionState(params, 0.0, 0, provider.mask_for_step(0))
        for n in range(3):
            if n > 0 and provider.redraws:
                from dataclasses import replace

                state = replace(state, mask=provider.mask_for_step(n))
            state, _ = step_modified_euler(state, 0.01, gamma)
        return state.params.flat

    assert np.array_equal(run("fixed"), run("redraw_fixed"))
