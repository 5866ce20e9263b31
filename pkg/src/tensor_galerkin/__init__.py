"""Rank-structured tensor networks with Galerkin-projected parameter dynamics.

A solution of a time-dependent PDE is represented as a rank-p sum of products
of per-dimension sub-network outputs; integrals factorize into 1D Gauss
quadratures, and a (possibly random) subset of the parameters is evolved in
time through the least-squares parameter ODE obtained by projecting the PDE
onto the ansatz's tangent space.
"""

__version__ = "0.1.0"

from .quadrature import QuadratureRule1D, composite_rule, gauss_legendre, integrate_1d
from .tnn import (
    FactorTable,
    InputMap,
    ParamMask,
    TnnArchitecture,
    TnnParams,
    eval_factors,
    eval_point,
    eval_points,
    flatten,
    full_mask,
    init_network,
    unflatten_add,
)
from .jacobian import JacobianTable, factor_param_jacobian
from .fields import SeparableField
from .problems import (
    PdeProblem,
    analytic_solution,
    apply_operator,
    initial_condition,
    make_problem,
    source_field,
)
from .galerkin import (
    EvolutionState,
    GramSystem,
    NumericalFailure,
    assemble_gram,
    assemble_rhs,
    gamma_rhs,
    make_gamma,
    solve_lstsq,
    step_modified_euler,
    step_rk4,
)
from .partition import MaskProvider, PartitionStrategy, select_mask
from .fitting import FitConfig, FitResult, fit_initial, l2_error, l2_norm
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config, preset_names, preset_path
from .experiment import (
    RunReport,
    run_experiment,
    run_sweep,
    verify_config,
    write_outputs,
)

__all__ = [name for name in dir() if not name.startswith("_")]
