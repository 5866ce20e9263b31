"""Config-driven experiment runner: fit, evolve, measure, write.

One run is: build the problem and rules, initialize and fit the network to
the initial condition, evolve the masked parameters over [0, T], and record
error metrics against the closed-form reference at a fixed step cadence.
Everything is reproducible from the config and its three seeds; a sweep runs
the same config several times with shifted seeds and reports the pointwise
mean error series alongside the individual runs.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, fields
from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .fitting import FitConfig, FitResult, fit_initial, l2_error, loss_gradient
from .galerkin import (
    EvolutionState,
    NumericalFailure,
    make_gamma,
    step_modified_euler,
    step_rk4,
)
from .jacobian import factor_param_jacobian
from .partition import MaskProvider, PartitionStrategy
from .problems import PdeProblem, analytic_solution, initial_condition, make_problem
from .quadrature import composite_rule, gauss_legendre, integrate_1d
from .tnn import InputMap, TnnArchitecture, TnnParams, eval_factors, init_network

__all__ = [
    "RunRecord",
    "RunReport",
    "SweepReport",
    "build_problem",
    "build_architecture",
    "build_rules",
    "run_experiment",
    "run_sweep",
    "write_outputs",
    "verify_config",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("step", "t", "abs_err", "rel_err", "residual", "eff_rank", "cond_est", "wall_ms")


@dataclass(frozen=True)
class RunRecord:
    step: int
    t: float
    abs_err: float
    rel_err: float
    residual: float
    eff_rank: int
    cond_est: float
    wall_ms: float


@dataclass
class RunReport:
    config: ExperimentConfig
    records: list[RunRecord] = field(default_factory=list)
    status: str = "success"
    failed_at: float | None = None
    fit: FitResult | None = None
    params_init: TnnParams | None = None
    params_final: TnnParams | None = None
    cadence_checkpoints: list[tuple[int, TnnParams]] = field(default_factory=list)
    wall_total_ms: float = 0.0
    started: str = ""
    finished: str = ""


@dataclass
class SweepReport:
    runs: list[RunReport]
    mean_t: np.ndarray
    mean_abs: np.ndarray
    mean_rel: np.ndarray
    complete: bool  # every run finished successfully


def build_problem(cfg: ExperimentConfig) -> PdeProblem:
    return make_problem(cfg.problem.kind, cfg.problem.d, **cfg.problem.constants)


def build_architecture(cfg: ExperimentConfig, problem: PdeProblem) -> TnnArchitecture:
    kind = cfg.architecture.input_map
    if kind == "auto":
        imap = problem.default_input_map()
        imap = InputMap(imap.kind, cfg.architecture.embedding_amplitude, cfg.architecture.embedding_frequency)
    else:
        imap = InputMap(kind, cfg.architecture.embedding_amplitude, cfg.architecture.embedding_frequency)
    return TnnArchitecture(
        d=problem.d,
        p=cfg.architecture.rank,
        hidden=cfg.architecture.hidden,
        domain=problem.domain,
        input_map=imap,
    )


def build_rules(cfg: ExperimentConfig, problem: PdeProblem):
    base = gauss_legendre(cfg.quadrature.points)
    return tuple(composite_rule(base, cfg.quadrature.panels, iv) for iv in problem.domain)


def _fit_config(cfg: ExperimentConfig) -> FitConfig:
    f = cfg.fit
    return FitConfig(
        max_iterations=f.max_iterations,
        learning_rate=f.learning_rate,
        target=f.target,
        seed=cfg.seeds.fit,
        prefit=f.prefit,
        prefit_iterations=f.prefit_iterations,
        secondary_rank_scale=f.secondary_rank_scale,
    )


def _metrics(params, problem, rules, t):
    ref = analytic_solution(problem, t, rules)
    abs_err, rel = l2_error(params, ref, rules)
    return abs_err, (rel if rel is not None else 0.0)


def run_experiment(
    config: ExperimentConfig, initial_params: TnnParams | None = None
) -> RunReport:
    """Execute one full run; on a numerical failure the partial series survives."""
    fields.set_deterministic(config.output.deterministic_reduction)
    started = datetime.now(timezone.utc).isoformat()
    t_start = time.perf_counter()
    problem = build_problem(config)
    arch = build_architecture(config, problem)
    rules = build_rules(config, problem)
    report = RunReport(config=config, started=started)

    if initial_params is None:
        params0 = init_network(arch, config.seeds.init)
        u0 = initial_condition(problem, rules)
        fit = fit_initial(params0, u0, rules, _fit_config(config))
        report.fit = fit
        params = fit.params
    else:
        if initial_params.arch != arch:
            raise ValueError("checkpoint architecture does not match the config")
        params = initial_params
    report.params_init = params

    dt = config.evolution.dt
    n_steps = int(round(config.evolution.t_final / dt))
    cadence = config.output.cadence
    stepper = step_rk4 if config.evolution.integrator == "rk4" else step_modified_euler
    gamma = make_gamma(problem, rules, config.evolution.rcond)
    provider = MaskProvider(
        PartitionStrategy(config.strategy.kind, config.strategy.ratio, config.strategy.count),
        params,
        config.seeds.mask,
    )

    def wall_ms():
        return (time.perf_counter() - t_start) * 1e3

    abs0, rel0 = _metrics(params, problem, rules, 0.0)
    report.records.append(RunRecord(0, 0.0, abs0, rel0, 0.0, 0, 0.0, wall_ms()))

    state = EvolutionState(params, 0.0, 0, provider.mask_for_step(0))
    tick = 0
    try:
        for n in range(n_steps):
            if n > 0 and provider.redraws:
                state = replace(state, mask=provider.mask_for_step(n))
            state, diag = stepper(state, dt, gamma)
            state = replace(state, t=(n + 1) * dt)  # keep ticks exactly on the grid
            if (n + 1) % cadence == 0 or (n + 1) == n_steps:
                abs_e, rel_e = _metrics(state.params, problem, rules, state.t)
                report.records.append(
                    RunRecord(
                        n + 1, state.t, abs_e, rel_e, diag.residual,
                        diag.effective_rank, diag.condition_estimate, wall_ms(),
                    )
                )
                tick += 1
                every = config.output.checkpoint_every
                if every and tick % every == 0:
                    report.cadence_checkpoints.append((n + 1, state.params))
    except NumericalFailure:
        report.status = "failed"
        report.failed_at = state.t
    report.params_final = state.params
    report.wall_total_ms = wall_ms()
    report.finished = datetime.now(timezone.utc).isoformat()
    return report


def run_sweep(
    configs, repetitions: int, vary_seeds: bool = True
) -> SweepReport:
    """Repeat each config with shifted, recorded seeds; average the series."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if isinstance(configs, ExperimentConfig):
        configs = [configs]
    runs: list[RunReport] = []
    for cfg in configs:
        for rep in range(repetitions):
            if vary_seeds:
                seeds = replace(
                    cfg.seeds,
                    init=cfg.seeds.init + rep,
                    mask=cfg.seeds.mask + rep,
                    fit=cfg.seeds.fit + rep,
                )
                run_cfg = replace(cfg, seeds=seeds)
            else:
                run_cfg = cfg
            runs.append(run_experiment(run_cfg))
    good = [r for r in runs if r.status == "success"]
    complete = len(good) == len(runs)
    if good:
        length = min(len(r.records) for r in good)
        mean_t = np.array([r.records[i].t for r in good[:1] for i in range(length)])
        mean_abs = np.mean([[r.records[i].abs_err for i in range(length)] for r in good], axis=0)
        mean_rel = np.mean([[r.records[i].rel_err for i in range(length)] for r in good], axis=0)
    else:
        mean_t = mean_abs = mean_rel = np.zeros(0)
    return SweepReport(runs, mean_t, mean_abs, mean_rel, complete)


def _write_csv(path: Path, records, zero_wall: bool):
    # wall times cannot be byte-reproducible; the deterministic flag zeroes the
    # column (totals stay in the manifest)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            wall = 0.0 if zero_wall else r.wall_ms
            writer.writerow(
                [r.step, repr(r.t), repr(r.abs_err), repr(r.rel_err), repr(r.residual),
                 r.eff_rank, repr(r.cond_est), repr(wall)]
            )


def write_outputs(report: RunReport, config: ExperimentConfig, directory: str | Path) -> dict:
    """errors.csv + manifest + parameter checkpoints.  Returns written paths."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        paths = {"errors": directory / "errors.csv", "manifest": directory / "manifest.json"}
        _write_csv(paths["errors"], report.records, config.output.deterministic_reduction)
        manifest = {
            "config": config.to_dict(),
            "library_version": __version__,
            "status": report.status,
            "failed_at": report.failed_at,
            "started": report.started,
            "finished": report.finished,
            "wall_total_ms": report.wall_total_ms,
            "fit": None
            if report.fit is None
            else {
                "loss": report.fit.loss,
                "converged": report.fit.converged,
                "iterations": report.fit.iterations,
            },
        }
        with open(paths["manifest"], "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if report.params_init is not None:
            paths["params_init"] = save_checkpoint(report.params_init, directory / "params_init.ckpt.json")
        if report.params_final is not None:
            paths["params_final"] = save_checkpoint(report.params_final, directory / "params_final.ckpt.json")
        for step, params in report.cadence_checkpoints:
            paths[f"step_{step}"] = save_checkpoint(params, directory / f"params_step{step:08d}.ckpt.json")
        return paths
    except OSError as exc:
        raise OSError(f"failed writing outputs under {directory}: {exc}") from exc


def verify_config(config: ExperimentConfig) -> list[tuple[str, bool, str]]:
    """Small oracle/property battery for one preset, at its own settings."""
    checks: list[tuple[str, bool, str]] = []
    problem = build_problem(config)
    arch = build_architecture(config, problem)
    rules = build_rules(config, problem)
    rng = np.random.default_rng(2024)

    total = sum(r.weights.sum() for r in rules)
    expect = sum(hi - lo for lo, hi in problem.domain)
    checks.append(
        ("quadrature weight sums", abs(total - expect) <= 1e-12 * abs(expect),
         f"sum={total!r} expected={expect!r}")
    )

    base = gauss_legendre(config.quadrature.points)
    worst = 0.0
    for k in range(2 * config.quadrature.points):
        exact = 0.0 if k % 2 else 2.0 / (k + 1)
        worst = max(worst, abs(integrate_1d(base.nodes**k, base) - exact))
    checks.append(("quadrature exactness", worst <= 1e-13, f"worst={worst:.2e}"))

    params = init_network(arch, config.seeds.init)
    from .tnn import ParamMask

    sel = np.zeros(params.layout.total, dtype=bool)
    for dim in range(arch.d):
        idx = rng.choice(params.layout.per_subnet, min(3, params.layout.per_subnet), replace=False)
        sel[idx + dim * params.layout.per_subnet] = True
    mask = ParamMask(sel)
    jac = factor_param_jacobian(params, mask, rules, 0)
    h, worst = 1e-5, 0.0
    for dim in range(arch.d):
        rows = np.flatnonzero(sel[params.layout.subnet_slice(dim)])
        for row, local in enumerate(rows):
            gi = local + dim * params.layout.per_subnet
            fp, fm = params.flat.copy(), params.flat.copy()
            fp[gi] += h
            fm[gi] -= h
            tp = eval_factors(params.with_flat(fp), rules, 0).values[dim][:, :, 0]
            tm = eval_factors(params.with_flat(fm), rules, 0).values[dim][:, :, 0]
            fd = (tp - tm) / (2 * h)
            worst = max(worst, float(np.max(np.abs(fd - jac.entries[dim][row, :, :, 0]) / (1 + np.abs(fd)))))
    checks.append(("parameter Jacobian vs finite differences", worst <= 1e-6, f"worst={worst:.2e}"))

    u0 = initial_condition(problem, rules)
    _, grad = loss_gradient(params, u0, rules)
    worst = 0.0
    for gi in rng.choice(params.layout.total, 5, replace=False):
        fp, fm = params.flat.copy(), params.flat.copy()
        fp[gi] += h
        fm[gi] -= h
        lp = l2_error(params.with_flat(fp), u0, rules)[0] ** 2
        lm = l2_error(params.with_flat(fm), u0, rules)[0] ** 2
        fd = (lp - lm) / (2 * h)
        worst = max(worst, abs(fd - grad[gi]) / (1 + abs(fd)))
    checks.append(("fit loss gradient vs finite differences", worst <= 1e-5, f"worst={worst:.2e}"))

    gamma = make_gamma(problem, rules, config.evolution.rcond)
    g1, _ = gamma(params, mask, 0.0)
    g2, _ = gamma(params, mask, 0.0)
    checks.append(("stage evaluation determinism", bool(np.array_equal(g1, g2)), ""))

    try:
        provider = MaskProvider(
            PartitionStrategy(config.strategy.kind, config.strategy.ratio, config.strategy.count),
            params,
            config.seeds.mask,
        )
        m0 = provider.mask_for_step(0)
        counts = m0.counts_per_dim(params.layout)
        checks.append(("partition strategy feasible", True, f"counts={counts.tolist()}"))
    except ValueError as exc:
        checks.append(("partition strategy feasible", False, str(exc)))
    return checks
