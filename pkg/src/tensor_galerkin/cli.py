"""Command line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.
"""
from __future__ import annotations

import os
import sys
from pathlib import Path

import click

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, load_config, preset_names, preset_path
from .experiment import run_experiment, run_sweep, verify_config, write_outputs

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

OUTPUT_ROOT_VAR = "TENSOR_GALERKIN_OUTPUT_ROOT"
THREADS_VAR = "TENSOR_GALERKIN_THREADS"


def _apply_thread_override():
    threads = os.environ.get(THREADS_VAR)
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def _resolve_config(config_arg: str, overrides):
    path = Path(config_arg)
    if not path.exists() and not config_arg.endswith((".yaml", ".yml")):
        path = preset_path(config_arg)
    return load_config(path, list(overrides))


def _output_dir(config) -> Path:
    root = os.environ.get(OUTPUT_ROOT_VAR)
    directory = Path(config.output.directory)
    if root and not directory.is_absolute():
        directory = Path(root) / directory
    return directory


def _finish(report, config, out_dir):
    try:
        paths = write_outputs(report, config, out_dir)
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_IO)
    click.echo(f"wrote {paths['errors']}")
    if report.status != "success":
        click.echo(f"run failed at t={report.failed_at}", err=True)
        sys.exit(EXIT_NUMERICAL)


@click.group()
def main():
    """Tensor-network PDE solver with Galerkin-projected parameter dynamics."""
    _apply_thread_override()


@main.command("run")
@click.argument("config")
@click.option("--set", "overrides", multiple=True, help="Override section.key=value.")
@click.option("--out", default=None, help="Output directory (defaults to the config's).")
def run_cmd(config, overrides, out):
    """Fit the initial condition, evolve to T and write the error series."""
    try:
        cfg = _resolve_config(config, overrides)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    report = run_experiment(cfg)
    _finish(report, cfg, out or _output_dir(cfg))
    last = report.records[-1]
    click.echo(f"final: t={last.t:g} abs={last.abs_err:.3e} rel={last.rel_err:.3e}")


@main.command("fit-init")
@click.argument("config")
@click.option("--set", "overrides", multiple=True)
@click.option("--out", default=None, help="Checkpoint path (default <outdir>/params_init.ckpt.json).")
def fit_init_cmd(config, overrides, out):
    """Train the network to the initial condition and save the checkpoint."""
    try:
        cfg = _resolve_config(config, overrides)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    from .experiment import build_architecture, build_problem, build_rules, _fit_config
    from .problems import initial_condition
    from .fitting import fit_initial
    from .tnn import init_network

    problem = build_problem(cfg)
    arch = build_architecture(cfg, problem)
    rules = build_rules(cfg, problem)
    params = init_network(arch, cfg.seeds.init)
    result = fit_initial(params, initial_condition(problem, rules), rules, _fit_config(cfg))
    target = Path(out) if out else _output_dir(cfg) / "params_init.ckpt.json"
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(result.params, target)
    except OSError as exc:
        click.echo(f"error: failed writing {target}: {exc}", err=True)
        sys.exit(EXIT_IO)
    status = "converged" if result.converged else "not converged"
    click.echo(f"fit loss {result.loss:.3e} ({status}, {result.iterations} iterations)")
    click.echo(f"wrote {target}")


@main.command("evolve")
@click.argument("config")
@click.option("--from", "from_ckpt", required=True, help="Initial parameter checkpoint.")
@click.option("--set", "overrides", multiple=True)
@click.option("--out", default=None)
def evolve_cmd(config, from_ckpt, overrides, out):
    """Evolve from an existing checkpoint instead of refitting."""
    try:
        cfg = _resolve_config(config, overrides)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        params = load_checkpoint(from_ckpt)
    except (OSError, ValueError) as exc:
        click.echo(f"error: cannot load checkpoint {from_ckpt}: {exc}", err=True)
        sys.exit(EXIT_IO)
    try:
        report = run_experiment(cfg, initial_params=params)
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    _finish(report, cfg, out or _output_dir(cfg))


@main.command("sweep")
@click.argument("config")
@click.option("--reps", default=3, show_default=True, help="Independent repetitions.")
@click.option("--set", "overrides", multiple=True)
@click.option("--out", default=None)
def sweep_cmd(config, reps, overrides, out):
    """Run a config several times with shifted seeds; write runs and the mean."""
    try:
        cfg = _resolve_config(config, overrides)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    sweep = run_sweep(cfg, reps)
    base = Path(out) if out else _output_dir(cfg)
    try:
        base.mkdir(parents=True, exist_ok=True)
        for i, report in enumerate(sweep.runs):
            write_outputs(report, report.config, base / f"run{i:02d}")
        with open(base / "mean.csv", "w") as fh:
            fh.write("t,abs_err,rel_err\n")
            for t, a, r in zip(sweep.mean_t, sweep.mean_abs, sweep.mean_rel):
                fh.write(f"{t!r},{a!r},{r!r}\n")
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_IO)
    click.echo(f"wrote {base}/mean.csv ({len(sweep.runs)} runs, complete={sweep.complete})")
    if not sweep.complete:
        sys.exit(EXIT_NUMERICAL)


@main.command("verify")
@click.argument("config")
@click.option("--set", "overrides", multiple=True)
def verify_cmd(config, overrides):
    """Run the oracle/property battery for a preset at its own settings."""
    try:
        cfg = _resolve_config(config, overrides)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    checks = verify_config(cfg)
    failed = 0
    for name, ok, detail in checks:
        mark = "PASS" if ok else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        click.echo(f"[{mark}] {name}{suffix}")
        failed += 0 if ok else 1
    if failed:
        click.echo(f"{failed} check(s) failed", err=True)
        sys.exit(EXIT_NUMERICAL)


@main.command("presets")
def presets_cmd():
    """List the packaged experiment presets."""
    for name in preset_names():
        click.echo(name)


if __name__ == "__main__":
    main()
