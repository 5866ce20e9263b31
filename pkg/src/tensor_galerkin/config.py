"""Experiment configuration: a strict, versioned YAML schema.

Unknown keys are errors, not warnings, so a run manifest (which echoes the
config verbatim) is always a complete and authoritative description of what
executed.  Presets for the reference experiments ship with the package and
can be amended with dotted-path overrides on the command line.
"""
from __future__ import annotations

import importlib.resources
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "config_from_dict",
    "apply_overrides",
    "preset_names",
    "preset_path",
]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Anything wrong with a config file: bad value, missing or unknown key."""


@dataclass(frozen=True)
class ProblemConfig:
    kind: str = "transport"
    d: int = 2
    constants: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ArchitectureConfig:
    hidden: tuple[int, ...] = (20, 20)
    rank: int = 10
    input_map: str = "auto"  # auto | identity | periodic_embedding | dirichlet_envelope
    embedding_amplitude: float = 1.0
    embedding_frequency: float | None = None  # None: one period per domain length


@dataclass(frozen=True)
class QuadratureConfig:
    points: int = 8
    panels: int = 10


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float = 1e-3
    t_final: float = 1.0
    integrator: str = "modified_euler"  # modified_euler | rk4
    rcond: float = 1e-10


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "full"
    ratio: float | None = None
    count: int | None = None


@dataclass(frozen=True)
class FitSection:
    max_iterations: int = 2000
    learning_rate: float = 2e-3
    target: float = 1e-6
    prefit: bool = True
    prefit_iterations: int | None = None
    secondary_rank_scale: float = 1e-4


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/out"
    cadence: int = 100  # steps between error records
    deterministic_reduction: bool = True
    checkpoint_every: int = 0  # cadence ticks between checkpoints; 0 = none


@dataclass(frozen=True)
class SeedsConfig:
    init: int = 0
    mask: int = 0
    fit: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    fit: FitSection = field(default_factory=FitSection)
    output: OutputConfig = field(default_factory=OutputConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)

    def to_dict(self) -> dict:
        doc = {"schema_version": SCHEMA_VERSION}
        doc.update(asdict(self))
        doc["architecture"]["hidden"] = list(self.architecture.hidden)
        return doc


_SECTIONS = {
    "problem": ProblemConfig,
    "architecture": ArchitectureConfig,
    "quadrature": QuadratureConfig,
    "evolution": EvolutionConfig,
    "strategy": StrategyConfig,
    "fit": FitSection,
    "output": OutputConfig,
    "seeds": SeedsConfig,
}

_CASTS = {
    int: lambda v: int(v),
    float: lambda v: float(v),
    str: lambda v: str(v),
    bool: lambda v: bool(v),
}


def _build_section(name: str, cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    defaults = cls()
    known = set(defaults.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        current = getattr(defaults, key)
        if key == "hidden":
            try:
                value = tuple(int(w) for w in value)
            except (TypeError, ValueError):
                raise ConfigError(f"{name}.{key} must be a list of widths")
        elif key == "constants":
            if not isinstance(value, dict):
                raise ConfigError(f"{name}.{key} must be a mapping")
            value = {str(k): float(v) for k, v in value.items()}
        elif value is not None and type(current) in _CASTS:
            try:
                value = _CASTS[type(current)](value)
            except (TypeError, ValueError):
                raise ConfigError(f"{name}.{key}: cannot interpret {value!r}")
        elif value is not None and current is None:
            # optional numeric fields
            try:
                value = float(value) if "." in str(value) or "e" in str(value).lower() else int(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{name}.{key}: cannot interpret {value!r}")
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    doc = dict(doc)
    version = doc.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"config must declare schema_version: {SCHEMA_VERSION} (got {version!r})"
        )
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        sections[name] = _build_section(name, cls, doc.get(name, {}))
    cfg = ExperimentConfig(**sections)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    if cfg.problem.kind not in ("transport", "heat", "kdv", "navier_stokes"):
        raise ConfigError(f"unknown problem kind {cfg.problem.kind!r}")
    if cfg.problem.d < 1:
        raise ConfigError("problem.d must be >= 1")
    if cfg.architecture.rank < 1:
        raise ConfigError("architecture.rank must be >= 1")
    if cfg.architecture.input_map not in (
        "auto",
        "identity",
        "periodic_embedding",
        "dirichlet_envelope",
    ):
        raise ConfigError(f"unknown input map {cfg.architecture.input_map!r}")
    if cfg.quadrature.points < 1 or cfg.quadrature.panels < 1:
        raise ConfigError("quadrature points and panels must be >= 1")
    if cfg.evolution.dt <= 0 or cfg.evolution.t_final <= 0:
        raise ConfigError("evolution.dt and t_final must be positive")
    if cfg.evolution.integrator not in ("modified_euler", "rk4"):
        raise ConfigError(f"unknown integrator {cfg.evolution.integrator!r}")
    if not 0 < cfg.evolution.rcond < 1:
        raise ConfigError("evolution.rcond must lie in (0, 1)")
    if cfg.output.cadence < 1:
        raise ConfigError("output.cadence must be >= 1")
    if cfg.fit.target <= 0:
        raise ConfigError("fit.target must be positive")
    from .partition import PartitionStrategy

    try:
        PartitionStrategy(cfg.strategy.kind, cfg.strategy.ratio, cfg.strategy.count)
    except ValueError as exc:
        raise ConfigError(f"strategy: {exc}")


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply dotted-path key=value pairs (e.g. evolution.dt=0.01) to a config dict."""
    doc = dict(doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        value = yaml.safe_load(raw)
        node = doc
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-mapping")
        node[keys[-1]] = value
    return doc


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})")
    if overrides:
        doc = apply_overrides(doc, overrides)
    return config_from_dict(doc)


def preset_names() -> list[str]:
    root = importlib.resources.files("tensor_galerkin") / "presets"
    return sorted(p.name[: -len(".yaml")] for p in root.iterdir() if p.name.endswith(".yaml"))


def preset_path(name: str) -> Path:
    root = importlib.resources.files("tensor_galerkin") / "presets"
    candidate = root / f"{name}.yaml"
    if not candidate.is_file():
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        )
    return Path(str(candidate))
