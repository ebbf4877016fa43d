"""Experiment configuration files (TOML) for the command-line pipeline."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .learner import LearnerConfig
from .verifier import VerifierConfig

BENCHMARKS = ("rational2d", "poly3d")


class ConfigError(ValueError):
    pass


@dataclass
class SystemSection:
    name: str = "rational2d"
    dt: float = 0.1
    jacobian_step: float = 1e-5
    jacobian_zero_tol: float = 1e-9  # entries below this are set to exactly zero


@dataclass
class ApproximateSection:
    region: float = 1.5  # half-width of the training box
    grid: int = 150  # samples per axis
    hidden: list = field(default_factory=lambda: [16, 16])
    epochs: int = 2000
    learning_rate: float = 3e-3
    l1: float = 1e-4
    batch_size: int = 256
    refine_epochs: int = 0
    refine_power: float = 8.0
    refine_learning_rate: float = 3e-3
    refine_batch_size: int = 1024


@dataclass
class RoiSection:
    region: float = 1.5
    density: int = 150
    steps: int = 50
    conv_tol: float = 0.05
    tau: float = 0.9


@dataclass
class ErrorSection:
    eps: float = 0.005
    gammas: list = field(default_factory=lambda: [0.0, 0.01, 0.025, 0.05, 0.1])
    lipschitz_f: float | None = None  # when set, the sampled bound is inflated to a deterministic one


@dataclass
class SynthesizeSection:
    k: int = 1
    excluded_lo: list = field(default_factory=list)
    excluded_hi: list = field(default_factory=list)
    max_iter: int = 100
    compute_levels: bool = True
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)


@dataclass
class RoaSection:
    resolution: int = 301


@dataclass
class SimulateSection:
    n_trajectories: int = 500
    steps: int = 100
    policy: str = "corner"


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "out"
    system: SystemSection = field(default_factory=SystemSection)
    approximate: ApproximateSection = field(default_factory=ApproximateSection)
    roi: RoiSection = field(default_factory=RoiSection)
    error: ErrorSection = field(default_factory=ErrorSection)
    synthesize: SynthesizeSection = field(default_factory=SynthesizeSection)
    roa: RoaSection = field(default_factory=RoaSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    source: str | None = None

    @property
    def dim(self) -> int:
        return 2 if self.system.name == "rational2d" else 3


def _fill(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(unknown)}")
    kwargs = {}
    for key, val in data.items():
        if isinstance(val, dict):
            sub = {"verifier": VerifierConfig, "learner": LearnerConfig}.get(key)
            if sub is None:
                raise ConfigError(f"[{where}.{key}] is not a known section")
            val = _fill(sub, val, f"{where}.{key}")
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def from_dict(data: dict, source: str | None = None) -> ExperimentConfig:
    sections = {"system": SystemSection, "approximate": ApproximateSection, "roi": RoiSection,
                "error": ErrorSection, "synthesize": SynthesizeSection, "roa": RoaSection,
                "simulate": SimulateSection}
    top = {}
    for key, val in data.items():
        if key in sections:
            top[key] = _fill(sections[key], val, key)
        elif key in ("seed", "out"):
            top[key] = val
        else:
            raise ConfigError(f"unknown top-level key {key!r}")
    cfg = ExperimentConfig(**top, source=source)
    validate(cfg)
    return cfg


def load(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data, str(path))


def validate(cfg: ExperimentConfig) -> None:
    if cfg.system.name not in BENCHMARKS:
        raise ConfigError(f"unknown system {cfg.system.name!r}; choose one of {', '.join(BENCHMARKS)}")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    n = cfg.dim
    syn = cfg.synthesize
    if len(syn.excluded_lo) != n or len(syn.excluded_hi) != n:
        raise ConfigError(f"excluded box needs {n} lower and {n} upper bounds")
    if not all(lo < 0 < hi for lo, hi in zip(syn.excluded_lo, syn.excluded_hi)):
        raise ConfigError("excluded box must contain the origin in its interior")
    if syn.k < 0 or syn.max_iter < 1:
        raise ConfigError("k must be >= 0 and max_iter >= 1")
    if not (0 < cfg.roi.tau <= 1):
        raise ConfigError("roi.tau must lie in (0, 1]")
    for name, val in (("approximate.region", cfg.approximate.region), ("roi.region", cfg.roi.region),
                      ("error.eps", cfg.error.eps), ("system.dt", cfg.system.dt)):
        if not val > 0:
            raise ConfigError(f"{name} must be positive")
    if not cfg.error.gammas or any(g < 0 for g in cfg.error.gammas):
        raise ConfigError("error.gammas must be a nonempty list of nonnegative slopes")
    if cfg.simulate.policy not in ("zero", "uniform", "corner"):
        raise ConfigError("simulate.policy must be zero, uniform or corner")
    if cfg.approximate.grid < 2 or cfg.roi.density < 2 or cfg.roa.resolution < 2:
        raise ConfigError("grid sizes must be at least 2")
