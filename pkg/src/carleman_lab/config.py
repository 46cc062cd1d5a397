"""Experiment configuration: YAML files parsed into validated dataclasses.

Unknown keys are rejected at every level.  ``resolve`` turns a config into
the concrete objects the experiments need (domain, coefficients, kernel,
weight, final time).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import yaml

from .errors import ConfigError
from .geometry import CarlemanWeight, CoefficientField, Domain, make_coefficient_field, min_observation_time
from .memory_kernels import MemoryKernel, make_kernel

AUTO = "auto"
# final time used for "auto", as a multiple of the observation threshold
AUTO_T_FACTOR = 1.05
# cut-off width used for "auto", as a fraction of T - threshold
AUTO_EPS_FRACTION = 1.0 / 3.0


@dataclass(frozen=True)
class DomainConfig:
    n: int = 2
    lower: tuple = (0.0, 0.0)
    upper: tuple = (1.0, 1.0)
    cells: int = 32

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ConfigError("domain.n must be 1 or 2")
        if len(self.lower) != self.n or len(self.upper) != self.n:
            raise ConfigError("domain.lower and domain.upper need n entries")
        if int(self.cells) < 4:
            raise ConfigError("domain.cells must be at least 4")

    @property
    def h(self) -> float:
        return (self.upper[0] - self.lower[0]) / self.cells

    def build(self) -> Domain:
        return Domain(tuple(self.lower), tuple(self.upper), self.h)


@dataclass(frozen=True)
class PresetConfig:
    preset: str = "identity"
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class WeightConfig:
    x0: tuple = (-0.5, 0.5)
    beta: float = 1.0
    gamma: float = 1.0
    eps: Union[float, str] = AUTO


@dataclass(frozen=True)
class TimeConfig:
    T: Union[float, str] = AUTO
    dt: Union[float, str] = AUTO

    def __post_init__(self):
        for name in ("T", "dt"):
            v = getattr(self, name)
            if isinstance(v, str) and v != AUTO:
                raise ConfigError(f"time.{name} must be a number or 'auto'")
            if not isinstance(v, str) and not float(v) > 0:
                raise ConfigError(f"time.{name} must be positive")


@dataclass(frozen=True)
class SourceConfig:
    mode: str = "none"  # none | separated | manufactured
    r_amplitude: float = 0.5
    f: dict = field(default_factory=lambda: {"kind": "bump", "center": [0.45, 0.55], "radius": 0.3})
    initial: dict = field(default_factory=lambda: {"kind": "zero"})
    time: dict = field(default_factory=lambda: {"kind": "cosine", "omega": 1.0})

    def __post_init__(self):
        if self.mode not in ("none", "separated", "manufactured"):
            raise ConfigError(f"unknown source.mode {self.mode!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    s_min: float = 1.0
    s_max: float = 40.0
    s_points: int = 12
    forms: tuple = ("v_form", "first_order", "second_order")
    gammas: tuple = (0.5, 1.0, 2.0)
    boundary: str = "weighted"
    boundary_C: float = 0.0
    memory_s: tuple = (8.0, 64.0)
    memory_q: float = 1.0
    memory_samples: int = 3
    n_xi: int = 64
    ensemble_size: int = 20
    max_mode: int = 8
    data_order: int = 3
    refine: bool = False
    negative_control: bool = False
    control_cells: int = 0
    alpha: float = 0.0
    alphas: tuple = ()
    noise: float = 0.0
    max_iters: int = 200
    tol: float = 1e-8
    target_error: float = 0.05
    crime_check: bool = True
    crime_digits: float = 1.0
    bound_limit: float = 1e6


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    arrays: bool = True


@dataclass(frozen=True)
class Config:
    domain: DomainConfig = field(default_factory=DomainConfig)
    coefficients: PresetConfig = field(default_factory=PresetConfig)
    kernel: PresetConfig = field(default_factory=lambda: PresetConfig("zero"))
    weight: WeightConfig = field(default_factory=WeightConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    source: SourceConfig = field(default_factory=SourceConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0


_SECTIONS = {
    "domain": DomainConfig,
    "coefficients": PresetConfig,
    "kernel": PresetConfig,
    "weight": WeightConfig,
    "time": TimeConfig,
    "source": SourceConfig,
    "experiment": ExperimentConfig,
    "output": OutputConfig,
}


def _coerce(value, default):
    """Convert YAML values to the type of the field default."""
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"expected a mapping, got {value!r}")
        return dict(value)
    return value


def _section(cls, data: Any, name: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(unknown)}")
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        default = getattr(defaults, key)
        if isinstance(default, str) and default == AUTO:
            kwargs[key] = value if value == AUTO else _coerce(value, 0.0)
        else:
            try:
                kwargs[key] = _coerce(value, default)
            except ConfigError as exc:
                raise ConfigError(f"{name}.{key}: {exc}") from None
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {name!r}: {exc}") from None


def config_from_dict(data: Optional[dict]) -> Config:
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(data) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
    kwargs = {k: _section(cls, data.get(k), k) for k, cls in _SECTIONS.items() if k in data}
    if "kernel" not in data:
        kwargs["kernel"] = PresetConfig("zero")
    if "seed" in data:
        kwargs["seed"] = _coerce(data["seed"], 0)
    return Config(**kwargs)


def load_config(path: Union[str, Path, None]) -> Config:
    if path is None:
        return Config()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return config_from_dict(data)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, list):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


def config_to_dict(cfg: Config) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = {g.name: _plain(getattr(value, g.name)) for g in dataclasses.fields(value)}
        else:
            out[f.name] = _plain(value)
    return out


def dump_config(cfg: Config) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True)


def with_seed(cfg: Config, seed: Optional[int]) -> Config:
    return cfg if seed is None else dataclasses.replace(cfg, seed=int(seed))


@dataclass
class Resolved:
    """Concrete objects built from a :class:`Config`."""

    config: Config
    domain: Domain
    field: CoefficientField
    kernel: MemoryKernel
    x0: tuple
    threshold: float
    T: float
    dt: Optional[float]
    eps: float

    def weight(self, gamma: Optional[float] = None) -> CarlemanWeight:
        w = self.config.weight
        return CarlemanWeight.normalized(self.domain, self.x0, w.beta, w.gamma if gamma is None else gamma)


def resolve(cfg: Config) -> Resolved:
    """Build the domain and friends.

    ``T = "auto"`` becomes 1.05 times the threshold; ``eps = "auto"`` puts the
    cut-off band ``T - 2 eps <= |t| <= T - eps`` beyond the threshold.
    """
    domain = cfg.domain.build()
    try:
        field_ = make_coefficient_field(cfg.coefficients.preset, domain.n, **cfg.coefficients.params)
        kernel = make_kernel(cfg.kernel.preset, domain.n, **cfg.kernel.params)
    except TypeError as exc:
        raise ConfigError(f"bad preset parameters: {exc}") from None
    x0 = tuple(float(v) for v in cfg.weight.x0)
    threshold = min_observation_time(domain, x0, cfg.weight.beta)
    T = AUTO_T_FACTOR * threshold if cfg.time.T == AUTO else float(cfg.time.T)
    dt = None if cfg.time.dt == AUTO else float(cfg.time.dt)
    if not math.isfinite(T) or T <= 0:
        raise ConfigError("final time must be positive")
    if cfg.weight.eps == AUTO:
        eps = AUTO_EPS_FRACTION * (T - threshold) if T > threshold else 0.05 * T
    else:
        eps = float(cfg.weight.eps)
    return Resolved(cfg, domain, field_, kernel, x0, threshold, T, dt, eps)
