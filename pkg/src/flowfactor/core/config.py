"""Configuration loading for flowfactor."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import InputError

CONFIG_DIR = ".flowfactor"
CONFIG_FILE = "config.yaml"


@dataclass(frozen=True)
class FlowConfig:
    order: int = 4
    min_steps: int = 32
    steps_per_cell: int = 16
    steps: int | None = None  # explicit override of the step rule
    quad_panels: int = 64
    quad_tol: float = 1e-11
    max_quad_panels: int = 1024
    inverse_tol: float = 1e-12
    inverse_max_iters: int = 50

    def step_count(self, speed: float, t: float, h_min: float) -> int:
        """RK4 step count max(min_steps, ceil(steps_per_cell·speed·2π/h_min)).

        Flows longer than unit time scale the count by |t|.
        """
        if self.steps is not None:
            return max(1, int(self.steps))
        travel = max(1.0, abs(t)) * speed
        return max(self.min_steps, math.ceil(self.steps_per_cell * travel * 2.0 * math.pi / h_min))


@dataclass(frozen=True)
class NewtonConfig:
    eps: float = 0.1
    eps_floor: float = 1e-3
    max_iters: int = 30
    cutoff_start: float = 0.25
    cutoff_end: float = 1.0
    residual_c0: float = 1e-6
    residual_c1: float = 1e-4
    hyperbolic_margin: float = 0.05
    # plateau and support radii of the seed cut-off, as fractions of the chart half-width
    seed_inner: float = 0.45
    seed_outer: float = 0.95

    def __post_init__(self) -> None:
        if not 0.0 < self.eps <= 0.5:
            raise InputError(f"eps must lie in (0, 0.5], got {self.eps}")
        for name in ("cutoff_start", "cutoff_end"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise InputError(f"{name} must lie in (0, 1], got {value}")

    def cutoff(self, iteration: int) -> float:
        """Low-pass cutoff fraction for the given (0-based) iteration."""
        if self.max_iters <= 1:
            return self.cutoff_end
        frac = min(1.0, iteration / (self.max_iters - 1))
        return self.cutoff_start + (self.cutoff_end - self.cutoff_start) * frac


@dataclass(frozen=True)
class FactorizeConfig:
    near_identity: float = 0.05
    tolerance: float = 1e-4
    cover: str = "auto"  # auto | arcs3 | rect2x2 | rect3x2
    conjugation_tol: float = 1e-8
    frame_depth: int = 2
    seed: int = 0
    jobs: int = 1


@dataclass
class Config:
    flow: FlowConfig = field(default_factory=FlowConfig)
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    factorize: FactorizeConfig = field(default_factory=FactorizeConfig)


_SECTIONS = {"flow": FlowConfig, "newton": NewtonConfig, "factorize": FactorizeConfig}


def load_config(project_root: Path) -> Config:
    """Load config from .flowfactor/config.yaml, falling back to defaults."""
    config_path = project_root / CONFIG_DIR / CONFIG_FILE
    if config_path.exists():
        return _load_from_file(config_path)
    return Config()


def _load_from_file(config_path: Path) -> Config:
    """Load config from a YAML file. Unknown keys are ignored."""
    with open(config_path) as f:
        data = yaml.safe_load(f) or {}

    sections = {}
    for name, cls in _SECTIONS.items():
        raw = data.get(name) or {}
        known = {fl.name for fl in fields(cls)}
        sections[name] = cls(**{k: v for k, v in raw.items() if k in known})
    return Config(**sections)


def save_config(project_root: Path, config: Config) -> Path:
    """Save config to .flowfactor/config.yaml, omitting default values."""
    config_dir = project_root / CONFIG_DIR
    config_dir.mkdir(parents=True, exist_ok=True)
    config_path = config_dir / CONFIG_FILE

    data: dict = {}
    for name, cls in _SECTIONS.items():
        current = asdict(getattr(config, name))
        default = asdict(cls())
        changed = {k: v for k, v in current.items() if v != default[k]}
        if changed:
            data[name] = changed

    with open(config_path, "w") as f:
        yaml.dump(data, f, default_flow_style=False, sort_keys=False)

    return config_path
