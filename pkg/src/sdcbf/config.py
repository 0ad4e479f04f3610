"""Configuration loading: packaged defaults overlaid by a user TOML file.

One file, one section per module.  Validation collects every violation before
raising, so a bad config reports all its problems at once.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field, fields, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .dynamics import SegwayParams

VARIANTS = ("nominal", "robust", "robust_delay_aware", "unfiltered")
_VARIANT_ALIASES = {"robust+delay-aware": "robust_delay_aware",
                    "delay-aware": "robust_delay_aware",
                    "delay_aware": "robust_delay_aware"}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"- {p}" for p in self.problems))


@dataclass(frozen=True)
class SafetyConfig:
    position_bound: float = 0.5
    class_k_gain: float = 4.0
    backup_horizon: float = 1.0
    constraint_points: int = 10


@dataclass(frozen=True)
class BackupConfig:
    lqr_q: tuple = (6.0, 2.0, 60.0, 4.0)
    lqr_r: float = 0.08
    eps_level: float = 0.0
    eps_level_fraction: float = 0.9


@dataclass(frozen=True)
class SensitivityConfig:
    perturbation: float = 1e-5
    scheme: str = "central"
    det_floor: float = 0.0


@dataclass(frozen=True)
class SetopsConfig:
    reach_inflation: float = 1.1
    reach_max_iter: int = 20


@dataclass(frozen=True)
class SynthesisConfig:
    state_box_lo: tuple = (-0.6, -2.0, -0.3, -2.0)
    state_box_hi: tuple = (0.6, 2.0, 0.3, 2.0)
    state_scale: tuple = (15.0, 2.0, 0.3, 2.0)
    decrease_margin: float = 0.01
    max_iter: int = 400


@dataclass(frozen=True)
class EstimationConfig:
    measured: tuple = (0, 2, 3)
    noise_std: tuple = (0.002, 0.005, 0.01)
    process_noise_rate: tuple = (1e-7, 1e-5, 1e-7, 1e-5)
    init_cov: tuple = (1e-6, 1e-6, 1e-6, 1e-6)
    confidence_scale: float = 3.0
    box_caps: tuple = (0.03, 0.12, 0.03, 0.12)


@dataclass(frozen=True)
class FilterConfig:
    model_substeps: int = 1
    prediction_inflation: tuple = (0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ScenarioConfig:
    frequency_hz: float = 20.0
    duration_s: float = 20.0
    delay_s: float = 0.0
    variant: str = "robust"
    noise: bool = True
    seed: int = 0
    initial_state: tuple = (0.0, 0.0, 0.0, 0.0)
    plant_substeps: int = 10
    desired_setpoint: float = 0.8
    desired_lqr_q: tuple = (40.0, 4.0, 60.0, 4.0)
    desired_lqr_r: float = 0.05

    def validate(self) -> list[str]:
        problems = []
        if self.frequency_hz <= 0:
            problems.append(f"frequency_hz must be > 0, got {self.frequency_hz}")
        if self.duration_s <= 0:
            problems.append(f"duration_s must be > 0, got {self.duration_s}")
        if self.delay_s < 0:
            problems.append(f"delay_s must be >= 0, got {self.delay_s}")
        if self.variant not in VARIANTS:
            problems.append(f"variant {self.variant!r} not one of {VARIANTS}")
        if self.plant_substeps < 1:
            problems.append("plant_substeps must be >= 1")
        if len(self.initial_state) != 4:
            problems.append("initial_state must have 4 components")
        if self.frequency_hz > 0 and self.duration_s > 0:
            steps = self.duration_s * self.frequency_hz
            if abs(steps - round(steps)) > 1e-9:
                problems.append("duration_s * frequency_hz must be an integer number of steps")
        if self.delay_s > 0 and self.frequency_hz > 0 and self.plant_substeps >= 1:
            sub_h = 1.0 / self.frequency_hz / self.plant_substeps
            k = self.delay_s / sub_h
            if abs(k - round(k)) > 1e-9:
                problems.append(
                    "delay_s must be an integer number of plant substeps "
                    f"(substep {sub_h:.6g}s, delay {self.delay_s}s)")
        return problems


@dataclass(frozen=True)
class Config:
    segway: SegwayParams = field(default_factory=SegwayParams)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    backup: BackupConfig = field(default_factory=BackupConfig)
    sensitivity: SensitivityConfig = field(default_factory=SensitivityConfig)
    setops: SetopsConfig = field(default_factory=SetopsConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    def with_scenario(self, **overrides) -> "Config":
        return replace(self, scenario=replace(self.scenario, **overrides))


_SECTIONS = {
    "segway": SegwayParams,
    "safety": SafetyConfig,
    "backup": BackupConfig,
    "sensitivity": SensitivityConfig,
    "setops": SetopsConfig,
    "synthesis": SynthesisConfig,
    "estimation": EstimationConfig,
    "filter": FilterConfig,
    "scenario": ScenarioConfig,
}


def _coerce(cls, raw: dict, problems: list, section: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            problems.append(f"[{section}] unknown key {key!r}")
            continue
        if isinstance(value, list):
            value = tuple(value)
        if key == "variant" and isinstance(value, str):
            value = _VARIANT_ALIASES.get(value, value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        problems.append(f"[{section}] {exc}")
        return cls()


def _parse(data: dict) -> Config:
    problems: list[str] = []
    sections = {}
    for name, cls in _SECTIONS.items():
        sections[name] = _coerce(cls, data.get(name, {}), problems, name)
    for name in data:
        if name not in _SECTIONS:
            problems.append(f"unknown section [{name}]")
    cfg = Config(**sections)
    problems.extend(cfg.scenario.validate())
    if problems:
        raise ConfigError(problems)
    return cfg


def default_config_text() -> str:
    return importlib.resources.files("sdcbf").joinpath("defaults.toml").read_text()


def load_config(path=None) -> Config:
    """Packaged defaults, overlaid section-by-section by the user's file."""
    data = tomllib.loads(default_config_text())
    if path is not None:
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
        for section, values in user.items():
            if isinstance(values, dict):
                data.setdefault(section, {}).update(values)
            else:
                data[section] = values
    return _parse(data)


def synthesis_state_box(cfg: Config):
    from . import setops as so
    return so.Box(np.array(cfg.synthesis.state_box_lo),
                  np.array(cfg.synthesis.state_box_hi))
