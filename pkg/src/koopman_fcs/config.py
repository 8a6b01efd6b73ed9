"""Run configuration: one YAML file with nested sections, unknown keys rejected."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .drive import MotorParams
from .foc import FocConfig
from .sim import ConfigError, ScenarioConfig, TrainingConfig

DEFAULT_SCENARIOS = [
    {
        "name": "small-signal",
        "speed_rpm": 1000.0,
        "duration": 0.06,
        "schedule": [[0.0, 0.0, 0.0], [0.001, -25.0, 0.0], [0.011, -25.0, 25.0]],
        "foc": {"a": 3.0, "oversampling": 6},
    },
    {
        "name": "nominal",
        "speed_rpm": 1000.0,
        "duration": 0.06,
        "schedule": [[0.0, 0.0, 0.0], [0.001, -169.0, 169.0]],
        "foc": {"a": 4.0, "oversampling": 5},
    },
    {
        "name": "nominal-100rpm",
        "speed_rpm": 100.0,
        "duration": 0.5,
        "schedule": [[0.0, 0.0, 0.0], [0.001, -169.0, 169.0]],
    },
    {
        "name": "nominal-2500rpm",
        "speed_rpm": 2500.0,
        "duration": 0.04,
        "schedule": [[0.0, 0.0, 0.0], [0.001, -169.0, 169.0]],
    },
]


@dataclass
class ControlSection:
    t_s: float = 50e-6
    substeps: int = 50
    n_p: int = 3
    u_dc: float = 300.0
    delay_compensation: bool = True


@dataclass
class TrainingSection:
    speed_rpm: float = 1000.0
    duration: float = 0.4
    id_range: list = field(default_factory=lambda: [-170.0, 0.0])
    iq_range: list = field(default_factory=lambda: [-170.0, 170.0])
    dwell_range: list = field(default_factory=lambda: [0.5e-3, 2e-3])


@dataclass
class KoopmanSection:
    dictionary: str = "identity"
    tol: float = 1e-10
    min_pairs: int = 200
    holdout: float = 0.2
    bank_file: str = "bank.txt"


@dataclass
class FocSection:
    a: float = 4.0
    oversampling: int = 5
    feedforward: bool = True


@dataclass
class ScenarioSection:
    name: str
    speed_rpm: float = 1000.0
    duration: float = 0.06
    schedule: list = field(default_factory=lambda: [[0.0, 0.0, 0.0]])
    eps0: float = 0.0
    foc: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "out"
    motor: MotorParams = field(default_factory=MotorParams)
    control: ControlSection = field(default_factory=ControlSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    koopman: KoopmanSection = field(default_factory=KoopmanSection)
    foc: FocSection = field(default_factory=FocSection)
    scenarios: list = field(default_factory=lambda: [ScenarioSection(**copy.deepcopy(s)) for s in DEFAULT_SCENARIOS])

    # --- derived objects ---------------------------------------------------

    def training_config(self) -> TrainingConfig:
        t = self.training
        return TrainingConfig(
            speed_rpm=t.speed_rpm,
            u_dc=self.control.u_dc,
            duration=t.duration,
            id_range=tuple(t.id_range),
            iq_range=tuple(t.iq_range),
            dwell_range=tuple(t.dwell_range),
            min_pairs_per_vector=self.koopman.min_pairs,
            seed=self.seed,
        )

    def foc_config(self, overrides=None) -> FocConfig:
        base = dataclasses.asdict(self.foc)
        for key, value in (overrides or {}).items():
            if key not in base:
                raise ConfigError(f"unknown key foc.{key} in scenario")
            base[key] = value
        return FocConfig(t_s_foc=self.control.t_s, **base)

    def scenario_names(self):
        return [s.name for s in self.scenarios]

    def scenario(self, name: str, controller: str) -> ScenarioConfig:
        for s in self.scenarios:
            if s.name == name:
                return ScenarioConfig(
                    name=s.name,
                    speed_rpm=float(s.speed_rpm),
                    u_dc=self.control.u_dc,
                    duration=float(s.duration),
                    reference_schedule=[tuple(float(v) for v in row) for row in s.schedule],
                    controller=controller,
                    seed=self.seed,
                    eps0=float(s.eps0),
                    foc=self.foc_config(s.foc),
                )
        raise ConfigError(f"unknown scenario {name!r}; available: {', '.join(self.scenario_names())}")


def _section(cls, data, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section '{path}' must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{path}': {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{path}': {exc}") from None


def from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kw = {}
    for key in ("seed", "output_dir"):
        if key in data:
            kw[key] = data[key]
    kw["motor"] = _section(MotorParams, data.get("motor"), "motor")
    kw["control"] = _section(ControlSection, data.get("control"), "control")
    kw["training"] = _section(TrainingSection, data.get("training"), "training")
    kw["koopman"] = _section(KoopmanSection, data.get("koopman"), "koopman")
    kw["foc"] = _section(FocSection, data.get("foc"), "foc")
    if "scenarios" in data:
        if not isinstance(data["scenarios"], list):
            raise ConfigError("'scenarios' must be a list")
        kw["scenarios"] = [
            _section(ScenarioSection, s, f"scenarios[{i}]") for i, s in enumerate(data["scenarios"])
        ]
    cfg = RunConfig(**kw)
    if not isinstance(cfg.seed, int):
        raise ConfigError("seed must be an integer")
    return cfg


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def apply_override(data: dict, assignment: str) -> dict:
    """Apply ``section.key=value`` (value parsed as YAML) to a raw config dict."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError("empty --set key")
    value = yaml.safe_load(raw)
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: '{p}' is not a section")
    node[parts[-1]] = value
    return data


def load(path=None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
    for item in overrides:
        apply_override(data, item)
    return from_dict(data)
