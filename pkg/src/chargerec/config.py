"""Run configuration: JSON file <-> dataclasses, with every default made explicit."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .agents import POLICY_KINDS, AgentConfig
from .errors import ConfigError
from .scenario import Scenario, bundled, bundled_path
from .training import TrainSchedule

CONFIG_FORMAT = 1
BUNDLED_SCENARIOS = ("desk", "micro")


def _coerce(value, default, name):
    """Cast a JSON value to the type of the field default; reject nonsense early."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        return tuple(_coerce(v, default[0] if default else 0, name) for v in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    return value


def _fill(cls, section: dict, name: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{name} must be an object")
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown {name} field(s): {', '.join(sorted(unknown))}")
    values = {k: _coerce(v, getattr(defaults, k), f"{name}.{k}") for k, v in section.items()}
    return dataclasses.replace(defaults, **values)


def _plain(obj) -> dict:
    d = dataclasses.asdict(obj)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


@dataclass
class RunConfig:
    scenario: str = "desk"  # a bundled name or a path to a scenario JSON
    policy: str = "conv"
    seed: int = 0
    out: str = "runs/latest"
    checkpoint: Optional[str] = None
    speed_km_per_step: Optional[float] = None  # overrides the scenario when set
    p_depart: Optional[float] = None
    train: TrainSchedule = field(default_factory=TrainSchedule)
    agent: AgentConfig = field(default_factory=AgentConfig)

    def validate(self) -> None:
        if self.policy not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.policy!r}; choose from {', '.join(POLICY_KINDS)}")
        if self.speed_km_per_step is not None and not self.speed_km_per_step > 0:
            raise ConfigError("speed_km_per_step must be positive")
        if self.p_depart is not None and not 0 < self.p_depart <= 1:
            raise ConfigError("p_depart must lie in (0, 1]")
        if self.checkpoint is not None and not Path(self.checkpoint).is_file():
            raise ConfigError(f"checkpoint file not found: {self.checkpoint}")
        self.train.validate()
        self.agent.validate()
        self.scenario_path()

    def schedule(self) -> TrainSchedule:
        """The training schedule with the run seed applied."""
        return dataclasses.replace(self.train, seed=self.seed)

    def scenario_path(self) -> Optional[Path]:
        p = Path(self.scenario)
        if p.is_file():
            return p
        if self.scenario in BUNDLED_SCENARIOS:
            return bundled_path(self.scenario)
        raise ConfigError(f"scenario file not found: {self.scenario}")

    def load_scenario(self) -> Scenario:
        p = Path(self.scenario)
        sc = Scenario.load(p) if p.is_file() else bundled(self.scenario) if self.scenario in BUNDLED_SCENARIOS else None
        if sc is None:
            raise ConfigError(f"scenario file not found: {self.scenario}")
        if self.speed_km_per_step is None and self.p_depart is None:
            return sc
        d = sc.to_dict()
        if self.speed_km_per_step is not None:
            d["speed_km_per_step"] = self.speed_km_per_step
        if self.p_depart is not None:
            d["p_depart"] = self.p_depart
        return Scenario.from_dict(d)

    def to_dict(self) -> dict:
        return {
            "format_version": CONFIG_FORMAT,
            "scenario": self.scenario,
            "policy": self.policy,
            "seed": self.seed,
            "out": self.out,
            "checkpoint": self.checkpoint,
            "speed_km_per_step": self.speed_km_per_step,
            "p_depart": self.p_depart,
            "train": _plain(self.train),
            "agent": _plain(self.agent),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        version = d.pop("format_version", CONFIG_FORMAT)
        if version != CONFIG_FORMAT:
            raise ConfigError(f"unsupported config format {version!r}")
        top = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - top
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        cfg = cls(
            train=_fill(TrainSchedule, d.pop("train", {}), "train"),
            agent=_fill(AgentConfig, d.pop("agent", {}), "agent"),
        )
        for key in ("scenario", "policy", "out"):
            if key in d:
                setattr(cfg, key, _coerce(d.pop(key), "", key))
        if "seed" in d:
            cfg.seed = _coerce(d.pop("seed"), 0, "seed")
        for key in ("checkpoint",):
            v = d.pop(key, None)
            setattr(cfg, key, None if v is None else _coerce(v, "", key))
        for key in ("speed_km_per_step", "p_depart"):
            v = d.pop(key, None)
            setattr(cfg, key, None if v is None else _coerce(v, 0.0, key))
        return cfg

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


def preset(name: str = "desk_train") -> RunConfig:
    """A run configuration shipped with the package (``data/<name>.json``)."""
    p = bundled_path(name)
    if not p.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return RunConfig.load(p)
