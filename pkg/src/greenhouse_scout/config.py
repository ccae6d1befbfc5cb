"""Scenario configuration: one JSON document, strictly validated."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field

from .mission import DEFAULT_ROBOTS, RobotSpec, SolverConfig
from .scanplan import KinodynamicLimits, ScanParams
from .vehicle import Gains, VehicleParams
from .worldsim.layout import LayoutParams
from .worldsim.sensor import CameraIntrinsics, DetectorModel
from .worldsim.world import WorldParams
from .yieldcount import CountingParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorldSection:
    fruiting_count: int = 20
    peppers_per_side: tuple = (1, 5)
    params: WorldParams = field(default_factory=WorldParams)


@dataclass(frozen=True)
class TrajectorySection:
    grid_n: int = 200
    dt: float = 0.01


@dataclass(frozen=True)
class TrackingSection:
    mode: str = "tracked"  # or "planned"
    dt: float = 1e-3
    rotor_layout: str = "cross"
    # frozen after tuning the default gains on the default row scan
    rms_threshold: float = 0.02
    log_decimation: int = 10  # every n-th sample is written to disk

    def __post_init__(self):
        if self.mode not in ("tracked", "planned"):
            raise ConfigError(f"tracking.mode must be 'tracked' or 'planned', got {self.mode!r}")


@dataclass(frozen=True)
class SensorSection:
    frame_rate: float = 10.0
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    detector: DetectorModel = field(default_factory=DetectorModel)


@dataclass(frozen=True)
class MissionSection:
    robots: tuple = DEFAULT_ROBOTS
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(agents=2, population=16, generations=150,
                                                                      patience=30))


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    layout: LayoutParams = field(default_factory=LayoutParams)
    world: WorldSection = field(default_factory=WorldSection)
    scan: ScanParams = field(default_factory=ScanParams)
    limits: KinodynamicLimits = field(default_factory=KinodynamicLimits)
    trajectory: TrajectorySection = field(default_factory=TrajectorySection)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    gains: Gains = field(default_factory=Gains)
    tracking: TrackingSection = field(default_factory=TrackingSection)
    sensor: SensorSection = field(default_factory=SensorSection)
    counting: CountingParams = field(default_factory=CountingParams)
    mission: MissionSection = field(default_factory=MissionSection)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return dataclasses.replace(self, seed=int(seed))


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    if hasattr(obj, "tolist"):
        return obj.tolist()
    return obj


def to_dict(cfg) -> dict:
    return _to_plain(cfg)


def _tupleize(v):
    return tuple(_tupleize(x) for x in v) if isinstance(v, list) else v


def _build(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return from_dict(tp, value, where)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _build(args[0], value, where)
    if tp is tuple and isinstance(value, list):
        return _tupleize(value)
    if tp is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is bool and not isinstance(value, bool):
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    if tp is str and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def from_dict(cls, data: dict, where: str = "config"):
    """Instantiate dataclass ``cls`` from plain data, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kwargs = {}
    for k, v in data.items():
        if cls is MissionSection and k == "robots":
            if not isinstance(v, list):
                raise ConfigError(f"{where}.robots: expected a list")
            kwargs[k] = tuple(from_dict(RobotSpec, r, f"{where}.robots[{i}]") for i, r in enumerate(v))
            continue
        kwargs[k] = _build(hints[k], v, f"{where}.{k}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{where}: {e}") from e


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(ScenarioConfig, data)


def save_config(cfg: ScenarioConfig, path):
    with open(path, "w") as fh:
        json.dump(to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def stage_seed(master: int, stage: str) -> int:
    """Per-stage seed derived from the master seed and the stage name."""
    h = hashlib.sha256(f"{int(master)}/{stage}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1
