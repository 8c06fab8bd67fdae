"""Scenario configuration: schema, defaults and YAML/JSON loading."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..attacks import AttackVector
from ..calibration import DEFAULT_EXPONENT, SelectionSpec
from ..geometry import SensorNetwork
from ..measurement import DEFAULT_SIGMA, SignalParams
from ..protocol import AdversaryModel

DEFAULT_2D = ((-8000.0, 8000.0), (8000.0, 8000.0), (8000.0, -8000.0), (-8000.0, -8000.0))
ALTITUDES_3D = (600.0, 1250.0, 900.0, 700.0)
FIFTH_SENSOR_3D = (6000.0, -6000.0, 400.0)
DEFAULT_SOURCE = (3333.3, -889.1111)
DEFAULT_CALIB = (0.0, -4000.0)
SOURCE_ALTITUDE_3D = 350.0
DEFAULT_TRAJECTORY_2D = ((-6000.0, -3000.0), (6000.0, 1000.0))
DEFAULT_TRAJECTORY_3D = ((-6000.0, 0.0, SOURCE_ALTITUDE_3D), (6000.0, 0.0, SOURCE_ALTITUDE_3D))
SWEEP_POINTS = 25
SWEEP_MIN = 1e-10
SWEEP_MAX = 50.0
LARGE_DELAY = 500.0


class ConfigError(ValueError):
    """Invalid or unreadable scenario configuration."""


def default_topology(dim: int = 2) -> SensorNetwork:
    """Four corner sensors on the 20 km grid; in 3D, altitudes plus a fifth sensor."""
    if dim == 2:
        return SensorNetwork(np.array(DEFAULT_2D))
    if dim == 3:
        pos = [(x, y, z) for (x, y), z in zip(DEFAULT_2D, ALTITUDES_3D)] + [FIFTH_SENSOR_3D]
        return SensorNetwork(np.array(pos))
    raise ValueError("dim must be 2 or 3")


def delay_sweep(points: int = SWEEP_POINTS) -> np.ndarray:
    """Log-spaced delays in (0, 50] seconds."""
    return np.logspace(math.log10(SWEEP_MIN), math.log10(SWEEP_MAX), points)


def template_attack(scenario: int, d: float, n_sensors: int = 4) -> AttackVector:
    """Per-sensor offsets of the five sweep scenarios for delay ``d``."""
    big = LARGE_DELAY
    table = {
        1: [0.0, 0.0, 0.0, 0.0],
        2: [d, 0.0, 0.0, 0.0],
        3: [d, d, 0.0, 0.0],
        4: [big, big + d, 0.0, d],
        5: [0.0, d, 2.0 * d, big],
    }
    if scenario not in table:
        raise ConfigError(f"unknown scenario template {scenario}")
    off = table[scenario] + [0.0] * (n_sensors - 4)
    return AttackVector(off[:n_sensors])


def straight_trajectory(start, end, instants: int = 9) -> np.ndarray:
    a = np.asarray(start, dtype=float)
    b = np.asarray(end, dtype=float)
    return a + (b - a) * np.linspace(0.0, 1.0, instants)[:, None]


@dataclass
class ProtocolConfig:
    adversary: str = "none"
    relay_latency: float = 1e-6
    jam_proportion: float = 0.0
    injected_delays: list[float] = field(default_factory=list)
    iterations: int = 15
    flag_probability: float = 0.5

    def adversary_model(self) -> AdversaryModel:
        return AdversaryModel(self.adversary, self.relay_latency, self.jam_proportion, tuple(self.injected_delays))


@dataclass
class AppendixConfig:
    a_values: list[float] = field(default_factory=lambda: [3.0, 6.0, 15000.0])
    q_values: list[float] = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4, 0.45, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    m: int = 160
    n: int = 30
    b: int = 12
    mu: float = 7e-7
    sigma: float = DEFAULT_SIGMA


@dataclass
class ScenarioConfig:
    sensors: Any = "default4"
    half_extent: float = 10_000.0
    source: list[float] | None = None
    trajectory: list[list[float]] | None = None
    instants: int = 9
    calib_source: list[float] | None = None
    sigma: float = DEFAULT_SIGMA
    signal: dict | None = None
    scenario: int | None = None
    scenario_id: int | None = None
    delays: list[float] | None = None
    delay: float | None = None
    attack: list[float] | None = None
    schedule: list[list[float]] | None = None
    calib_n: int = 15
    selection: dict | None = None
    v: float = DEFAULT_EXPONENT
    seed: int = 0
    trials: int = 500
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    appendix: AppendixConfig = field(default_factory=AppendixConfig)

    def __post_init__(self):
        if isinstance(self.protocol, dict):
            self.protocol = _build(ProtocolConfig, self.protocol, "protocol")
        if isinstance(self.appendix, dict):
            self.appendix = _build(AppendixConfig, self.appendix, "appendix")
        self.validate()

    # -- derived objects --------------------------------------------------

    def network(self) -> SensorNetwork:
        if self.sensors == "default4":
            return default_topology(2)
        if self.sensors == "default5_3d":
            return default_topology(3)
        if isinstance(self.sensors, str):
            raise ConfigError(f"unknown sensor preset {self.sensors!r}")
        try:
            return SensorNetwork(np.asarray(self.sensors, dtype=float))
        except ValueError as exc:
            raise ConfigError(f"invalid sensor positions: {exc}") from exc

    @property
    def dim(self) -> int:
        return self.network().dim

    def source_point(self) -> np.ndarray:
        if self.source is not None:
            return np.asarray(self.source, dtype=float)
        if self.dim == 3:
            return np.array([*DEFAULT_SOURCE, SOURCE_ALTITUDE_3D])
        return np.array(DEFAULT_SOURCE)

    def calib_point(self) -> np.ndarray:
        if self.calib_source is not None:
            return np.asarray(self.calib_source, dtype=float)
        return np.array([*DEFAULT_CALIB, 0.0][: self.dim])

    def trajectory_points(self) -> np.ndarray:
        if self.trajectory is not None:
            pts = np.asarray(self.trajectory, dtype=float)
            if len(pts) == 2 and self.instants != 2:
                return straight_trajectory(pts[0], pts[1], self.instants)
            return pts
        start, end = DEFAULT_TRAJECTORY_3D if self.dim == 3 else DEFAULT_TRAJECTORY_2D
        return straight_trajectory(start, end, self.instants)

    def params(self) -> SignalParams:
        if self.signal:
            try:
                return SignalParams(**self.signal)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid signal parameters: {exc}") from exc
        return SignalParams.fixed(self.sigma)

    def selection_spec(self) -> SelectionSpec | None:
        if not self.selection:
            return None
        try:
            return SelectionSpec(**self.selection)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid selection: {exc}") from exc

    def delay_values(self) -> np.ndarray:
        if self.scenario in (None, 1):
            return np.array([0.0])
        if self.delays is not None:
            return np.asarray(self.delays, dtype=float)
        return delay_sweep()

    def attack_vector(self, delay: float | None = None) -> AttackVector:
        """Static attack: explicit offsets, else the template at ``delay``."""
        k = self.network().n_sensors
        if self.attack is not None:
            return AttackVector(self.attack)
        if self.scenario is not None:
            d = delay if delay is not None else (self.delay if self.delay is not None else float(self.delay_values()[0]))
            return template_attack(self.scenario, d, k)
        return AttackVector.none(k)

    def schedule_vectors(self, instants: int) -> list[AttackVector]:
        if self.schedule is not None:
            if len(self.schedule) != instants:
                raise ConfigError("schedule needs one attack vector per trajectory instant")
            return [AttackVector(s) for s in self.schedule]
        return [self.attack_vector()] * instants

    @property
    def report_id(self) -> int:
        if self.scenario_id is not None:
            return self.scenario_id
        return self.scenario if self.scenario is not None else 0

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.calib_n < 1:
            raise ConfigError("calib_n must be >= 1")
        if self.half_extent <= 0:
            raise ConfigError("half_extent must be positive")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.v <= 0:
            raise ConfigError("v must be positive")
        if self.instants < 1:
            raise ConfigError("instants must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.scenario is not None and self.scenario not in (1, 2, 3, 4, 5):
            raise ConfigError(f"scenario must be 1-5, got {self.scenario}")
        net = self.network()
        dim, k = net.dim, net.n_sensors
        for name, pt in (("source", self.source), ("calib_source", self.calib_source)):
            if pt is not None and len(pt) != dim:
                raise ConfigError(f"{name} has {len(pt)} coordinates, network is {dim}D")
        if self.trajectory is not None:
            traj = np.asarray(self.trajectory, dtype=float)
            if traj.ndim != 2 or traj.shape[1] != dim or len(traj) < 1:
                raise ConfigError(f"trajectory must be a list of {dim}D points")
        if self.attack is not None and len(self.attack) != k:
            raise ConfigError(f"attack needs {k} offsets, got {len(self.attack)}")
        if self.schedule is not None and any(len(s) != k for s in self.schedule):
            raise ConfigError(f"every schedule entry needs {k} offsets")
        if self.scenario is not None and k < 4:
            raise ConfigError("scenario templates need at least four sensors")
        if self.delays is not None and any(d < 0 for d in self.delays):
            raise ConfigError("delays must be non-negative")
        self.params()
        self.selection_spec()
        try:
            self.protocol.adversary_model()
        except ValueError as exc:
            raise ConfigError(f"invalid protocol adversary: {exc}") from exc
        if self.protocol.iterations < 1:
            raise ConfigError("protocol iterations must be >= 1")
        if not 0 < self.protocol.flag_probability <= 1:
            raise ConfigError("flag_probability must lie in (0, 1]")
        app = self.appendix
        if not 1 <= app.n <= app.m or app.b < 2:
            raise ConfigError("appendix needs 1 <= n <= m and b >= 2")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            out[f.name] = val.__dict__.copy() if f.name in ("protocol", "appendix") else val
        return out


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    return _build(ScenarioConfig, data, "config")


def load_config(path) -> ScenarioConfig:
    """Read a YAML or JSON scenario file (chosen by extension, YAML otherwise)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(data or {})
