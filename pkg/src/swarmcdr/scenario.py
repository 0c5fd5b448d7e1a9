"""Scenario configuration, deterministic random streams and world construction.

Configuration documents are line-oriented ``key = value`` text. ``#`` starts a
comment, lists are comma separated and enumerations are lower case::

    n_uavs = 200
    controller = centralized
    speed_range = 15, 25

Scripted UAVs (used by regression fixtures) are given with the repeatable key
``uav = x, y, z, heading_deg, speed, wp_x, wp_y``; when present they replace
the random initial swarm.
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .kinematics import ManeuverParams, UavState


class ConfigError(ValueError):
    pass


class ConfigParseError(ConfigError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ConfigValidationError(ConfigError):
    pass


class Controller(enum.Enum):
    Edge = "edge"
    Centralized = "centralized"


class PolicyKind(enum.Enum):
    Oracle = "oracle"
    Mlp = "mlp"


@dataclass(frozen=True)
class LatencyParams:
    uplink_ms: int = 20
    downlink_ms: int = 20
    inference_ms: int = 80
    handover_ms: int = 50
    central_backhaul_ms: int = 50
    budget_ms: int = 500

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigValidationError(f"{f.name} > 0 violated")
        if self.uplink_ms + self.inference_ms + self.downlink_ms > self.budget_ms:
            raise ConfigValidationError("uplink_ms + inference_ms + downlink_ms <= budget_ms violated")


@dataclass(frozen=True)
class ScriptedUav:
    x: float
    y: float
    z: float
    heading_deg: float
    speed: float
    wp_x: float
    wp_y: float


@dataclass(frozen=True)
class ScenarioConfig:
    area_side: float = 10_000.0
    n_uavs: int = 100
    n_edge_nodes: int = 9
    comm_range: float = 1_000.0
    horiz_sep_threshold: float = 30.0
    vert_sep_threshold: float = 10.0
    detection_range: float = 100.0
    resolution_deadline: int = 1_500
    tick: int = 100
    kinematics_substep: int = 100
    sim_duration: float = 600.0
    seed: int = 0
    speed_range: tuple[float, float] = (15.0, 25.0)
    altitude_bands: tuple[float, ...] = (100.0, 110.0, 120.0, 130.0, 140.0, 150.0)
    arrival_radius: float = 50.0
    forecast_horizon: float = 10.0
    controller: Controller = Controller.Edge
    policy: PolicyKind = PolicyKind.Oracle
    latency: LatencyParams = LatencyParams()
    n_delivery_points: int = 40
    # maneuver calibration
    climb_rate: float = 2.0
    turn_rate_deg: float = 30.0
    turn_offset_deg: float = 30.0
    slow_factor: float = 0.6
    maneuver_duration_ms: int = 10_000
    # engine plumbing
    index_cell: float = 100.0
    resolve_window_ms: int = 5_000
    scripted_uavs: tuple[ScriptedUav, ...] = ()

    def validate(self) -> "ScenarioConfig":
        positive = ("area_side", "n_uavs", "n_edge_nodes", "comm_range", "horiz_sep_threshold",
                    "vert_sep_threshold", "detection_range", "resolution_deadline", "tick",
                    "kinematics_substep", "sim_duration", "arrival_radius", "forecast_horizon",
                    "n_delivery_points", "climb_rate", "turn_rate_deg", "turn_offset_deg",
                    "slow_factor", "maneuver_duration_ms", "index_cell", "resolve_window_ms")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigValidationError(f"{name} > 0 violated")
        if not 0 <= self.seed < 2**64:
            raise ConfigValidationError("0 <= seed < 2^64 violated")
        if not self.detection_range > self.horiz_sep_threshold:
            raise ConfigValidationError("detection_range > horiz_sep_threshold violated")
        if not self.comm_range <= self.area_side:
            raise ConfigValidationError("comm_range <= area_side violated")
        if self.tick % self.kinematics_substep != 0:
            raise ConfigValidationError("kinematics_substep divides tick violated")
        if math.isqrt(self.n_edge_nodes) ** 2 != self.n_edge_nodes:
            raise ConfigValidationError("n_edge_nodes is a perfect square violated")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ConfigValidationError("0 < speed_range[0] <= speed_range[1] violated")
        if not self.altitude_bands or min(self.altitude_bands) <= 0:
            raise ConfigValidationError("altitude_bands non-empty and positive violated")
        if not self.slow_factor <= 1:
            raise ConfigValidationError("slow_factor <= 1 violated")
        if self.scripted_uavs and len(self.scripted_uavs) != self.n_uavs:
            raise ConfigValidationError("n_uavs equals number of scripted uav lines violated")
        self.latency.validate()
        return self

    def maneuver_params(self) -> ManeuverParams:
        return ManeuverParams(
            climb_rate=self.climb_rate,
            turn_rate=math.radians(self.turn_rate_deg),
            turn_offset=math.radians(self.turn_offset_deg),
            slow_factor=self.slow_factor,
            duration_ms=self.maneuver_duration_ms,
            z_min=min(self.altitude_bands),
            z_max=max(self.altitude_bands),
        )

    @property
    def max_speed(self) -> float:
        return self.speed_range[1]

    @property
    def n_ticks(self) -> int:
        return int(round(self.sim_duration * 1000)) // self.tick

    def replace(self, **changes) -> "ScenarioConfig":
        lat = {k: changes.pop(k) for k in list(changes) if k in _LATENCY_KEYS}
        if lat:
            changes["latency"] = dataclasses.replace(changes.get("latency", self.latency), **lat)
        return dataclasses.replace(self, **changes).validate()


_LATENCY_KEYS = {f.name for f in dataclasses.fields(LatencyParams)}
_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}


def _convert(key: str, raw: str, template):
    if isinstance(template, enum.Enum):
        try:
            return type(template)(raw.lower())
        except ValueError:
            choices = "|".join(m.value for m in type(template))
            raise ValueError(f"expected one of {choices}") from None
    if isinstance(template, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        values = tuple(float(s) for s in items)
        if key == "speed_range" and len(values) != 2:
            raise ValueError("expected two comma-separated numbers")
        return values
    if isinstance(template, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(template, int):
        return int(raw, 0)
    if isinstance(template, float):
        return float(raw)
    raise ValueError("unsupported key")


def load_config(text: str) -> ScenarioConfig:
    """Parse a ``key = value`` document; omitted keys take their defaults."""
    defaults = ScenarioConfig()
    values: dict = {}
    latency: dict = {}
    scripted: list[ScriptedUav] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(lineno, f"expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key.startswith("latency."):
            key = key[len("latency."):]
        try:
            if key == "uav":
                parts = [float(s) for s in raw.split(",")]
                if len(parts) != 7:
                    raise ValueError("expected x, y, z, heading_deg, speed, wp_x, wp_y")
                scripted.append(ScriptedUav(*parts))
            elif key in _LATENCY_KEYS:
                latency[key] = int(raw, 0)
            elif key in _CONFIG_FIELDS and key not in ("latency", "scripted_uavs"):
                values[key] = _convert(key, raw, getattr(defaults, key))
            else:
                raise ConfigParseError(lineno, f"unknown key {key!r}")
        except ConfigParseError:
            raise
        except ValueError as exc:
            raise ConfigParseError(lineno, f"bad value for {key!r}: {exc}") from None
    if latency:
        values["latency"] = LatencyParams(**latency)
    if scripted:
        values["scripted_uavs"] = tuple(scripted)
        values.setdefault("n_uavs", len(scripted))
    return ScenarioConfig(**values).validate()


def dump_config(config: ScenarioConfig) -> str:
    """Render ``config`` as a document that ``load_config`` reads back equal."""
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if f.name == "latency":
            for lf in dataclasses.fields(value):
                lines.append(f"{lf.name} = {getattr(value, lf.name)}")
        elif f.name == "scripted_uavs":
            for s in value:
                lines.append("uav = " + ", ".join(repr(float(v)) for v in dataclasses.astuple(s)))
        elif isinstance(value, enum.Enum):
            lines.append(f"{f.name} = {value.value}")
        elif isinstance(value, tuple):
            lines.append(f"{f.name} = " + ", ".join(repr(float(v)) for v in value))
        else:
            lines.append(f"{f.name} = {value!r}")
    return "\n".join(lines) + "\n"


def rng_stream(seed: int, stream_id: str) -> np.random.Generator:
    """Independent, reproducible generator for ``(seed, stream_id)``.

    The stream label is hashed with SHA-256; its first 8 bytes (little endian)
    and the seed form the entropy of a ``numpy.random.SeedSequence`` feeding a
    PCG64 bit generator.
    """
    label = int.from_bytes(hashlib.sha256(stream_id.encode("utf-8")).digest()[:8], "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), label])))


@dataclass
class WorldState:
    clock: int
    uavs: list[UavState]
    edge_nodes: list
    delivery_points: list[tuple[float, float]]
    open_conflicts: dict = field(default_factory=dict)
    event_log: list = field(default_factory=list)
    central: object = None


def edge_grid(n_nodes: int, side: float) -> list[tuple[float, float]]:
    """Cell centres of a sqrt(n) x sqrt(n) grid, row-major from the origin."""
    k = math.isqrt(n_nodes)
    return [((i + 0.5) * side / k, (j + 0.5) * side / k) for j in range(k) for i in range(k)]


def init_world(config: ScenarioConfig) -> WorldState:
    from .netmodel import EdgeNodeState

    side = config.area_side
    nodes = [EdgeNodeState(i, pos) for i, pos in enumerate(edge_grid(config.n_edge_nodes, side))]

    rng = rng_stream(config.seed, "delivery")
    pts = rng.uniform(0.05 * side, 0.95 * side, size=(config.n_delivery_points, 2))
    delivery = [(float(px), float(py)) for px, py in pts]

    uavs: list[UavState] = []
    if config.scripted_uavs:
        for i, s in enumerate(config.scripted_uavs):
            uavs.append(UavState(
                id=i, x=s.x, y=s.y, z=s.z, speed=s.speed, base_speed=s.speed,
                heading=math.radians(s.heading_deg), itinerary=((s.wp_x, s.wp_y),)))
        return WorldState(0, uavs, nodes, delivery)

    init = rng_stream(config.seed, "uav-init")
    order = rng_stream(config.seed, "itinerary")
    lo, hi = config.speed_range
    bands = config.altitude_bands
    for i in range(config.n_uavs):
        x, y = (float(v) for v in init.uniform(0.0, side, size=2))
        z = float(bands[int(init.integers(len(bands)))])
        speed = float(init.uniform(lo, hi)) if hi > lo else float(lo)
        perm = order.permutation(len(delivery))
        itinerary = tuple(delivery[int(k)] for k in perm)
        wx, wy = itinerary[0]
        heading = math.atan2(wy - y, wx - x)
        uavs.append(UavState(id=i, x=x, y=y, z=z, speed=speed, base_speed=speed,
                             heading=heading, itinerary=itinerary))
    return WorldState(0, uavs, nodes, delivery)
