"""Point-mass UAV motion, waypoint mobility and maneuver execution.

Frame: x east, y north, z up. Headings are radians counter-clockwise from +x,
so a right turn is a clockwise (negative) heading offset.
"""
from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


class ManeuverClass(enum.IntEnum):
    NoChange = 0
    AltUp10 = 1
    AltDown10 = 2
    LeftTurn = 3
    RightTurn = 4
    SlowDown = 5

    @classmethod
    def parse(cls, name: str) -> "ManeuverClass":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown maneuver class {name!r}") from None


class Status(enum.Enum):
    Nominal = "nominal"
    Maneuvering = "maneuvering"
    Degraded = "degraded"


@dataclass(frozen=True)
class ManeuverParams:
    """Calibration constants for maneuver execution."""

    climb_rate: float = 2.0  # m/s
    turn_rate: float = math.radians(30.0)  # rad/s
    turn_offset: float = math.radians(30.0)  # rad
    slow_factor: float = 0.6
    duration_ms: int = 10_000
    alt_step: float = 10.0
    z_min: float = 100.0
    z_max: float = 150.0


@dataclass(frozen=True)
class ManeuverEffect:
    cls: ManeuverClass
    started_at: int
    duration: int

    @property
    def ends_at(self) -> int:
        return self.started_at + self.duration


@dataclass(slots=True)
class UavState:
    id: int
    x: float
    y: float
    z: float
    speed: float
    heading: float
    base_speed: float
    itinerary: tuple[tuple[float, float], ...]
    cursor: int = 0
    climb_rate: float = 0.0
    target_altitude: float | None = None
    maneuver: ManeuverEffect | None = None
    steer_offset: float = 0.0  # rad, added to the waypoint bearing during a turn
    status: Status = Status.Nominal
    in_coverage: bool = True
    deliveries_done: int = 0

    def __post_init__(self):
        if self.target_altitude is None:
            self.target_altitude = self.z
        self.heading %= TWO_PI

    @property
    def pos(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    @property
    def velocity(self) -> tuple[float, float, float]:
        return (
            self.speed * math.cos(self.heading),
            self.speed * math.sin(self.heading),
            self.climb_rate,
        )

    @property
    def waypoint(self) -> tuple[float, float]:
        return self.itinerary[self.cursor]

    def copy(self) -> "UavState":
        return copy.copy(self)


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, TWO_PI)
    if a <= 0.0:
        a += TWO_PI
    return a - math.pi


def _idle_status(u: UavState) -> Status:
    return Status.Nominal if u.in_coverage else Status.Degraded


def _end_effect(u: UavState) -> None:
    u.maneuver = None
    u.steer_offset = 0.0
    u.speed = u.base_speed
    u.status = _idle_status(u)


def step_inplace(u: UavState, dt: float, now_ms: int, params: ManeuverParams,
                 area_side: float | None = None) -> None:
    """Advance ``u`` by one substep of ``dt`` seconds starting at ``now_ms``."""
    m = u.maneuver
    if m is not None and now_ms >= m.started_at + m.duration:
        _end_effect(u)

    wx, wy = u.itinerary[u.cursor]
    dx = wx - u.x
    dy = wy - u.y
    desired = (math.atan2(dy, dx) if (dx or dy) else u.heading) + u.steer_offset
    diff = wrap_angle(desired - u.heading)
    max_turn = params.turn_rate * dt
    if abs(diff) <= max_turn:
        heading = u.heading + diff
    else:
        heading = u.heading + math.copysign(max_turn, diff)
    heading %= TWO_PI
    u.heading = heading

    x = u.x + u.speed * math.cos(heading) * dt
    y = u.y + u.speed * math.sin(heading) * dt
    if area_side is not None:
        x = min(max(x, 0.0), area_side)
        y = min(max(y, 0.0), area_side)
    u.x = x
    u.y = y

    dz = u.target_altitude - u.z
    if dz == 0.0:
        u.climb_rate = 0.0
    else:
        rate = abs(u.climb_rate) or params.climb_rate
        step = rate * dt
        if abs(dz) <= step:
            u.z = u.target_altitude
            u.climb_rate = 0.0
        else:
            u.z += math.copysign(step, dz)
            u.climb_rate = math.copysign(rate, dz)


def step_uav(state: UavState, dt: float, now_ms: int = 0,
             params: ManeuverParams | None = None,
             area_side: float | None = None) -> UavState:
    """Return a copy of ``state`` advanced by ``dt`` seconds."""
    out = state.copy()
    step_inplace(out, dt, now_ms, params or ManeuverParams(), area_side)
    return out


def apply_inplace(u: UavState, cls: ManeuverClass, now_ms: int,
                  params: ManeuverParams) -> None:
    if cls is ManeuverClass.NoChange:
        return
    if u.maneuver is not None:
        _end_effect(u)
    if cls is ManeuverClass.AltUp10 or cls is ManeuverClass.AltDown10:
        delta = params.alt_step if cls is ManeuverClass.AltUp10 else -params.alt_step
        target = min(max(u.target_altitude + delta, params.z_min), params.z_max)
        u.target_altitude = target
        if target > u.z:
            u.climb_rate = params.climb_rate
        elif target < u.z:
            u.climb_rate = -params.climb_rate
        else:
            u.climb_rate = 0.0
    elif cls is ManeuverClass.LeftTurn:
        u.steer_offset = params.turn_offset
    elif cls is ManeuverClass.RightTurn:
        u.steer_offset = -params.turn_offset
    elif cls is ManeuverClass.SlowDown:
        u.speed = params.slow_factor * u.base_speed
    u.maneuver = ManeuverEffect(cls, now_ms, params.duration_ms)
    u.status = Status.Maneuvering


def apply_maneuver(state: UavState, cls: ManeuverClass, now: int,
                   params: ManeuverParams | None = None) -> UavState:
    """Return a copy of ``state`` with ``cls`` commanded at time ``now`` (ms).

    A new command replaces any active effect; NoChange leaves the state alone.
    Altitude targets are clamped to the configured band range.
    """
    out = state.copy()
    apply_inplace(out, ManeuverClass(cls), now, params or ManeuverParams())
    return out


def advance_inplace(u: UavState, arrival_radius: float) -> bool:
    wx, wy = u.itinerary[u.cursor]
    if math.hypot(wx - u.x, wy - u.y) < arrival_radius:
        u.deliveries_done += 1
        u.cursor = (u.cursor + 1) % len(u.itinerary)
        return True
    return False


def advance_waypoint(state: UavState, arrival_radius: float) -> tuple[UavState, bool]:
    out = state.copy()
    delivered = advance_inplace(out, arrival_radius)
    return (out if delivered else state), delivered


# ---------------------------------------------------------------------------
# Vectorised rollout used by the maneuver oracle
# ---------------------------------------------------------------------------

@dataclass
class RolloutBatch:
    """Struct-of-arrays snapshot of ``B`` UAVs, all fields shape ``(B,)``."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    speed: np.ndarray
    heading: np.ndarray
    climb_rate: np.ndarray
    target_z: np.ndarray
    base_speed: np.ndarray
    wp_x: np.ndarray
    wp_y: np.ndarray
    steer_offset: np.ndarray
    effect_end: np.ndarray  # ms, inf when no effect is active
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_states(cls, states, now_ms: int = 0) -> "RolloutBatch":
        def arr(f):
            return np.array([f(s) for s in states], dtype=float)

        return cls(
            x=arr(lambda s: s.x), y=arr(lambda s: s.y), z=arr(lambda s: s.z),
            speed=arr(lambda s: s.speed), heading=arr(lambda s: s.heading),
            climb_rate=arr(lambda s: s.climb_rate),
            target_z=arr(lambda s: s.target_altitude),
            base_speed=arr(lambda s: s.base_speed),
            wp_x=arr(lambda s: s.waypoint[0]), wp_y=arr(lambda s: s.waypoint[1]),
            steer_offset=arr(lambda s: s.steer_offset),
            effect_end=arr(lambda s: np.inf if s.maneuver is None else s.maneuver.ends_at - now_ms),
        )

    def repeat(self, k: int) -> "RolloutBatch":
        """Each UAV repeated ``k`` times consecutively (B -> B*k)."""
        fields = {n: np.repeat(getattr(self, n), k) for n in _ROLLOUT_FIELDS}
        return RolloutBatch(**fields)


_ROLLOUT_FIELDS = ("x", "y", "z", "speed", "heading", "climb_rate", "target_z",
                   "base_speed", "wp_x", "wp_y", "steer_offset", "effect_end")


def _apply_batch(b: RolloutBatch, cls: np.ndarray, p: ManeuverParams) -> None:
    active = cls != ManeuverClass.NoChange
    # replacing an active effect restores nominal speed and steering
    b.speed = np.where(active, b.base_speed, b.speed)
    b.steer_offset = np.where(active, 0.0, b.steer_offset)
    b.effect_end = np.where(active, float(p.duration_ms), b.effect_end)

    up = cls == ManeuverClass.AltUp10
    down = cls == ManeuverClass.AltDown10
    vert = up | down
    new_t = np.clip(b.target_z + np.where(up, p.alt_step, -p.alt_step), p.z_min, p.z_max)
    b.target_z = np.where(vert, new_t, b.target_z)
    rate = np.where(b.target_z > b.z, p.climb_rate, np.where(b.target_z < b.z, -p.climb_rate, 0.0))
    b.climb_rate = np.where(vert, rate, b.climb_rate)

    left = cls == ManeuverClass.LeftTurn
    right = cls == ManeuverClass.RightTurn
    b.steer_offset = np.where(left, p.turn_offset, np.where(right, -p.turn_offset, b.steer_offset))
    b.speed = np.where(cls == ManeuverClass.SlowDown, p.slow_factor * b.base_speed, b.speed)


def _step_batch(b: RolloutBatch, dt: float, t_ms: float, p: ManeuverParams) -> None:
    expired = t_ms >= b.effect_end
    if expired.any():
        b.speed = np.where(expired, b.base_speed, b.speed)
        b.steer_offset = np.where(expired, 0.0, b.steer_offset)
        b.effect_end = np.where(expired, np.inf, b.effect_end)

    dx = b.wp_x - b.x
    dy = b.wp_y - b.y
    bearing = np.where((dx != 0) | (dy != 0), np.arctan2(dy, dx), b.heading)
    desired = bearing + b.steer_offset
    diff = np.fmod(desired - b.heading + np.pi, TWO_PI)
    diff = np.where(diff <= 0.0, diff + TWO_PI, diff) - np.pi
    max_turn = p.turn_rate * dt
    heading = np.where(np.abs(diff) <= max_turn, b.heading + diff,
                       b.heading + np.copysign(max_turn, diff))
    b.heading = np.mod(heading, TWO_PI)
    b.x = b.x + b.speed * np.cos(b.heading) * dt
    b.y = b.y + b.speed * np.sin(b.heading) * dt

    dz = b.target_z - b.z
    rate = np.abs(b.climb_rate)
    rate = np.where(rate == 0.0, p.climb_rate, rate)
    step = rate * dt
    snap = np.abs(dz) <= step
    b.z = np.where(snap, b.target_z, b.z + np.copysign(step, dz))
    b.climb_rate = np.where(snap, 0.0, np.copysign(rate, dz))


def rollout(batch: RolloutBatch, cls: np.ndarray, params: ManeuverParams,
            n_steps: int, dt: float):
    """Yield ``(t_seconds, x, y, z)`` for t = 0, dt, ..., n_steps*dt.

    ``cls`` (shape ``(B,)``) is commanded at t=0. The batch is mutated.
    Waypoint advancement and arena clamping are not modelled here.
    """
    _apply_batch(batch, np.asarray(cls), params)
    yield 0.0, batch.x, batch.y, batch.z
    dt_ms = dt * 1000.0
    for k in range(n_steps):
        _step_batch(batch, dt, k * dt_ms, params)
        yield (k + 1) * dt, batch.x, batch.y, batch.z
