"""Neighbour search, trajectory forecasting and separation auditing."""
from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field

from .kinematics import ManeuverClass, UavState


# ---------------------------------------------------------------------------
# Spatial index
# ---------------------------------------------------------------------------

@dataclass
class SpatialIndex:
    cell: float
    extent: float | None
    cells: dict[tuple[int, int], list[int]]
    positions: dict[int, tuple[float, float, float]]

    def cell_of(self, uav_id: int) -> tuple[int, int]:
        x, y, _ = self.positions[uav_id]
        return (math.floor(x / self.cell), math.floor(y / self.cell))

    def __len__(self) -> int:
        return len(self.positions)


def build_index(uavs, cell: float = 100.0, extent: float | None = None) -> SpatialIndex:
    if cell <= 0:
        raise ValueError("cell size must be positive")
    cells: dict[tuple[int, int], list[int]] = defaultdict(list)
    positions = {}
    for u in uavs:
        positions[u.id] = (u.x, u.y, u.z)
        cells[(math.floor(u.x / cell), math.floor(u.y / cell))].append(u.id)
    return SpatialIndex(cell, extent, dict(cells), positions)


def neighbors_within(index: SpatialIndex, ego: UavState, radius: float) -> list[int]:
    """Ids other than ``ego`` within 3-D distance ``radius``, ascending."""
    ex, ey, ez = ego.x, ego.y, ego.z
    reach = math.ceil(radius / index.cell)
    cx, cy = math.floor(ex / index.cell), math.floor(ey / index.cell)
    r2 = radius * radius
    out = []
    cells, positions = index.cells, index.positions
    for i in range(cx - reach, cx + reach + 1):
        for j in range(cy - reach, cy + reach + 1):
            members = cells.get((i, j))
            if not members:
                continue
            for k in members:
                if k == ego.id:
                    continue
                x, y, z = positions[k]
                dx, dy, dz = x - ex, y - ey, z - ez
                if dx * dx + dy * dy + dz * dz <= r2:
                    out.append(k)
    out.sort()
    return out


def pairs_within(index: SpatialIndex, radius: float) -> list[tuple[int, int]]:
    """All unordered pairs (a < b) within 3-D distance ``radius``, sorted."""
    reach = math.ceil(radius / index.cell)
    offsets = [(di, dj) for di in range(-reach, reach + 1) for dj in range(-reach, reach + 1)
               if (di, dj) > (0, 0)]
    r2 = radius * radius
    cells, positions = index.cells, index.positions
    out = []

    def close(a, b):
        xa, ya, za = positions[a]
        xb, yb, zb = positions[b]
        dx, dy, dz = xa - xb, ya - yb, za - zb
        return dx * dx + dy * dy + dz * dz <= r2

    for (ci, cj), members in cells.items():
        n = len(members)
        for p in range(n):
            for q in range(p + 1, n):
                a, b = members[p], members[q]
                if close(a, b):
                    out.append((a, b) if a < b else (b, a))
        for di, dj in offsets:
            other = cells.get((ci + di, cj + dj))
            if not other:
                continue
            for a in members:
                for b in other:
                    if close(a, b):
                        out.append((a, b) if a < b else (b, a))
    out.sort()
    return out


# ---------------------------------------------------------------------------
# Closest point of approach
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CpaResult:
    t_cpa: float
    d_horiz: float
    d_vert: float
    sep_score: float
    t_sep: float = 0.0  # time at which sep_score is attained


def _segment_min(rx, ry, wx, wy, rz, wz, length, rh, rv):
    """Min over s in [0, length] of max(|r + w s| / rh, |rz + wz s| / rv)."""
    def f(s):
        return max(math.hypot(rx + wx * s, ry + wy * s) / rh, abs(rz + wz * s) / rv)

    cands = [0.0, length]
    ww = wx * wx + wy * wy
    if ww > 0:
        cands.append(-(rx * wx + ry * wy) / ww)
    if wz != 0:
        cands.append(-rz / wz)
    rv2, rh2 = rv * rv, rh * rh
    a = ww * rv2 - wz * wz * rh2
    b = 2.0 * (rx * wx + ry * wy) * rv2 - 2.0 * rz * wz * rh2
    c = (rx * rx + ry * ry) * rv2 - rz * rz * rh2
    if abs(a) > 1e-12 * max(ww * rv2, wz * wz * rh2, 1.0):
        disc = b * b - 4 * a * c
        if disc >= 0:
            sq = math.sqrt(disc)
            cands += [(-b - sq) / (2 * a), (-b + sq) / (2 * a)]
    elif b != 0:
        cands.append(-c / b)
    best_s, best = 0.0, math.inf
    for s in cands:
        if 0.0 <= s <= length:
            v = f(s)
            if v < best:
                best, best_s = v, s
    return best, best_s


def cpa(p1, v1, p2, v2, horizon: float, horiz_sep: float = 30.0, vert_sep: float = 10.0,
        target_z1: float | None = None, target_z2: float | None = None) -> CpaResult:
    """Closest point of approach of two linearly extrapolated aircraft.

    Horizontal motion is constant velocity. When ``target_z`` is given, the
    vertical rate stops once that altitude is reached, so the vertical profile
    is piecewise linear and the separation score is minimised per piece.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rx, ry = p2[0] - p1[0], p2[1] - p1[1]
    wx, wy = v2[0] - v1[0], v2[1] - v1[1]
    ww = wx * wx + wy * wy
    t_cpa = 0.0 if ww == 0 else min(max(-(rx * wx + ry * wy) / ww, 0.0), horizon)
    d_horiz = math.hypot(rx + wx * t_cpa, ry + wy * t_cpa)

    def stop_time(z, vz, target):
        if target is None or vz == 0:
            return math.inf
        t = (target - z) / vz
        return t if t > 0 else 0.0

    s1 = stop_time(p1[2], v1[2], target_z1)
    s2 = stop_time(p2[2], v2[2], target_z2)

    def z_at(z, vz, stop, t):
        return z + vz * min(t, stop)

    def dz_at(t):
        return z_at(p2[2], v2[2], s2, t) - z_at(p1[2], v1[2], s1, t)

    breaks = sorted({0.0, horizon, *(s for s in (s1, s2) if 0.0 < s < horizon)})
    best, best_t = math.inf, 0.0
    for t0, t1 in zip(breaks, breaks[1:]):
        vz1 = v1[2] if t0 < s1 else 0.0
        vz2 = v2[2] if t0 < s2 else 0.0
        m, s = _segment_min(rx + wx * t0, ry + wy * t0, wx, wy, dz_at(t0), vz2 - vz1,
                            t1 - t0, horiz_sep, vert_sep)
        if m < best:
            best, best_t = m, t0 + s
    return CpaResult(t_cpa, d_horiz, abs(dz_at(t_cpa)), best, best_t)


def cpa_states(a: UavState, b: UavState, horizon: float, horiz_sep: float,
               vert_sep: float) -> CpaResult:
    return cpa(a.pos, a.velocity, b.pos, b.velocity, horizon, horiz_sep, vert_sep,
               a.target_altitude, b.target_altitude)


# ---------------------------------------------------------------------------
# Conflict records
# ---------------------------------------------------------------------------

class Outcome(enum.Enum):
    Open = "open"
    Resolved = "resolved"
    LossOfSeparation = "loss"
    Expired = "expired"


@dataclass
class ConflictRecord:
    cid: int
    pair: tuple[int, int]
    detected_at: int
    t_cpa_at: int  # absolute ms of predicted closest approach
    reported_at: int | None = None
    command_at: int | None = None
    applied_at: int | None = None
    closed_at: int | None = None
    chosen: dict[int, ManeuverClass] = field(default_factory=dict)
    outcome: Outcome = Outcome.Open
    expired: bool = False
    min_sep_score_observed: float = math.inf

    @property
    def key(self) -> tuple[int, int, int]:
        return (*self.pair, self.detected_at)

    @property
    def is_terminal(self) -> bool:
        return self.outcome in (Outcome.Resolved, Outcome.LossOfSeparation)

    @property
    def resolution_time(self) -> int | None:
        if self.applied_at is None:
            return None
        return self.applied_at - self.detected_at


def detect_conflicts(world, config, index: SpatialIndex | None = None,
                     close_pairs=None, exclude=frozenset()) -> list[tuple[int, int]]:
    """Pairs within detection range predicted to lose separation.

    Pairs covered by a non-terminal record in ``world.open_conflicts`` and pairs
    in ``exclude`` (ongoing loss episodes) are skipped.
    """
    if close_pairs is None:
        if index is None:
            index = build_index(world.uavs, config.index_cell, config.area_side)
        close_pairs = pairs_within(index, config.detection_range)
    by_id = {u.id: u for u in world.uavs}
    out = []
    for a, b in close_pairs:
        if (a, b) in world.open_conflicts or (a, b) in exclude:
            continue
        res = cpa_states(by_id[a], by_id[b], config.forecast_horizon,
                         config.horiz_sep_threshold, config.vert_sep_threshold)
        if res.sep_score < 1.0:
            out.append((a, b))
    return out


class SeparationMonitor:
    """Tracks continuous loss-of-separation episodes per pair."""

    def __init__(self):
        self.active: set[tuple[int, int]] = set()

    def check(self, world, config, close_pairs, mark: bool = True) -> list[tuple[int, int]]:
        by_id = {u.id: u for u in world.uavs}
        rh, rv = config.horiz_sep_threshold, config.vert_sep_threshold
        violating = set()
        for a, b in close_pairs:
            ua, ub = by_id[a], by_id[b]
            if abs(ua.z - ub.z) < rv and math.hypot(ua.x - ub.x, ua.y - ub.y) < rh:
                violating.add((a, b))
        new = sorted(violating - self.active)
        self.active = violating
        if mark:
            for pair in new:
                rec = world.open_conflicts.get(pair)
                if rec is not None:
                    rec.outcome = Outcome.LossOfSeparation
        return new


def check_separation(world, config, monitor: SeparationMonitor | None = None,
                     index: SpatialIndex | None = None, close_pairs=None) -> list[tuple[int, int]]:
    """New loss-of-separation episodes at the current tick.

    A pair is in violation when horizontal distance < horiz_sep_threshold and
    vertical distance < vert_sep_threshold. Covering open records are marked
    LossOfSeparation.
    """
    if close_pairs is None:
        if index is None:
            index = build_index(world.uavs, config.index_cell, config.area_side)
        radius = math.hypot(config.horiz_sep_threshold, config.vert_sep_threshold)
        close_pairs = pairs_within(index, radius)
    monitor = monitor or SeparationMonitor()
    return monitor.check(world, config, close_pairs)
