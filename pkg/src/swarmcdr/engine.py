"""Deterministic simulation loop: fixed physics ticks plus a millisecond event queue."""
from __future__ import annotations

import csv
import enum
import hashlib
import heapq
import io
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detection import (ConflictRecord, Outcome, SeparationMonitor, build_index, cpa_states,
                        detect_conflicts, neighbors_within, pairs_within)
from .kinematics import ManeuverClass, Status, advance_inplace, apply_inplace, step_inplace
from .netmodel import (CENTRAL, ONBOARD, CentralStation, associate_all, handover, open_request,
                       serve_request)
from .policy import featurize, mlp_decide, oracle_decide
from .scenario import Controller, PolicyKind, ScenarioConfig, init_world


class EventKind(enum.IntEnum):
    Tick = 0
    Detect = 1
    Report = 2
    Command = 3
    Apply = 4
    Resolve = 5
    Loss = 6
    Expire = 7
    Handover = 8
    Delivery = 9
    Degraded = 10


@dataclass(frozen=True)
class LogEvent:
    time: int
    kind: EventKind
    id_a: int | None = None
    id_b: int | None = None
    detail: str = ""

    def sort_key(self):
        return (self.time, int(self.kind), -1 if self.id_a is None else self.id_a,
                -1 if self.id_b is None else self.id_b)

    def fields(self) -> dict[str, str]:
        if not self.detail:
            return {}
        return dict(item.split("=", 1) for item in self.detail.split(";"))


def fmt_detail(**kv) -> str:
    return ";".join(f"{k}={v}" for k, v in kv.items())


class LifecycleError(RuntimeError):
    pass


class EventQueue:
    """Min-heap of ``(due, seq, action)``; ``seq`` breaks ties in insertion order."""

    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()

    def push(self, due: int, action) -> None:
        heapq.heappush(self._heap, (due, next(self._seq), action))

    def pop_due(self, now: int):
        while self._heap and self._heap[0][0] <= now:
            due, _, action = heapq.heappop(self._heap)
            yield due, action

    def __len__(self) -> int:
        return len(self._heap)


def conflict_lifecycle(record: ConflictRecord, event: LogEvent) -> ConflictRecord:
    """Apply ``event`` to ``record`` in place and return it.

    Legal outcome transitions: Open -> Resolved | LossOfSeparation | Expired and
    Expired -> Resolved | LossOfSeparation. Anything else raises LifecycleError.
    """
    kind, t = event.kind, event.time
    if t < record.detected_at:
        raise LifecycleError(f"conflict {record.cid}: event at {t} precedes detection")
    if record.is_terminal:
        raise LifecycleError(f"conflict {record.cid}: {kind.name} after terminal {record.outcome.name}")
    if kind is EventKind.Report:
        if record.reported_at is None:
            record.reported_at = t
    elif kind is EventKind.Command:
        if record.command_at is None:
            record.command_at = t
    elif kind is EventKind.Apply:
        if record.applied_at is None:
            record.applied_at = t
            if record.reported_at is None:
                record.reported_at = t
            if record.command_at is None:
                record.command_at = t
    elif kind is EventKind.Expire:
        if record.outcome is not Outcome.Open or record.applied_at is not None:
            raise LifecycleError(f"conflict {record.cid}: cannot expire from {record.outcome.name}")
        record.outcome = Outcome.Expired
        record.expired = True
    elif kind is EventKind.Resolve:
        if record.applied_at is None:
            raise LifecycleError(f"conflict {record.cid}: resolved without an applied maneuver")
        record.outcome = Outcome.Resolved
        record.closed_at = t
    elif kind is EventKind.Loss:
        record.outcome = Outcome.LossOfSeparation
        record.closed_at = t
    else:
        raise LifecycleError(f"conflict {record.cid}: {kind.name} is not a lifecycle event")
    return record


def right_of_way(lower: ManeuverClass, higher: ManeuverClass) -> tuple[ManeuverClass, ManeuverClass]:
    """Split a duplicate altitude command: the lower id climbs, the higher id descends."""
    vertical = (ManeuverClass.AltUp10, ManeuverClass.AltDown10)
    if lower is higher and lower in vertical:
        return vertical
    return lower, higher


class Simulation:
    """One run of the swarm under a fixed configuration."""

    def __init__(self, config: ScenarioConfig, model=None):
        if config.policy is PolicyKind.Mlp and model is None:
            raise ValueError("policy=mlp requires a trained model")
        self.cfg = config
        self.model = model
        self.params = config.maneuver_params()
        self.world = init_world(config)
        side = config.area_side
        self.world.central = CentralStation((side / 2, side / 2))
        self.by_id = {u.id: u for u in self.world.uavs}
        self.queue = EventQueue()
        self.events: list[LogEvent] = []
        self.records: dict[int, ConflictRecord] = {}
        self.monitor = SeparationMonitor()
        self.assoc: dict[int, int | None] = {}
        self.block_until: dict[int, int] = {}
        self.applied: set[tuple[int, int]] = set()  # (cid, uav) pairs already commanded
        self.requests_created = 0
        self.requests_completed = 0
        self._cid = itertools.count()
        self._edge = config.controller is Controller.Edge
        if self._edge:
            self._node_xy = np.array([n.pos for n in self.world.edge_nodes])
            for u, node in zip(self.world.uavs, self._associate()):
                self.assoc[u.id] = node
                u.in_coverage = node is not None
                u.status = Status.Nominal if u.in_coverage else Status.Degraded

    # -- helpers -----------------------------------------------------------
    def log(self, time, kind, a=None, b=None, detail=""):
        self.events.append(LogEvent(int(time), kind, a, b, detail))

    def _associate(self):
        xy = np.array([(u.x, u.y) for u in self.world.uavs])
        return associate_all(xy, self._node_xy, self.cfg.comm_range)

    def _decide(self, uav, index, now, onboard=False):
        nbr_ids = neighbors_within(index, uav, self.cfg.detection_range)
        nbrs = [self.by_id[i] for i in nbr_ids]
        if onboard or self.cfg.policy is PolicyKind.Oracle:
            return oracle_decide(uav, nbrs, self.cfg, now)
        return mlp_decide(self.model, featurize(uav, nbrs, self.cfg))

    # -- conflict handling ------------------------------------------------
    def _open_conflict(self, pair, now, index):
        a, b = pair
        res = cpa_states(self.by_id[a], self.by_id[b], self.cfg.forecast_horizon,
                         self.cfg.horiz_sep_threshold, self.cfg.vert_sep_threshold)
        cid = next(self._cid)
        rec = ConflictRecord(cid, pair, now, now + int(round(res.t_cpa * 1000)))
        rec.min_sep_score_observed = res.sep_score
        self.records[cid] = rec
        self.world.open_conflicts[pair] = rec
        self.log(now, EventKind.Detect, a, b,
                 fmt_detail(cid=cid, tcpa=int(round(res.t_cpa * 1000)), score=f"{res.sep_score:.6g}"))
        self.queue.push(now + self.cfg.resolution_deadline, ("expire", cid))
        targets = [self._target(uid) for uid in pair]
        choices = [self._decide(self.by_id[uid], index, now, onboard=(t == ONBOARD))
                   for uid, t in zip(pair, targets)]
        choices = right_of_way(*choices)
        for uid, target, cls in zip(pair, targets, choices):
            self._request(rec, uid, target, cls, now)

    def _target(self, uid):
        if not self._edge:
            return CENTRAL
        node = self.assoc.get(uid)
        return ONBOARD if node is None else node

    def _request(self, rec, uid, target, cls, now):
        partner = rec.pair[1] if rec.pair[0] == uid else rec.pair[0]
        req = open_request(rec.cid, uid, target, now, self.cfg.latency,
                           self.block_until.get(uid))
        self.requests_created += 1
        if target == ONBOARD:
            self.log(now, EventKind.Degraded, uid, partner, fmt_detail(cid=rec.cid))
        self.queue.push(req.uplink_done, ("arrive", req, cls, partner))

    def _server(self, target):
        if target == CENTRAL:
            return self.world.central
        if target == ONBOARD:
            return None
        return self.world.edge_nodes[target]

    def _on_arrive(self, due, req, cls, partner):
        path = req.target if req.target in (CENTRAL, ONBOARD) else "edge"
        node = req.target if path == "edge" else path
        self.log(due, EventKind.Report, req.uav, partner, fmt_detail(cid=req.cid, node=node))
        serve_request(req, self._server(req.target), self.cfg.latency)
        rec = self.records[req.cid]
        if not rec.is_terminal:
            conflict_lifecycle(rec, LogEvent(due, EventKind.Report))
        self.queue.push(req.service_done, ("command", req, cls, partner))

    def _on_command(self, due, req, cls, partner):
        self.log(due, EventKind.Command, req.uav, partner,
                 fmt_detail(cid=req.cid, cls=cls.name, start=req.service_start))
        rec = self.records[req.cid]
        if not rec.is_terminal:
            conflict_lifecycle(rec, LogEvent(due, EventKind.Command))
        self.queue.push(req.downlink_done, ("apply", req, cls, partner))

    def _on_apply(self, due, req, cls, partner):
        self.requests_completed += 1
        rec = self.records[req.cid]
        path = req.target if req.target in (CENTRAL, ONBOARD) else "edge"
        used = (req.cid, req.uav) not in self.applied
        if used:
            cls = self._command(rec, req.uav, cls, due)
        self.log(due, EventKind.Apply, req.uav, partner,
                 fmt_detail(cid=req.cid, cls=cls.name, rt=req.roundtrip, path=path, used=int(used)))

    def _command(self, rec, uid, cls, now):
        rec.chosen[uid] = cls
        self.applied.add((rec.cid, uid))
        apply_inplace(self.by_id[uid], cls, now, self.params)
        if not rec.is_terminal:
            conflict_lifecycle(rec, LogEvent(now, EventKind.Apply))
        return cls

    def _on_expire(self, due, cid, index):
        rec = self.records[cid]
        if rec.is_terminal or rec.applied_at is not None:
            return
        conflict_lifecycle(rec, LogEvent(due, EventKind.Expire, *rec.pair))
        self.log(due, EventKind.Expire, *rec.pair, fmt_detail(cid=cid))
        choices = right_of_way(*(self._decide(self.by_id[uid], index, due, onboard=True)
                                 for uid in rec.pair))
        for uid, cls in zip(rec.pair, choices):
            if (cid, uid) in self.applied:
                continue
            partner = rec.pair[1] if rec.pair[0] == uid else rec.pair[0]
            cls = self._command(rec, uid, cls, due)
            self.log(due, EventKind.Apply, uid, partner,
                     fmt_detail(cid=cid, cls=cls.name, rt=0, path="fallback", used=1))

    def _close(self, rec, kind, now):
        conflict_lifecycle(rec, LogEvent(now, kind, *rec.pair))
        self.world.open_conflicts.pop(rec.pair, None)

    # -- main loop --------------------------------------------------------
    def run(self) -> list[LogEvent]:
        cfg = self.cfg
        uavs = self.world.uavs
        side = cfg.area_side
        params = self.params
        n_sub = cfg.tick // cfg.kinematics_substep
        dt = cfg.kinematics_substep / 1000.0
        clock = 0
        for _ in range(cfg.n_ticks):
            for s in range(n_sub):
                now_sub = clock + s * cfg.kinematics_substep
                for u in uavs:
                    step_inplace(u, dt, now_sub, params, side)
            clock += cfg.tick
            self.world.clock = clock
            self.log(clock, EventKind.Tick)

            for u in uavs:
                wp = u.cursor
                if advance_inplace(u, cfg.arrival_radius):
                    self.log(clock, EventKind.Delivery, u.id, None, fmt_detail(wp=wp))

            if self._edge:
                for u, node in zip(uavs, self._associate()):
                    old = self.assoc[u.id]
                    if node != old:
                        for ev in handover(u, old, node, clock, cfg.latency):
                            if ev.block_until is not None:
                                self.block_until[u.id] = ev.block_until
                            self.log(clock, EventKind.Handover, u.id, None,
                                     fmt_detail(frm="none" if old is None else old,
                                                to="none" if node is None else node))
                        self.assoc[u.id] = node

            index = build_index(uavs, cfg.index_cell, side)
            close = pairs_within(index, cfg.detection_range)

            for pair in self.monitor.check(self.world, cfg, close, mark=False):
                rec = self.world.open_conflicts.get(pair)
                cid = "-" if rec is None else rec.cid
                self.log(clock, EventKind.Loss, *pair, fmt_detail(cid=cid))
                if rec is not None:
                    self._close(rec, EventKind.Loss, clock)

            for pair in detect_conflicts(self.world, cfg, close_pairs=close, exclude=self.monitor.active):
                self._open_conflict(pair, clock, index)

            for due, action in self.queue.pop_due(clock):
                kind = action[0]
                if kind == "arrive":
                    self._on_arrive(due, *action[1:])
                elif kind == "command":
                    self._on_command(due, *action[1:])
                elif kind == "apply":
                    self._on_apply(due, *action[1:])
                elif kind == "expire":
                    self._on_expire(due, action[1], index)

            for pair, rec in list(self.world.open_conflicts.items()):
                if rec.applied_at is None:
                    continue
                end = max(rec.t_cpa_at, rec.applied_at) + cfg.resolve_window_ms
                if clock >= end:
                    self._close(rec, EventKind.Resolve, clock)
                    self.log(clock, EventKind.Resolve, *pair,
                             fmt_detail(cid=rec.cid, res=rec.resolution_time))
        return canonical(self.events)


def canonical(events) -> list[LogEvent]:
    return sorted(events, key=LogEvent.sort_key)


def run(config: ScenarioConfig, model=None):
    """Execute one run; returns ``(event_log, MetricsReport)``."""
    from .metrics import summarize

    sim = Simulation(config, model)
    log = sim.run()
    return log, summarize(log, config)


# ---------------------------------------------------------------------------
# Canonical CSV log
# ---------------------------------------------------------------------------

LOG_HEADER = ["time_ms", "kind", "id_a", "id_b", "detail"]


def log_to_csv(events) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_HEADER)
    for e in events:
        w.writerow([e.time, e.kind.name, "" if e.id_a is None else e.id_a,
                    "" if e.id_b is None else e.id_b, e.detail])
    return buf.getvalue()


def write_log(events, path) -> str:
    """Write the canonical log and return its SHA-256 digest."""
    text = log_to_csv(events)
    Path(path).write_text(text, encoding="utf-8")
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class MalformedLog(ValueError):
    pass


def parse_log(text: str) -> list[LogEvent]:
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header != LOG_HEADER:
        raise MalformedLog(f"row 1: bad header {header!r}")
    out = []
    for n, row in enumerate(rows, start=2):
        try:
            t, kind, a, b, detail = row
            out.append(LogEvent(int(t), EventKind[kind], int(a) if a else None,
                                int(b) if b else None, detail))
        except (ValueError, KeyError) as exc:
            raise MalformedLog(f"row {n}: {row!r} ({exc})") from None
    return out


def read_log(path) -> list[LogEvent]:
    return parse_log(Path(path).read_text(encoding="utf-8"))


def log_digest(events) -> str:
    return hashlib.sha256(log_to_csv(events).encode("utf-8")).hexdigest()
