"""Edge association, handover, request latency and FIFO inference queues."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .kinematics import Status, UavState

if TYPE_CHECKING:
    from .scenario import LatencyParams

CENTRAL = "central"
ONBOARD = "onboard"


@dataclass
class EdgeNodeState:
    id: int
    pos: tuple[float, float]
    busy_until: int = 0
    queue_len: int = 0
    served: int = 0
    waits: list[int] = field(default_factory=list, repr=False)
    in_system: list[int] = field(default_factory=list, repr=False)


@dataclass
class CentralStation:
    pos: tuple[float, float]
    busy_until: int = 0
    queue_len: int = 0
    served: int = 0
    waits: list[int] = field(default_factory=list, repr=False)
    in_system: list[int] = field(default_factory=list, repr=False)


Server = EdgeNodeState | CentralStation


def associate(uav_pos, nodes, comm_range: float) -> int | None:
    """Nearest node within ``comm_range`` (closed), lowest id on ties."""
    if not nodes:
        raise ValueError("no edge nodes")
    x, y = uav_pos[0], uav_pos[1]
    best, best_d2 = None, None
    for n in nodes:
        dx, dy = n.pos[0] - x, n.pos[1] - y
        d2 = dx * dx + dy * dy
        if best_d2 is None or d2 < best_d2 or (d2 == best_d2 and n.id < best.id):
            best, best_d2 = n, d2
    return best.id if best_d2 <= comm_range * comm_range else None


def associate_all(xy: np.ndarray, node_xy: np.ndarray, comm_range: float) -> list[int | None]:
    """Vectorised ``associate`` for an ``(n, 2)`` array of positions."""
    if len(xy) == 0:
        return []
    dx = node_xy[None, :, 0] - xy[:, None, 0]
    dy = node_xy[None, :, 1] - xy[:, None, 1]
    d2 = dx * dx + dy * dy
    best = np.argmin(d2, axis=1)
    ok = d2[np.arange(len(xy)), best] <= comm_range * comm_range
    return [int(b) if o else None for b, o in zip(best, ok)]


@dataclass(frozen=True)
class HandoverEvent:
    uav: int
    old: int | None
    new: int | None
    time: int
    block_until: int | None  # None when no blocking window applies


def handover(uav: UavState, old: int | None, new: int | None, now: int,
             params: LatencyParams) -> list[HandoverEvent]:
    """Record an association change and update coverage status in place.

    Node-to-node migrations block requests for ``handover_ms``; losing
    coverage makes the UAV Degraded and regaining it clears that.
    """
    if old == new:
        raise ValueError("handover requires a change of association")
    block = now + params.handover_ms if (old is not None and new is not None) else None
    uav.in_coverage = new is not None
    if uav.status is not Status.Maneuvering:
        uav.status = Status.Nominal if uav.in_coverage else Status.Degraded
    return [HandoverEvent(uav.id, old, new, now, block)]


def enqueue_inference(server: Server, arrival: int, params: LatencyParams) -> int:
    """FIFO single-server admission; returns the service completion time.

    Calls must be made in non-decreasing arrival order.
    """
    start = max(arrival, server.busy_until)
    done = start + params.inference_ms
    # jobs still in the system at this arrival (excluding the new one)
    server.in_system = [c for c in server.in_system if c > arrival]
    server.queue_len = len(server.in_system)
    server.in_system.append(done)
    server.busy_until = done
    server.served += 1
    server.waits.append(start - arrival)
    return done


@dataclass
class ResolutionRequest:
    cid: int
    uav: int
    created_at: int
    target: int | str  # node id, CENTRAL or ONBOARD
    uplink_done: int | None = None
    service_start: int | None = None
    service_done: int | None = None
    downlink_done: int | None = None

    @property
    def degraded(self) -> bool:
        return self.target == ONBOARD

    @property
    def roundtrip(self) -> int | None:
        if self.downlink_done is None:
            return None
        return self.downlink_done - self.created_at


def open_request(cid: int, uav_id: int, target, now: int, params: LatencyParams,
                 blocked_until: int | None = None) -> ResolutionRequest:
    """Create a request and fix its uplink arrival time at the server."""
    req = ResolutionRequest(cid, uav_id, now, target)
    start = max(now, blocked_until or now)
    if target == ONBOARD:
        req.uplink_done = now
    elif target == CENTRAL:
        req.uplink_done = start + params.uplink_ms + params.central_backhaul_ms
    else:
        req.uplink_done = start + params.uplink_ms
    return req


def serve_request(req: ResolutionRequest, server: Server | None, params: LatencyParams) -> None:
    """Queue the request at its server (arrivals in time order) and set completion."""
    if req.target == ONBOARD:
        req.service_start = req.service_done = req.downlink_done = req.uplink_done
        return
    wait_before = server.busy_until
    req.service_done = enqueue_inference(server, req.uplink_done, params)
    req.service_start = max(req.uplink_done, wait_before)
    back = params.downlink_ms
    if req.target == CENTRAL:
        back += params.central_backhaul_ms
    req.downlink_done = req.service_done + back


def request_roundtrip(uav: UavState, target, params: LatencyParams, world=None, *,
                      now: int = 0, cid: int = 0, server: Server | None = None,
                      blocked_until: int | None = None) -> ResolutionRequest:
    """Full request timeline for ``uav`` towards ``target``.

    ``target`` is an edge node id, ``CENTRAL`` or ``None`` (no coverage, the
    onboard oracle answers with zero network delay). The server is looked up in
    ``world`` unless passed explicitly.
    """
    if target is None:
        target = ONBOARD
    if server is None and target != ONBOARD:
        if target == CENTRAL:
            server = world.central
        else:
            server = world.edge_nodes[target]
    req = open_request(cid, uav.id, target, now, params, blocked_until)
    serve_request(req, server, params)
    return req
