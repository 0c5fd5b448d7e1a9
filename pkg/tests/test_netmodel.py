from __future__ import annotations

import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from oracles import fifo_replay
from swarmcdr.kinematics import Status, UavState
from swarmcdr.netmodel import (CENTRAL, CentralStation, EdgeNodeState, associate, associate_all,
                               enqueue_inference, handover, request_roundtrip)
from swarmcdr.scenario import LatencyParams, edge_grid

LAT = LatencyParams()
NODES = [EdgeNodeState(i, p) for i, p in enumerate(edge_grid(9, 10_000.0))]


def U(i=0, x=0.0, y=0.0):
    return UavState(i, x, y, 100.0, 20.0, 0.0, 20.0, ((0.0, 0.0),))


def test_associate_at_node():
    assert associate(NODES[4].pos, NODES, 1000.0) == 4


def test_associate_closed_boundary():
    x, y = NODES[4].pos
    assert associate((x + 1000.0, y), NODES, 1000.0) == 4
    assert associate((x + 1000.001, y), NODES, 1000.0) is None


def test_corner_is_uncovered():
    assert math.dist((0, 0), NODES[0].pos) == __import__("pytest").approx(2357.02, abs=0.01)
    assert associate((0.0, 0.0), NODES, 1000.0) is None


def test_associate_tie_goes_to_lower_id():
    nodes = [EdgeNodeState(0, (0.0, 0.0)), EdgeNodeState(1, (100.0, 0.0))]
    assert associate((50.0, 0.0), nodes, 1000.0) == 0


@given(st.lists(st.tuples(st.floats(0, 10_000), st.floats(0, 10_000)), max_size=50),
       st.sampled_from([500.0, 1000.0, 3000.0]))
def test_vectorised_association_agrees(points, rng):
    node_xy = np.array([n.pos for n in NODES])
    expected = [associate(p, NODES, rng) for p in points]
    assert associate_all(np.array(points).reshape(-1, 2), node_xy, rng) == expected


def test_node_to_node_handover_blocks():
    u = U()
    (ev,) = handover(u, 0, 1, 1000, LAT)
    assert (ev.old, ev.new, ev.block_until) == (0, 1, 1050)
    assert u.status is Status.Nominal


def test_losing_coverage_degrades():
    u = U()
    (ev,) = handover(u, 0, None, 1000, LAT)
    assert u.status is Status.Degraded and not u.in_coverage and ev.block_until is None


def test_regaining_coverage_no_block():
    u = U()
    handover(u, 0, None, 0, LAT)
    (ev,) = handover(u, None, 2, 500, LAT)
    assert u.status is Status.Nominal and ev.block_until is None


def test_fifo_examples():
    s = EdgeNodeState(0, (0.0, 0.0))
    assert enqueue_inference(s, 0, LAT) == 80
    s = EdgeNodeState(0, (0.0, 0.0))
    assert [enqueue_inference(s, 0, LAT), enqueue_inference(s, 0, LAT)] == [80, 160]
    s = EdgeNodeState(0, (0.0, 0.0))
    assert [enqueue_inference(s, a, LAT) for a in (0, 50, 100)] == [80, 160, 240]
    assert s.waits == [0, 30, 60] and s.served == 3


@given(st.lists(st.integers(0, 2000), max_size=60))
def test_fifo_matches_replay(arrivals):
    arrivals = sorted(arrivals)
    s = CentralStation((0.0, 0.0))
    for a in arrivals:
        enqueue_inference(s, a, LAT)
    assert s.waits == fifo_replay(arrivals, LAT.inference_ms)


def test_idle_edge_roundtrip():
    node = EdgeNodeState(4, NODES[4].pos)
    req = request_roundtrip(U(), 4, LAT, now=1000, server=node)
    assert req.roundtrip == 120 <= LAT.budget_ms
    assert (req.uplink_done, req.service_start, req.service_done, req.downlink_done) == (1020, 1020, 1100, 1120)


def test_idle_central_roundtrip():
    req = request_roundtrip(U(), CENTRAL, LAT, now=0, server=CentralStation((5000.0, 5000.0)))
    assert req.roundtrip == 220


def test_edge_with_four_queued_jobs():
    node = EdgeNodeState(0, (0.0, 0.0))
    for _ in range(4):
        enqueue_inference(node, 20, LAT)
    req = request_roundtrip(U(), 0, LAT, now=0, server=node)
    assert req.roundtrip == 440


def test_onboard_bypasses_network():
    req = request_roundtrip(U(), None, LAT, now=700)
    assert req.degraded and req.roundtrip == 0


def test_handover_block_delays_uplink():
    node = EdgeNodeState(0, (0.0, 0.0))
    req = request_roundtrip(U(), 0, LAT, now=1000, server=node, blocked_until=1050)
    assert req.roundtrip == 170


def test_central_roundtrip_dominates_edge_for_spread_workload():
    # two simultaneous conflicts (four requests) in two coverage areas
    edge = [EdgeNodeState(0, (0.0, 0.0)), EdgeNodeState(1, (0.0, 0.0))]
    central = CentralStation((0.0, 0.0))
    e = [request_roundtrip(U(), k % 2, LAT, now=0, server=edge[k % 2]).roundtrip for k in range(4)]
    c = [request_roundtrip(U(), CENTRAL, LAT, now=0, server=central).roundtrip for _ in range(4)]
    assert np.mean(c) >= np.mean(e)
