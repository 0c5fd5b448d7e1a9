from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swarmcdr.scenario import (ConfigParseError, ConfigValidationError, Controller, LatencyParams,
                               ScenarioConfig, dump_config, edge_grid, init_world, load_config,
                               rng_stream)


def test_empty_document_gives_defaults():
    assert load_config("") == ScenarioConfig()
    assert load_config("").n_uavs == 100


def test_overrides():
    c = load_config("n_uavs = 200\ncontroller = centralized\n")
    assert c == dataclasses.replace(ScenarioConfig(), n_uavs=200, controller=Controller.Centralized)


def test_detection_range_invariant_message():
    with pytest.raises(ConfigValidationError, match="detection_range > horiz_sep_threshold violated"):
        load_config("detection_range = 20")


@pytest.mark.parametrize("text, fragment", [
    ("n_edge_nodes = 8", "perfect square"),
    ("kinematics_substep = 30", "kinematics_substep divides tick"),
    ("comm_range = 20000", "comm_range <= area_side"),
    ("n_uavs = 0", "n_uavs > 0"),
    ("uplink_ms = 300\ndownlink_ms = 300", "budget_ms"),
])
def test_other_invariants(text, fragment):
    with pytest.raises(ConfigValidationError, match=fragment):
        load_config(text)


def test_parse_error_carries_line_number():
    with pytest.raises(ConfigParseError, match="line 3") as info:
        load_config("# comment\nn_uavs = 10\nbogus_key = 1\n")
    assert info.value.lineno == 3


def test_bad_value_and_missing_equals():
    with pytest.raises(ConfigParseError, match="line 1: bad value for 'n_uavs'"):
        load_config("n_uavs = many")
    with pytest.raises(ConfigParseError, match="line 2"):
        load_config("seed = 1\njust words\n")


def test_comments_lists_and_latency_keys():
    c = load_config("speed_range = 10, 12  # slow\nlatency.uplink_ms = 30\ndownlink_ms = 25\n")
    assert c.speed_range == (10.0, 12.0)
    assert c.latency == LatencyParams(uplink_ms=30, downlink_ms=25)


def test_dump_round_trip(headon_cfg):
    for c in (ScenarioConfig(), headon_cfg, ScenarioConfig(n_uavs=7, seed=2**63 + 5)):
        assert load_config(dump_config(c)) == c


def test_edge_grid_centres():
    pts = edge_grid(9, 10_000.0)
    assert pts[0] == pytest.approx((1666.6667, 1666.6667), abs=1e-3)
    assert pts[1] == pytest.approx((5000.0, 1666.6667), abs=1e-3)
    assert pts[-1] == pytest.approx((8333.3333, 8333.3333), abs=1e-3)


@pytest.mark.parametrize("n", [1, 4, 9, 16])
def test_edge_grid_reflection_symmetric(n):
    side = 10_000.0
    pts = sorted(edge_grid(n, side))
    for mirror in (lambda p: (side - p[0], p[1]), lambda p: (p[0], side - p[1])):
        ref = sorted(mirror(p) for p in pts)
        assert np.allclose(ref, pts, atol=1e-9)


def test_single_uav_world():
    w = init_world(ScenarioConfig(n_uavs=1))
    assert len(w.uavs) == 1
    u = w.uavs[0]
    assert u.itinerary and 0 <= u.x <= 10_000 and 0 <= u.y <= 10_000
    assert w.clock == 0 and not w.open_conflicts


def test_init_world_is_pure():
    c = ScenarioConfig(n_uavs=50, seed=11)
    assert init_world(c) == init_world(c)
    assert init_world(c) != init_world(dataclasses.replace(c, seed=12))


@given(seed=st.integers(0, 2**64 - 1), n=st.integers(1, 60))
def test_initial_state_ranges(seed, n):
    c = ScenarioConfig(n_uavs=n, seed=seed)
    w = init_world(c)
    for u in w.uavs:
        assert u.z in c.altitude_bands
        assert c.speed_range[0] <= u.speed <= c.speed_range[1]
        assert 0 <= u.x <= c.area_side and 0 <= u.y <= c.area_side
        assert sorted(u.itinerary) == sorted(w.delivery_points)


def test_scripted_uavs(headon_cfg):
    w = init_world(headon_cfg)
    assert [u.pos for u in w.uavs] == [(4948.0, 5000.0, 120.0), (5052.0, 5000.0, 120.0)]


def test_rng_stream_reproducible_and_separated():
    a = rng_stream(7, "mobility").random(100)
    assert np.array_equal(a, rng_stream(7, "mobility").random(100))
    assert not np.array_equal(a, rng_stream(7, "latency").random(100))
    assert not np.array_equal(a, rng_stream(8, "mobility").random(100))


def test_rng_stream_algorithm_is_pinned():
    import hashlib

    label = int.from_bytes(hashlib.sha256(b"mobility").digest()[:8], "little")
    ref = np.random.Generator(np.random.PCG64(np.random.SeedSequence([7, label])))
    assert np.array_equal(rng_stream(7, "mobility").random(10), ref.random(10))
    assert rng_stream(7, "mobility").integers(0, 2**32, size=3).tolist() == [
        3505919882, 2688235212, 419682393]
