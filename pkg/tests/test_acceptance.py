"""Acceptance criteria 1-9, each recording one PASS/FAIL line."""
from __future__ import annotations

import os
import time

import numpy as np

from oracles import brute_neighbors, brute_pairs, fifo_replay, sampled_cpa
from swarmcdr.cli import run_sweep, train_and_evaluate
from swarmcdr.detection import build_index, cpa, neighbors_within, pairs_within
from swarmcdr.engine import EventKind, Simulation, log_to_csv, read_log, run, write_log
from swarmcdr.kinematics import UavState
from swarmcdr.metrics import MetricsReport, SweepTable, emit_outputs, summarize
from swarmcdr.policy import N_CLASSES, N_FEATURES, MlpModel, loss_and_grads
from swarmcdr.scenario import Controller, ScenarioConfig, rng_stream

COUNTS = (50, 100, 150, 200)
CONTROLLERS = (Controller.Edge, Controller.Centralized)


def test_criterion_1_cpa_matches_sampling(verdict):
    rng = rng_stream(1, "accept-cpa")
    t0 = time.perf_counter()
    worst_t = worst_d = 0.0
    for _ in range(1000):
        p1, p2 = rng.uniform(-300, 300, 3), rng.uniform(-300, 300, 3)
        v1, v2 = rng.uniform(-25, 25, 3), rng.uniform(-25, 25, 3)
        r = cpa(p1, v1, p2, v2, 10.0)
        ts, ds = sampled_cpa(p1, v1, p2, v2, 10.0)
        worst_t = max(worst_t, abs(r.t_cpa - ts))
        worst_d = max(worst_d, abs(r.d_horiz - ds))
    elapsed = time.perf_counter() - t0
    ok = worst_t <= 0.010 and worst_d <= 0.1 and elapsed < 5.0
    verdict(1, ok, f"max |dt|={worst_t * 1000:.3f} ms, max |dd|={worst_d:.2e} m, {elapsed:.2f} s")
    assert ok


def test_criterion_2_index_matches_scan(verdict):
    rng = rng_stream(2, "accept-index")
    t0 = time.perf_counter()
    mismatches = 0
    for w in range(100):
        n = int(rng.integers(0, 501))
        side = float(rng.uniform(300, 3000))
        xy = rng.uniform(0, side, (n, 2))
        zs = rng.choice([100.0, 110.0, 120.0, 150.0], n)
        us = [UavState(i, float(x), float(y), float(z), 20.0, 0.0, 20.0, ((0.0, 0.0),))
              for i, ((x, y), z) in enumerate(zip(xy, zs))]
        radius = float(rng.choice([30.0, 100.0, 250.0]))
        idx = build_index(us, 100.0)
        if pairs_within(idx, radius) != brute_pairs(us, radius):
            mismatches += 1
        for ego in us[:: max(1, n // 25)]:
            if neighbors_within(idx, ego, radius) != brute_neighbors(us, ego, radius):
                mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 10.0
    verdict(2, ok, f"{mismatches} mismatches over 100 worlds, {elapsed:.2f} s")
    assert ok


def test_criterion_3_determinism(verdict):
    cfg = ScenarioConfig(seed=7)
    same_log = log_to_csv(run(cfg)[0]) == log_to_csv(run(cfg)[0])
    base = ScenarioConfig(sim_duration=60.0)
    serial, f1 = run_sweep(base, [50, 100], 2, CONTROLLERS, workers=1)
    parallel, f2 = run_sweep(base, [50, 100], 2, CONTROLLERS, workers=2)
    same_sweep = not f1 and not f2 and serial.to_csv() == parallel.to_csv()
    ok = same_log and same_sweep
    verdict(3, ok, f"run logs identical={same_log}, serial/parallel sweep.csv identical={same_sweep}")
    assert ok


def test_criterion_4_gradient_check(verdict):
    rng = rng_stream(4, "accept-grad")
    m = MlpModel.init(rng, N_FEATURES, 5, N_CLASSES)
    m.b1 += rng.normal(0, 0.1, m.b1.shape)
    m.b2 += rng.normal(0, 0.1, m.b2.shape)
    x = rng.normal(size=(9, N_FEATURES))
    y = rng.integers(0, N_CLASSES, 9)
    _, grads = loss_and_grads(m, x, y)
    eps, worst = 1e-5, 0.0
    for p, g in zip((m.w1, m.b1, m.w2, m.b2), grads):
        num = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + eps
            up, _ = loss_and_grads(m, x, y)
            p[i] = old - eps
            down, _ = loss_and_grads(m, x, y)
            p[i] = old
            num[i] = (up - down) / (2 * eps)
        worst = max(worst, np.linalg.norm(num - g) / max(np.linalg.norm(num) + np.linalg.norm(g), 1e-12))
    ok = worst < 1e-4
    verdict(4, ok, f"max relative error {worst:.2e}")
    assert ok


def test_criterion_5_policy_fidelity(verdict):
    t0 = time.perf_counter()
    _, agreement, hist = train_and_evaluate(50_000, 7)
    elapsed = time.perf_counter() - t0
    ok = agreement >= 0.85 and elapsed < 300.0
    verdict(5, ok, f"held-out agreement {100 * agreement:.2f}% (need >= 85%), {elapsed:.0f} s, "
                   f"labels {hist.tolist()}")
    assert ok


def test_criterion_6_headon_fixture(verdict, headon_cfg):
    log, rep = run(headon_cfg)
    n_detect = sum(e.kind is EventKind.Detect for e in log)
    ok_idle = n_detect == 1 and rep.avg_resolution_time_ms == 120.0 and rep.resolved == 1 \
        and rep.terminal == 1 and run(headon_cfg)[0] == log
    log2, rep2 = run(headon_cfg.replace(resolution_deadline=100))
    expiries = [e.time for e in log2 if e.kind is EventKind.Expire]
    fallback = [e.time for e in log2 if e.kind is EventKind.Apply and e.fields()["path"] == "fallback"]
    ok_expire = expiries == [200] and fallback == [200, 200] and rep2.expired == 1 and rep2.terminal == 1
    ok = ok_idle and ok_expire
    verdict(6, ok, f"conflicts={n_detect}, resolution {rep.avg_resolution_time_ms} ms, "
                   f"deadline 100 ms -> expired={rep2.expired} with {len(fallback)} fallback commands")
    assert ok


def test_criterion_7_trends(verdict, tmp_path):
    base = ScenarioConfig()
    table = SweepTable()
    slowest_200 = 0.0
    t0 = time.perf_counter()
    for n in COUNTS:
        for ctrl in CONTROLLERS:
            for seed in range(10):
                s = time.perf_counter()
                _, rep = run(base.replace(n_uavs=n, controller=ctrl, seed=seed))
                if n == 200:
                    slowest_200 = max(slowest_200, time.perf_counter() - s)
                table.add(n, ctrl.value, seed, rep)
    elapsed = time.perf_counter() - t0
    emit_outputs(table, tmp_path)

    def m(n, ctrl, key):
        return table.mean(n, ctrl, key)

    edge_t = [m(n, "edge", "avg_resolution_time_ms") for n in COUNTS]
    cent_t = [m(n, "centralized", "avg_resolution_time_ms") for n in COUNTS]
    speedup = cent_t[-1] / edge_t[-1]
    a = all(x <= y for x, y in zip(edge_t, edge_t[1:])) and edge_t[-1] < 600
    b = all(c > e for c, e in zip(cent_t, edge_t)) and speedup >= 3
    c = all(m(n, "edge", "resolution_accuracy_pct") >= m(n, "centralized", "resolution_accuracy_pct")
            for n in COUNTS) and m(200, "edge", "resolution_accuracy_pct") >= 90
    d = m(200, "edge", "throughput_dpm") >= m(200, "centralized", "throughput_dpm")
    timing = elapsed < 1800 and slowest_200 < 60
    ok = a and b and c and d and timing
    verdict(7, ok,
            f"(a)={a} edge ms {[round(v, 1) for v in edge_t]}; (b)={b} speedup@200 {speedup:.2f}; "
            f"(c)={c} acc@200 {m(200, 'edge', 'resolution_accuracy_pct'):.1f} vs "
            f"{m(200, 'centralized', 'resolution_accuracy_pct'):.1f}; (d)={d} dpm@200 "
            f"{m(200, 'edge', 'throughput_dpm'):.2f} vs {m(200, 'centralized', 'throughput_dpm'):.2f}; "
            f"sweep {elapsed:.0f} s, slowest 200-UAV run {slowest_200:.1f} s")
    assert ok


def test_criterion_8_single_node_fifo(verdict):
    # one node at the centre whose range reaches every corner
    cfg = ScenarioConfig(n_uavs=200, n_edge_nodes=1, comm_range=10_000.0, sim_duration=300.0, seed=8)
    sim = Simulation(cfg)
    log = sim.run()
    node = sim.world.edge_nodes[0]
    arrivals = sorted(e.time for e in log if e.kind is EventKind.Report and e.fields()["node"] == "0")
    replay = fifo_replay(arrivals, cfg.latency.inference_ms)
    degraded = sum(e.kind is EventKind.Degraded for e in log)
    measured_mean = sum(node.waits) / len(node.waits) if node.waits else None
    replay_mean = sum(replay) / len(replay) if replay else None
    ok = bool(arrivals) and degraded == 0 and node.waits == replay and measured_mean == replay_mean
    verdict(8, ok, f"{len(arrivals)} requests, {sum(w > 0 for w in replay)} queued, "
                   f"mean wait measured {measured_mean} ms vs replay {replay_mean} ms")
    assert ok


def test_criterion_9_metrics_replay(verdict, tmp_path):
    cfg = ScenarioConfig(n_uavs=200, sim_duration=300.0, seed=9)
    log, rep = run(cfg)
    write_log(log, tmp_path / "events.csv")
    emit_outputs(rep, tmp_path)
    replayed = summarize(read_log(tmp_path / "events.csv"), cfg)
    ok = replayed.to_json() == (tmp_path / "metrics.json").read_text(encoding="utf-8") \
        and MetricsReport.from_json(replayed.to_json()) == rep
    verdict(9, ok, f"replayed metrics.json identical={ok} ({rep.conflicts} conflicts)")
    assert ok
