"""Run metrics from event logs, sweep aggregation and report files."""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .engine import EventKind, LogEvent, MalformedLog
from .scenario import ScenarioConfig


@dataclass
class MetricsReport:
    avg_resolution_time_ms: float | None
    resolution_accuracy_pct: float | None
    throughput_dpm: float
    edge_latency_ms: float | None
    scalability_slope: float | None
    conflicts: int
    losses: int
    expired: int
    degraded: int
    handovers: int
    deliveries: int
    resolved: int
    terminal: int
    truncated: int
    requests: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def _mean(values) -> float | None:
    return math.fsum(values) / len(values) if values else None


def summarize(log, config: ScenarioConfig) -> MetricsReport:
    """Aggregate one run's event log; means over empty sets are ``None``."""
    detected: dict[int, int] = {}
    applied: dict[int, int] = {}
    outcome: dict[int, str] = {}
    expired: set[int] = set()
    latencies: list[int] = []
    losses = degraded = handovers = deliveries = 0
    for n, ev in enumerate(log, start=1):
        if not isinstance(ev, LogEvent):
            raise MalformedLog(f"row {n}: not a log event: {ev!r}")
        kind = ev.kind
        if kind is EventKind.Tick:
            continue
        if kind is EventKind.Delivery:
            deliveries += 1
            continue
        if kind is EventKind.Handover:
            handovers += 1
            continue
        try:
            f = ev.fields()
            if kind is EventKind.Detect:
                detected[int(f["cid"])] = ev.time
            elif kind is EventKind.Apply:
                cid = int(f["cid"])
                if f["used"] == "1" and cid not in applied:
                    applied[cid] = ev.time
                if f["path"] in ("edge", "central"):
                    latencies.append(int(f["rt"]))
            elif kind is EventKind.Resolve:
                outcome[int(f["cid"])] = "resolved"
            elif kind is EventKind.Loss:
                losses += 1
                if f["cid"] != "-":
                    outcome[int(f["cid"])] = "loss"
            elif kind is EventKind.Expire:
                expired.add(int(f["cid"]))
            elif kind is EventKind.Degraded:
                degraded += 1
        except (KeyError, ValueError) as exc:
            raise MalformedLog(f"row {n}: {ev!r} ({exc})") from None

    resolved = sorted(c for c, o in outcome.items() if o == "resolved")
    times = [applied[c] - detected[c] for c in resolved]
    terminal = len(outcome)
    duration_min = config.sim_duration / 60.0
    return MetricsReport(
        avg_resolution_time_ms=_mean(times),
        resolution_accuracy_pct=(100.0 * len(resolved) / terminal) if terminal else None,
        throughput_dpm=deliveries / duration_min,
        edge_latency_ms=_mean(latencies),
        scalability_slope=None,
        conflicts=len(detected),
        losses=losses,
        expired=len(expired),
        degraded=degraded,
        handovers=handovers,
        deliveries=deliveries,
        resolved=len(resolved),
        terminal=terminal,
        truncated=len(detected) - terminal,
        requests=len(latencies),
    )


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

METRIC_KEYS = ("avg_resolution_time_ms", "resolution_accuracy_pct", "throughput_dpm", "edge_latency_ms")
SWEEP_HEADER = ["uav_count", "controller", "seed", "avg_resolution_time_ms", "resolution_accuracy_pct",
                "throughput_dpm", "edge_latency_ms", "conflicts", "losses", "expired", "degraded",
                "handovers"]


@dataclass
class SweepTable:
    """Per-seed reports keyed by ``(uav_count, controller, seed)``."""

    runs: dict[tuple[int, str, int], MetricsReport] = field(default_factory=dict)

    def add(self, uav_count: int, controller: str, seed: int, report: MetricsReport) -> None:
        key = (int(uav_count), controller, int(seed))
        if key in self.runs:
            raise ValueError(f"duplicate sweep entry {key}")
        self.runs[key] = report

    def keys(self) -> list[tuple[int, str]]:
        return sorted({(n, c) for n, c, _ in self.runs})

    def counts(self, controller: str | None = None) -> list[int]:
        return sorted({n for n, c, _ in self.runs if controller is None or c == controller})

    def controllers(self) -> list[str]:
        return sorted({c for _, c, _ in self.runs})

    def stats(self, uav_count: int, controller: str, metric: str) -> tuple[float | None, float | None, int]:
        """Mean, sample std and number of seeds with a defined value."""
        vals = [getattr(r, metric) for (n, c, _), r in sorted(self.runs.items())
                if n == uav_count and c == controller]
        vals = [v for v in vals if v is not None]
        if not vals:
            return None, None, 0
        mean = math.fsum(vals) / len(vals)
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        return mean, std, len(vals)

    def mean(self, uav_count: int, controller: str, metric: str) -> float | None:
        return self.stats(uav_count, controller, metric)[0]

    def only(self, controller: str) -> "SweepTable":
        return SweepTable({k: v for k, v in self.runs.items() if k[1] == controller})

    def scalability_slope(self, controller: str) -> float | None:
        """Least-squares slope of mean resolution time per +50 UAVs."""
        pts = [(n, self.mean(n, controller, "avg_resolution_time_ms")) for n in self.counts(controller)]
        pts = [(n, m) for n, m in pts if m is not None]
        if len(pts) < 2:
            return None
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        mx, my = statistics.fmean(xs), statistics.fmean(ys)
        sxx = math.fsum((x - mx) ** 2 for x in xs)
        sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
        return 50.0 * sxy / sxx

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for (n, c, s), r in sorted(self.runs.items()):
            w.writerow([n, c, s] + [_cell(getattr(r, k)) for k in SWEEP_HEADER[3:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SweepTable":
        table = cls()
        rows = csv.DictReader(io.StringIO(text))
        names = {f.name for f in fields(MetricsReport)}
        for row in rows:
            values = {k: _uncell(row[k]) for k in SWEEP_HEADER[3:]}
            for k in ("conflicts", "losses", "expired", "degraded", "handovers"):
                values[k] = int(values[k])
            values.update({k: None for k in names - values.keys()})
            for k in ("deliveries", "resolved", "terminal", "truncated", "requests"):
                values[k] = 0
            table.add(int(row["uav_count"]), row["controller"], int(row["seed"]), MetricsReport(**values))
        return table


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _uncell(s: str):
    if s == "":
        return None
    return float(s)


class DensityMismatch(ValueError):
    pass


def compare(edge: SweepTable, central: SweepTable) -> str:
    """Table of resolution time, accuracy and throughput per UAV count.

    The speedup column is mean centralized / mean edge resolution time.
    """
    e_counts = set(edge.counts())
    c_counts = set(central.counts())
    if e_counts != c_counts:
        missing = []
        if c_counts - e_counts:
            missing.append("edge missing " + ", ".join(str(n) for n in sorted(c_counts - e_counts)))
        if e_counts - c_counts:
            missing.append("centralized missing " + ", ".join(str(n) for n in sorted(e_counts - c_counts)))
        raise DensityMismatch("; ".join(missing))
    e_ctrl = edge.controllers()[0] if edge.controllers() else "edge"
    c_ctrl = central.controllers()[0] if central.controllers() else "centralized"

    def pm(table, ctrl, n, metric, digits):
        mean, std, _ = table.stats(n, ctrl, metric)
        if mean is None:
            return "n/a"
        return f"{mean:.{digits}f} ± {std:.{digits}f}"

    lines = [
        "| UAV count | Res. time edge (ms) | Res. time centralized (ms) | Speedup | "
        "Accuracy edge (%) | Accuracy centralized (%) | Throughput edge (dpm) | Throughput centralized (dpm) |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for n in sorted(e_counts):
        em = edge.mean(n, e_ctrl, "avg_resolution_time_ms")
        cm = central.mean(n, c_ctrl, "avg_resolution_time_ms")
        speed = f"{cm / em:.2f}" if em and cm is not None else "n/a"
        lines.append(" | ".join([
            f"| {n}",
            pm(edge, e_ctrl, n, "avg_resolution_time_ms", 1),
            pm(central, c_ctrl, n, "avg_resolution_time_ms", 1),
            speed,
            pm(edge, e_ctrl, n, "resolution_accuracy_pct", 1),
            pm(central, c_ctrl, n, "resolution_accuracy_pct", 1),
            pm(edge, e_ctrl, n, "throughput_dpm", 2),
            pm(central, c_ctrl, n, "throughput_dpm", 2),
        ]) + " |")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

_SERIES_COLOURS = {"edge": "#1f77b4", "centralized": "#d62728"}


def figure5_svg(table: SweepTable, width: int = 640, height: int = 420) -> str:
    """Line chart of mean resolution time against UAV count, one series per controller."""
    ml, mr, mt, mb = 70, 130, 40, 55
    series = {}
    for ctrl in table.controllers():
        pts = [(n, table.mean(n, ctrl, "avg_resolution_time_ms")) for n in table.counts(ctrl)]
        series[ctrl] = [(n, m) for n, m in pts if m is not None]
    xs = [n for pts in series.values() for n, _ in pts] or [0, 1]
    ys = [m for pts in series.values() for _, m in pts] or [0, 1]
    x0, x1 = min(xs), max(xs)
    if x0 == x1:
        x0, x1 = x0 - 1, x1 + 1
    y1 = max(ys) * 1.1 or 1.0
    pw, ph = width - ml - mr, height - mt - mb

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + ph - v / y1 * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">'
           'Average Conflict Resolution Time Vs Number of UAVs</text>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
           f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">Number of UAVs</text>',
           f'<text x="18" y="{mt + ph / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 18 {mt + ph / 2:.1f})">Average Conflict Resolution Time (ms)</text>']
    for n in sorted(set(xs)):
        out.append(f'<text x="{sx(n):.1f}" y="{mt + ph + 18}" text-anchor="middle">{n}</text>')
    for k in range(6):
        v = y1 * k / 5
        out.append(f'<text x="{ml - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.0f}</text>')
    for i, (ctrl, pts) in enumerate(sorted(series.items())):
        colour = _SERIES_COLOURS.get(ctrl, "#555555")
        coords = " ".join(f"{sx(n):.2f},{sy(m):.2f}" for n, m in pts)
        out.append(f'<polyline data-series="{ctrl}" fill="none" stroke="{colour}" '
                   f'stroke-width="2" points="{coords}"/>')
        ly = mt + 10 + 18 * i
        out.append(f'<line x1="{ml + pw + 12}" y1="{ly}" x2="{ml + pw + 32}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 38}" y="{ly + 4}">{ctrl}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_outputs(obj, directory) -> list[Path]:
    """Write ``metrics.json`` for a report, or sweep.csv/comparison.md/figure5.svg for a table."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    if isinstance(obj, MetricsReport):
        p = d / "metrics.json"
        p.write_text(obj.to_json(), encoding="utf-8")
        return [p]
    p = d / "sweep.csv"
    p.write_text(obj.to_csv(), encoding="utf-8")
    written.append(p)
    ctrls = obj.controllers()
    if "edge" in ctrls and "centralized" in ctrls:
        p = d / "comparison.md"
        p.write_text(compare(obj.only("edge"), obj.only("centralized")), encoding="utf-8")
        written.append(p)
    p = d / "figure5.svg"
    p.write_text(figure5_svg(obj), encoding="utf-8")
    written.append(p)
    return written
