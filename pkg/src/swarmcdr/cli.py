"""Command-line entry point: ``swarmcdr {run,sweep,train,compare,plot}``."""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .engine import run as run_engine
from .engine import write_log
from .metrics import DensityMismatch, SweepTable, compare, emit_outputs, figure5_svg
from .policy import (N_CLASSES, TrainHyper, TrainingDiverged, generate_training_set, load_model,
                     mlp_infer, mlp_train, save_model)
from .scenario import (ConfigError, Controller, PolicyKind, ScenarioConfig, dump_config,
                       load_config)

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    """Bad flag values; maps to exit status 1."""


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(directory: Path, config: ScenarioConfig, command: str, extra=None) -> Path:
    """Config echo, seed and a digest for every artifact already in ``directory``."""
    artifacts = {p.name: _sha256(p) for p in sorted(directory.iterdir())
                 if p.is_file() and p.name != "manifest.json"}
    manifest = {
        "command": command,
        "version": __version__,
        "seed": config.seed,
        "controller": config.controller.value,
        "policy": config.policy.value,
        "config": dump_config(config),
        "artifacts": artifacts,
    }
    manifest.update(extra or {})
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def _base_config(args) -> ScenarioConfig:
    if args.config:
        config = load_config(Path(args.config).read_text(encoding="utf-8"))
    else:
        config = ScenarioConfig().validate()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "controller", None):
        changes["controller"] = Controller(args.controller)
    if getattr(args, "policy", None):
        changes["policy"] = PolicyKind(args.policy)
    return config.replace(**changes) if changes else config


def _model_for(config: ScenarioConfig, args):
    if config.policy is not PolicyKind.Mlp:
        return None
    if not args.model:
        raise UsageError("--policy mlp requires --model PATH")
    return load_model(args.model)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    config = _base_config(args)
    model = _model_for(config, args)
    out = Path(args.out or "run-out")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    log, report = run_engine(config, model)
    elapsed = time.perf_counter() - t0
    digest = write_log(log, out / "events.csv")
    emit_outputs(report, out)
    write_manifest(out, config, "run", {"log_digest": digest})
    print(f"run seed={config.seed} controller={config.controller.value} uavs={config.n_uavs} "
          f"conflicts={report.conflicts} resolved={report.resolved} losses={report.losses} "
          f"elapsed={elapsed:.1f}s log={digest[:12]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _sweep_job(job):
    key, config, model = job
    try:
        _, report = run_engine(config, model)
        return key, report, None
    except Exception as exc:  # recorded per run; the sweep carries on
        return key, None, f"{type(exc).__name__}: {exc}"


def run_sweep(base: ScenarioConfig, counts, n_seeds: int, controllers, model=None,
              workers: int = 1):
    """Run counts x controllers x seeds; returns ``(SweepTable, failures)``.

    Results are merged by key, so the table does not depend on ``workers``.
    """
    jobs = []
    for n in counts:
        for ctrl in controllers:
            for seed in range(n_seeds):
                cfg = base.replace(n_uavs=n, controller=ctrl, seed=seed)
                jobs.append(((n, ctrl.value, seed), cfg, model))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    table = SweepTable()
    failures = {}
    for key, report, err in sorted(results, key=lambda r: r[0]):
        if err is not None:
            failures[key] = err
        else:
            table.add(*key, report)
    return table, failures


def _parse_counts(text: str) -> list[int]:
    try:
        counts = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--uavs expects a comma-separated list of integers, got {text!r}") from None
    if not counts or any(c <= 0 for c in counts):
        raise UsageError("--uavs needs at least one positive count")
    return counts


def cmd_sweep(args) -> int:
    counts = _parse_counts(args.uavs if args.uavs is not None else "50,100,150,200")
    if args.seeds is not None and args.seeds <= 0:
        raise UsageError("--seeds must be positive")
    base = _base_config(args)
    model = _model_for(base, args)
    controllers = [Controller.Edge, Controller.Centralized] if args.both else [base.controller]
    out = Path(args.out or "sweep-out")
    out.mkdir(parents=True, exist_ok=True)
    workers = int(os.environ.get("SWARMCDR_WORKERS", "0")) or (os.cpu_count() or 1)
    table, failures = run_sweep(base, counts, args.seeds or 10, controllers, model, workers)
    emit_outputs(table, out)
    write_manifest(out, base, "sweep", {
        "uav_counts": counts, "seeds": args.seeds or 10,
        "controllers": [c.value for c in controllers],
        "failures": {f"{n}/{c}/{s}": e for (n, c, s), e in failures.items()},
    })
    for (n, c, s), err in failures.items():
        print(f"run uavs={n} controller={c} seed={s} failed: {err}", file=sys.stderr)
    print(f"sweep: {len(table.runs)} runs ok, {len(failures)} failed -> {out}")
    return EXIT_CONFIG if failures else EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def train_and_evaluate(samples: int, seed: int, config: ScenarioConfig | None = None,
                       hyper: TrainHyper | None = None):
    """Generate ``samples`` oracle-labelled scenes, hold out 10 %, train on the rest.

    Returns ``(model, held_out_agreement, class_histogram)``.
    """
    config = config or ScenarioConfig()
    data = generate_training_set(samples, config, seed)
    x = np.array([s.features for s in data])
    y = np.array([int(s.label) for s in data])
    n_held = max(1, samples // 10)
    n_train = samples - n_held
    model = mlp_train((x[:n_train], y[:n_train]), hyper, seed)
    pred = np.argmax(mlp_infer(model, x[n_train:]), axis=1)
    agreement = float(np.mean(pred == y[n_train:]))
    hist = np.bincount(y, minlength=N_CLASSES)
    return model, agreement, hist


def cmd_train(args) -> int:
    samples = args.samples if args.samples is not None else 50_000
    seed = args.seed if args.seed is not None else 7
    if samples < 6:
        raise UsageError(f"--samples {samples}: at least 6 samples are needed to cover every class")
    config = load_config(Path(args.config).read_text(encoding="utf-8")) if args.config else ScenarioConfig()
    try:
        model, agreement, hist = train_and_evaluate(samples, seed, config)
    except TrainingDiverged as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out or "model.txt")
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    print("class histogram: " + " ".join(str(int(c)) for c in hist))
    print(f"train accuracy: {model.train_accuracy:.4f}")
    print(f"held-out agreement: {agreement:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare / plot
# ---------------------------------------------------------------------------

def _read_sweep(directory: Path) -> SweepTable:
    return SweepTable.from_csv((directory / "sweep.csv").read_text(encoding="utf-8"))


def cmd_compare(args) -> int:
    out = Path(args.out or "sweep-out")
    table = _read_sweep(out)
    try:
        doc = compare(table.only("edge"), table.only("centralized"))
    except DensityMismatch as exc:
        raise UsageError(f"mismatched densities: {exc}") from None
    (out / "comparison.md").write_text(doc, encoding="utf-8")
    sys.stdout.write(doc)
    return EXIT_OK


def cmd_plot(args) -> int:
    out = Path(args.out or "sweep-out")
    table = _read_sweep(out)
    (out / "figure5.svg").write_text(figure5_svg(table), encoding="utf-8")
    print(f"wrote {out / 'figure5.svg'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swarmcdr", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *names):
        if "config" in names:
            p.add_argument("--config", metavar="PATH")
        if "seed" in names:
            p.add_argument("--seed", type=int, metavar="N")
        if "controller" in names:
            p.add_argument("--controller", choices=[c.value for c in Controller])
        if "policy" in names:
            p.add_argument("--policy", choices=[p_.value for p_ in PolicyKind])
        if "model" in names:
            p.add_argument("--model", metavar="PATH")
        p.add_argument("--out", metavar="DIR")

    p = sub.add_parser("run", help="execute one simulation")
    common(p, "config", "seed", "controller", "policy", "model")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run densities x controllers x seeds")
    common(p, "config", "controller", "policy", "model")
    p.add_argument("--uavs", metavar="CSV-LIST")
    p.add_argument("--seeds", type=int, metavar="N")
    p.add_argument("--both", action="store_true", help="run both edge and centralized controllers")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train the maneuver classifier")
    common(p, "config", "seed")
    p.add_argument("--samples", type=int, metavar="N")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="edge vs centralized table from a sweep directory")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", help="redraw figure5.svg from a sweep directory")
    common(p)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; unknown flags are configuration errors here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
