"""Command-line front end.

Commands: train, compare-grads, bench-backward, solve-demo.  All take
--config PATH, --seed N, --out DIR and repeatable --set key=value
overrides.  Exit codes: 0 success, 2 bad configuration or usage,
3 numerical divergence (partial results are still written).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bench_backward, demo_traces
from .cell import LINEAR, CellParams, init_cell
from .config import (
    DemoConfig,
    RunConfig,
    apply_overrides,
    build_datasets,
    build_model,
    load_checkpoint,
    load_config_file,
    save_checkpoint,
)
from .errors import (
    BatchDivergedError,
    ConfigError,
    DatasetFormatError,
    DivergenceError,
    TrainingAborted,
)
from .reports import (
    write_curves_csv,
    write_json,
    write_probes_csv,
    write_trace_csv,
)
from .training import RunRecord, default_probe_strategies, train_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deqkit",
        description="Equilibrium-model training with swappable backward passes.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("train", "train on two spirals and write curves/checkpoint"),
        ("compare-grads", "train with implicit grads, probing all strategies"),
        ("bench-backward", "time each backward strategy on a checkpoint"),
        ("solve-demo", "trace both solvers on a preset problem"),
    ]
    for name, help_text in specs:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", metavar="PATH", default=None,
                        help="JSON run file (defaults apply when omitted)")
        sp.add_argument("--seed", metavar="N", type=int, default=None,
                        help="override the run seed")
        sp.add_argument("--out", metavar="DIR", default="out",
                        help="directory for artifacts (default: out)")
        sp.add_argument("--set", metavar="KEY=VALUE", action="append",
                        dest="overrides", default=[],
                        help="dotted config override, repeatable")
    return parser


def _manifest(command: str, cfg: RunConfig, outputs: dict, totals: dict,
              started_at: str, status: str = "ok") -> dict:
    return {
        "command": command,
        "package": "deqkit",
        "version": __version__,
        "started_at": started_at,
        "status": status,
        "config": cfg.to_dict(),
        "outputs": outputs,
        "totals": totals,
    }


def _print_epoch(row) -> None:
    print(f"epoch {row.epoch:4d}  loss {row.train_loss:.4f}  "
          f"train_acc {row.train_acc:.3f}  test_acc {row.test_acc:.3f}  "
          f"fwd_iters {row.fwd_iters_mean:.1f}")


def _flush_training(out: Path, cfg: RunConfig, command: str, record: RunRecord,
                    started_at: str, totals: dict, status: str) -> dict:
    outputs = {"curves": "curves.csv", "probes": "probes.csv",
               "manifest": "manifest.json"}
    write_curves_csv(out / "curves.csv", record.epoch_rows)
    write_probes_csv(out / "probes.csv", record.probe_rows)
    write_json(out / "manifest.json",
               _manifest(command, cfg, outputs, totals, started_at, status))
    return outputs


def _run_training(cfg: RunConfig, out: Path, command: str) -> int:
    started_at = datetime.now(timezone.utc).isoformat()
    train_ds, test_ds = build_datasets(cfg)
    p, r = build_model(cfg, train_ds.d_x, train_ds.num_classes)
    tc = cfg.train_config()
    try:
        res = train_model(p, r, train_ds, test_ds, tc, on_epoch=_print_epoch)
    except TrainingAborted as exc:
        record = exc.record if exc.record is not None else RunRecord()
        _flush_training(out, cfg, command, record, started_at,
                        {"error": str(exc)}, "diverged")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    last = res.record.epoch_rows[-1]
    totals = {
        "wall_seconds": res.wall_seconds,
        "steps": res.total_steps,
        "diverged_samples": res.diverged_samples,
        "final_train_acc": last.train_acc,
        "final_test_acc": last.test_acc,
    }
    outputs = _flush_training(out, cfg, command, res.record, started_at,
                              totals, "ok")
    save_checkpoint(out / "checkpoint.json", res.params, res.readout)
    outputs["checkpoint"] = "checkpoint.json"
    write_json(out / "manifest.json",
               _manifest(command, cfg, outputs, totals, started_at))
    if command == "compare-grads" and res.record.probe_rows:
        by_strategy: dict[str, list[float]] = {}
        for row in res.record.probe_rows:
            by_strategy.setdefault(row.strategy, []).append(row.cosine)
        for name, values in by_strategy.items():
            finite = [v for v in values if np.isfinite(v)]
            mean = float(np.mean(finite)) if finite else float("nan")
            print(f"{name}: mean cosine {mean:.4f} over {len(values)} probes")
    print(f"done: {cfg.train.epochs} epochs in {res.wall_seconds:.1f}s, "
          f"train_acc {last.train_acc:.3f}, test_acc {last.test_acc:.3f}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, out: Path) -> int:
    return _run_training(cfg, out, "train")


def cmd_compare_grads(cfg: RunConfig, out: Path) -> int:
    cfg = replace(cfg, strategy=replace(cfg.strategy, variant="implicit"))
    if cfg.train.fidelity_every == 0:
        cfg = replace(cfg, train=replace(cfg.train, fidelity_every=50))
    return _run_training(cfg, out, "compare-grads")


def cmd_bench_backward(cfg: RunConfig, out: Path) -> int:
    started_at = datetime.now(timezone.utc).isoformat()
    if cfg.bench.checkpoint is None:
        raise ConfigError("bench.checkpoint",
                          "required: point it at a train checkpoint.json")
    p, r = load_checkpoint(cfg.bench.checkpoint)
    train_ds, _ = build_datasets(cfg)
    if train_ds.d_x != p.d_x:
        raise ConfigError(
            "bench.checkpoint",
            f"checkpoint expects d_x={p.d_x} but data has d_x={train_ds.d_x}",
        )
    b = min(cfg.bench.batch_size, len(train_ds))
    batch = (train_ds.features[:b], train_ds.labels[:b])
    strategies = default_probe_strategies(cfg.strategy)
    report = bench_backward(p, r, batch, strategies, cfg.solver,
                            trials=cfg.bench.trials, warmup=cfg.bench.warmup)
    write_json(out / "speedup.json", report.to_dict())
    outputs = {"speedup": "speedup.json", "manifest": "manifest.json"}
    totals = {"trials": report.trials, "batch_size": report.batch_size}
    write_json(out / "manifest.json",
               _manifest("bench-backward", cfg, outputs, totals, started_at))
    for t in report.timings:
        print(f"{t.strategy}: median {t.seconds_median * 1e6:.1f} us/sample, "
              f"{t.vjps_mean:.1f} vjps, "
              f"speedup vs implicit {t.speedup_vs_implicit:.2f}x")
    return EXIT_OK


def _demo_problem(d: DemoConfig) -> tuple[CellParams, np.ndarray, np.ndarray]:
    if d.preset == "scalar-linear":
        p = CellParams(np.array([[0.5]]), np.array([[1.0]]), np.zeros(1),
                       LINEAR)
        return p, np.array([1.0]), np.zeros(1)
    if d.preset == "blowup":
        p = CellParams(1e200 * np.eye(2), np.eye(2), np.zeros(2), LINEAR)
        return p, np.array([1e200, 1e200]), np.zeros(2)
    kind = LINEAR if d.preset == "linear" else "tanh"
    p = init_cell(d.d_z, d.d_x, kind, seed=d.seed)
    x = np.random.default_rng(d.seed + 1).standard_normal(d.d_x)
    return p, x, np.zeros(d.d_z)


def cmd_solve_demo(cfg: RunConfig, out: Path) -> int:
    started_at = datetime.now(timezone.utc).isoformat()
    p, x, z0 = _demo_problem(cfg.demo)
    rows, ok = demo_traces(p, x, z0, cfg.solver)
    write_trace_csv(out / "trace.csv", rows)
    outputs = {"trace": "trace.csv", "manifest": "manifest.json"}
    totals = {"rows": len(rows)}
    write_json(out / "manifest.json",
               _manifest("solve-demo", cfg, outputs, totals, started_at,
                         "ok" if ok else "diverged"))
    for solver, iteration, rn in rows:
        print(f"{solver} iter {iteration}: residual {rn:.3e}")
    if not ok:
        print("error: a solver diverged; partial trace written",
              file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "compare-grads": cmd_compare_grads,
    "bench-backward": cmd_bench_backward,
    "solve-demo": cmd_solve_demo,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        data = load_config_file(args.config) if args.config else {}
        data = apply_overrides(data, args.overrides)
        cfg = RunConfig.from_dict(data)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out)
    except (ConfigError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, DivergenceError, BatchDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def entrypoint() -> None:
    sys.exit(main())
