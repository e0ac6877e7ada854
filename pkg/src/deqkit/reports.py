"""CSV and JSON writers with pinned schemas.

Floats are written with repr so repeated runs of the same seed produce
byte-identical files (the wall_s column is the one intended exception
to run-to-run stability).
"""

from __future__ import annotations

import csv
import json

from .training import EpochRow, ProbeRow

CURVES_HEADER = ["epoch", "wall_s", "train_loss", "train_acc", "test_acc",
                 "fwd_iters_mean", "bwd_vjps_mean", "fwd_conv_rate"]
PROBES_HEADER = ["step", "strategy", "cosine", "dot_sign"]
TRACE_HEADER = ["solver", "iteration", "residual_norm"]


def _f(v: float) -> str:
    return repr(float(v))


def write_curves_csv(path, rows: list[EpochRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVES_HEADER)
        for r in rows:
            w.writerow([
                r.epoch, _f(r.wall_s), _f(r.train_loss), _f(r.train_acc),
                _f(r.test_acc), _f(r.fwd_iters_mean), _f(r.bwd_vjps_mean),
                _f(r.fwd_conv_rate),
            ])


def write_probes_csv(path, rows: list[ProbeRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROBES_HEADER)
        for r in rows:
            w.writerow([r.step, r.strategy, _f(r.cosine), r.dot_sign])


def write_trace_csv(path, rows: list[tuple[str, int, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for solver, iteration, rn in rows:
            w.writerow([solver, iteration, _f(rn)])


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_csv_rows(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
