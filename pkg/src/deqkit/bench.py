"""Backward-pass timing and the two-solver demo trace.

Timing isolates the backward pass: forward solutions and loss gradients
are prepared once outside the clock, then each strategy's adjoint plus
parameter pullback is run warmup + trials times over the batch and the
median per-sample wall time is kept.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .backward import IMPLICIT, StrategyConfig, grads_from_adjoint, strategy_dispatch
from .cell import CellParams
from .errors import BatchDivergedError, ConfigError, DivergenceError
from .solver import SolverConfig, broyden_solve, picard_solve
from .training import ReadoutParams, softmax_xent


@dataclass
class StrategyTiming:
    strategy: str
    seconds_median: float
    vjps_mean: float
    speedup_vs_implicit: float


@dataclass
class SpeedupReport:
    d_z: int
    batch_size: int
    trials: int
    timings: list[StrategyTiming]

    def to_dict(self) -> dict:
        return {
            "d_z": self.d_z,
            "batch_size": self.batch_size,
            "trials": self.trials,
            "strategies": {
                t.strategy: {
                    "backward_seconds_median": t.seconds_median,
                    "backward_vjps_mean": t.vjps_mean,
                    "speedup_vs_implicit": t.speedup_vs_implicit,
                }
                for t in self.timings
            },
        }


def bench_backward(p: CellParams, r: ReadoutParams, batch,
                   strategies: list[StrategyConfig],
                   solver_cfg: SolverConfig, trials: int = 100,
                   warmup: int = 3) -> SpeedupReport:
    """Median per-sample backward time for each strategy on one batch."""
    if trials < 10:
        raise ConfigError("bench.trials", f"must be at least 10, got {trials}")
    if not any(s.variant == IMPLICIT for s in strategies):
        raise ConfigError(
            "bench.strategies", "must include implicit as the baseline"
        )
    X, y = batch
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    z0 = np.zeros(p.d_z)
    prepared = []
    for i in range(X.shape[0]):
        x = X[i]
        try:
            sol = broyden_solve(p, x, z0, solver_cfg)
        except DivergenceError:
            continue
        _, dlogits = softmax_xent(r.R @ sol.z_star + r.c, int(y[i]))
        prepared.append((x, sol, r.R.T @ dlogits))
    if not prepared:
        raise BatchDivergedError("no sample in the bench batch solved")

    def run_once(s: StrategyConfig) -> int:
        vjps = 0
        for x, sol, v in prepared:
            adj = strategy_dispatch(s, p, x, sol, v)
            grads_from_adjoint(p, x, sol.z_star, adj)
            vjps += adj.vjp_count
        return vjps

    medians: dict[int, float] = {}
    vjp_means: dict[int, float] = {}
    for j, s in enumerate(strategies):
        for _ in range(warmup):
            run_once(s)
        times = []
        vjps = 0
        for _ in range(trials):
            t0 = time.perf_counter()
            vjps = run_once(s)
            times.append((time.perf_counter() - t0) / len(prepared))
        medians[j] = statistics.median(times)
        vjp_means[j] = vjps / len(prepared)
    base = next(j for j, s in enumerate(strategies) if s.variant == IMPLICIT)
    timings = [
        StrategyTiming(
            strategy=s.variant,
            seconds_median=medians[j],
            vjps_mean=vjp_means[j],
            speedup_vs_implicit=medians[base] / medians[j],
        )
        for j, s in enumerate(strategies)
    ]
    return SpeedupReport(
        d_z=p.d_z, batch_size=len(prepared), trials=trials, timings=timings
    )


def demo_traces(p: CellParams, x, z0,
                cfg: SolverConfig) -> tuple[list[tuple[str, int, float]], bool]:
    """Residual traces for both solvers on one problem.

    Returns (rows, ok); on divergence the partial trace is kept and ok
    is False.
    """
    rows: list[tuple[str, int, float]] = []
    ok = True
    for name, solve in (("broyden", broyden_solve), ("picard", picard_solve)):
        try:
            sol = solve(p, x, z0, cfg)
            trace = sol.residual_trace
        except DivergenceError as exc:
            trace = exc.trace
            ok = False
        rows.extend((name, i, rn) for i, rn in enumerate(trace))
    return rows, ok
