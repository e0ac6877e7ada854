"""Desk-scale training loop: equilibrium cell + linear readout.

One forward solve per sample, one adjoint per sample via the configured
backward strategy, SGD with momentum on (W, U, b, R, c).  Per-epoch
metrics come from the training pass itself; test accuracy is measured
fresh each epoch.  Everything is seeded and deterministic apart from
the wall-clock column.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .backward import (
    GDEQ,
    IMPLICIT,
    JFB,
    NPG,
    StrategyConfig,
    grads_from_adjoint,
    strategy_dispatch,
)
from .cell import (
    CellParams,
    ParamGrads,
    cell_forward,
    cell_vjp_params,
    cell_vjp_state,
    flatten_grads,
)
from .datasets import Dataset
from .errors import (
    BatchDivergedError,
    ConfigError,
    DivergenceError,
    ShapeError,
    TrainingAborted,
)
from .linalg import Array, require_finite
from .solver import BROYDEN, FixedPointSolution, SolverConfig, broyden_solve


@dataclass(frozen=True)
class ReadoutParams:
    """Linear readout logits = R z + c.  R is (q, d_z), c is (q,)."""

    R: Array
    c: Array

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64)
        if R.ndim != 2:
            raise ShapeError(f"R must be 2-D, got shape {R.shape}")
        if c.shape != (R.shape[0],):
            raise ShapeError(f"c must have shape ({R.shape[0]},), got {c.shape}")
        require_finite(R, "R")
        require_finite(c, "c")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "c", c)

    @property
    def q(self) -> int:
        return self.R.shape[0]

    @property
    def d_z(self) -> int:
        return self.R.shape[1]


@dataclass(frozen=True)
class PretrainConfig:
    """Unrolled warm start: D cell applications trained as a plain net."""

    enabled: bool = False
    unroll_depth: int = 8
    epochs: int = 10

    def __post_init__(self):
        if self.unroll_depth < 1:
            raise ConfigError(
                "pretrain.unroll_depth",
                f"must be at least 1, got {self.unroll_depth}",
            )
        if self.epochs < 0:
            raise ConfigError(
                "pretrain.epochs", f"must be non-negative, got {self.epochs}"
            )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    fidelity_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("train.epochs", f"must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(
                "train.batch_size", f"must be at least 1, got {self.batch_size}"
            )
        if not (self.learning_rate >= 0.0):
            raise ConfigError(
                "train.learning_rate",
                f"must be non-negative, got {self.learning_rate}",
            )
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(
                "train.momentum", f"must be in [0, 1), got {self.momentum}"
            )
        if self.fidelity_every < 0:
            raise ConfigError(
                "train.fidelity_every",
                f"must be non-negative, got {self.fidelity_every}",
            )


@dataclass
class EpochRow:
    epoch: int
    wall_s: float
    train_loss: float
    train_acc: float
    test_acc: float
    fwd_iters_mean: float
    bwd_vjps_mean: float
    fwd_conv_rate: float


@dataclass
class ProbeRow:
    step: int
    strategy: str
    cosine: float
    dot_sign: int


@dataclass
class RunRecord:
    epoch_rows: list[EpochRow] = field(default_factory=list)
    probe_rows: list[ProbeRow] = field(default_factory=list)


@dataclass
class StepMetrics:
    samples: int = 0
    diverged: int = 0
    loss_sum: float = 0.0
    correct: int = 0
    fwd_iters_sum: int = 0
    vjp_sum: int = 0
    fwd_converged: int = 0

    def merge(self, other: "StepMetrics") -> None:
        self.samples += other.samples
        self.diverged += other.diverged
        self.loss_sum += other.loss_sum
        self.correct += other.correct
        self.fwd_iters_sum += other.fwd_iters_sum
        self.vjp_sum += other.vjp_sum
        self.fwd_converged += other.fwd_converged


@dataclass
class TrainResult:
    params: CellParams
    readout: ReadoutParams
    record: RunRecord
    wall_seconds: float
    diverged_samples: int
    total_steps: int


class SgdMomentum:
    """Heavy-ball SGD: vel <- momentum * vel + grad; p <- p - lr * vel."""

    def __init__(self, learning_rate: float, momentum: float):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self._vel: dict[str, Array] = {}

    def step(self, key: str, value: Array, grad: Array) -> Array:
        vel = self._vel.get(key)
        vel = grad if vel is None else self.momentum * vel + grad
        self._vel[key] = vel
        return value - self.learning_rate * vel


def init_readout(q: int, d_z: int, seed: int = 0,
                 scale: float = 1.0) -> ReadoutParams:
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((q, d_z)) * (scale / np.sqrt(d_z))
    return ReadoutParams(R, np.zeros(q))


def softmax_xent(logits: Array, label: int) -> tuple[float, Array]:
    """Cross-entropy of softmax(logits) against a hard label.

    Returns (loss, d loss / d logits), computed with the max trick.
    """
    m = float(logits.max())
    e = np.exp(logits - m)
    z = float(e.sum())
    loss = math.log(z) + m - float(logits[label])
    dlogits = e / z
    dlogits[label] -= 1.0
    return loss, dlogits


def forward_predict(p: CellParams, r: ReadoutParams, x,
                    solver_cfg: SolverConfig) -> tuple[Array, FixedPointSolution]:
    """Solve for z*(x) and return (logits, solution)."""
    sol = broyden_solve(p, x, np.zeros(p.d_z), solver_cfg)
    return r.R @ sol.z_star + r.c, sol


def _sample_backward(p: CellParams, r: ReadoutParams, x: Array, label: int,
                     sol: FixedPointSolution, strategy: StrategyConfig):
    """Loss, correctness and all parameter grads for one solved sample."""
    logits = r.R @ sol.z_star + r.c
    loss, dlogits = softmax_xent(logits, label)
    v = r.R.T @ dlogits
    adj = strategy_dispatch(strategy, p, x, sol, v)
    grads, _ = grads_from_adjoint(p, x, sol.z_star, adj)
    gR = np.outer(dlogits, sol.z_star)
    correct = int(np.argmax(logits)) == label
    return loss, correct, grads, gR, dlogits, adj.vjp_count


def train_step(p: CellParams, r: ReadoutParams, batch, cfg: TrainConfig,
               opt: SgdMomentum | None = None
               ) -> tuple[CellParams, ReadoutParams, StepMetrics]:
    """One SGD step on a (features, labels) batch.

    Samples whose forward solve diverges are dropped from the batch
    mean and counted; a batch with no usable samples raises
    BatchDivergedError.
    """
    X, y = batch
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ShapeError(
            f"batch features {X.shape} do not match labels {y.shape}"
        )
    if opt is None:
        opt = SgdMomentum(cfg.learning_rate, cfg.momentum)
    d_z = p.d_z
    z0 = np.zeros(d_z)
    gW = np.zeros_like(p.W)
    gU = np.zeros_like(p.U)
    gb = np.zeros_like(p.b)
    gR = np.zeros_like(r.R)
    gc = np.zeros_like(r.c)
    m = StepMetrics()
    for i in range(X.shape[0]):
        x = X[i]
        try:
            sol = broyden_solve(p, x, z0, cfg.solver)
        except DivergenceError:
            m.diverged += 1
            continue
        loss, correct, grads, gR_i, dlogits, vjps = _sample_backward(
            p, r, x, int(y[i]), sol, cfg.strategy
        )
        gW += grads.gW
        gU += grads.gU
        gb += grads.gb
        gR += gR_i
        gc += dlogits
        m.samples += 1
        m.loss_sum += loss
        m.correct += correct
        m.fwd_iters_sum += sol.iterations
        m.vjp_sum += vjps
        m.fwd_converged += sol.converged
    if m.samples == 0:
        raise BatchDivergedError(
            f"all {X.shape[0]} samples in the batch diverged"
        )
    scale = 1.0 / m.samples
    p_new = CellParams(
        opt.step("W", p.W, gW * scale),
        opt.step("U", p.U, gU * scale),
        opt.step("b", p.b, gb * scale),
        p.kind,
    )
    r_new = ReadoutParams(
        opt.step("R", r.R, gR * scale),
        opt.step("c", r.c, gc * scale),
    )
    return p_new, r_new, m


def pretrain_unrolled(p: CellParams, r: ReadoutParams, dataset: Dataset,
                      cfg: TrainConfig, rng: np.random.Generator | None = None
                      ) -> tuple[CellParams, ReadoutParams]:
    """Warm start by training a depth-D unrolled net with shared weights.

    Backpropagates through the finite chain z_D = f(...f(z_0, x)..., x),
    summing the weight contributions from every application.
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[0])
    depth = cfg.pretrain.unroll_depth
    opt = SgdMomentum(cfg.learning_rate, cfg.momentum)
    X, y = dataset.features, dataset.labels
    n = len(dataset)
    d_z = p.d_z
    for _ in range(cfg.pretrain.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            gW = np.zeros_like(p.W)
            gU = np.zeros_like(p.U)
            gb = np.zeros_like(p.b)
            gR = np.zeros_like(r.R)
            gc = np.zeros_like(r.c)
            for i in idx:
                x = X[i]
                zs = [np.zeros(d_z)]
                for _ in range(depth):
                    zs.append(cell_forward(p, zs[-1], x))
                _, dlogits = softmax_xent(r.R @ zs[-1] + r.c, int(y[i]))
                gR += np.outer(dlogits, zs[-1])
                gc += dlogits
                u = r.R.T @ dlogits
                for t in range(depth, 0, -1):
                    contrib = cell_vjp_params(p, zs[t - 1], x, u)
                    gW += contrib.gW
                    gU += contrib.gU
                    gb += contrib.gb
                    if t > 1:
                        u = cell_vjp_state(p, zs[t - 1], x, u)
            scale = 1.0 / len(idx)
            p = CellParams(
                opt.step("W", p.W, gW * scale),
                opt.step("U", p.U, gU * scale),
                opt.step("b", p.b, gb * scale),
                p.kind,
            )
            r = ReadoutParams(
                opt.step("R", r.R, gR * scale),
                opt.step("c", r.c, gc * scale),
            )
    return p, r


def default_probe_strategies(base: StrategyConfig | None = None
                             ) -> list[StrategyConfig]:
    """All four strategies sharing the base config's knobs."""
    b = base if base is not None else StrategyConfig()
    kw = dict(k=b.k, lam=b.lam, max_iter=b.max_iter, tol=b.tol)
    return [
        StrategyConfig(variant=IMPLICIT, **kw),
        StrategyConfig(variant=JFB, **kw),
        StrategyConfig(variant=NPG, **kw),
        StrategyConfig(variant=GDEQ, **kw),
    ]


def _cosine(a: Array, b: Array) -> float:
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        return math.nan
    c = float(a @ b) / (na * nb)
    return max(-1.0, min(1.0, c))


def gradient_fidelity_probe(p: CellParams, r: ReadoutParams, batch,
                            strategies: list[StrategyConfig],
                            solver_cfg: SolverConfig,
                            step: int = 0) -> list[ProbeRow]:
    """Compare batch-mean cell gradients across strategies.

    The first implicit entry is the reference; its own row reports
    cosine 1.0 by definition.  Only samples whose forward solve
    converged contribute.  With no usable samples, or a zero reference
    gradient, similarities are recorded as nan with dot_sign 0.
    """
    ref_idx = next(
        (j for j, s in enumerate(strategies) if s.variant == IMPLICIT), None
    )
    if ref_idx is None:
        raise ConfigError(
            "probe.strategies", "must include an implicit entry as reference"
        )
    X, y = batch
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    z0 = np.zeros(p.d_z)
    acc = [None] * len(strategies)
    used = 0
    for i in range(X.shape[0]):
        x = X[i]
        try:
            sol = broyden_solve(p, x, z0, solver_cfg)
        except DivergenceError:
            continue
        if not sol.converged:
            continue
        logits = r.R @ sol.z_star + r.c
        _, dlogits = softmax_xent(logits, int(y[i]))
        v = r.R.T @ dlogits
        for j, s in enumerate(strategies):
            adj = strategy_dispatch(s, p, x, sol, v)
            grads, _ = grads_from_adjoint(p, x, sol.z_star, adj)
            flat = flatten_grads(grads)
            acc[j] = flat if acc[j] is None else acc[j] + flat
        used += 1
    rows = []
    ref = acc[ref_idx] if used else None
    ref_norm = math.sqrt(float(ref @ ref)) if ref is not None else 0.0
    for j, s in enumerate(strategies):
        if used == 0 or ref_norm == 0.0:
            rows.append(ProbeRow(step, s.variant, math.nan, 0))
            continue
        if j == ref_idx:
            rows.append(ProbeRow(step, s.variant, 1.0, 1))
            continue
        dot = float(ref @ acc[j])
        sign = (dot > 0.0) - (dot < 0.0)
        rows.append(ProbeRow(step, s.variant, _cosine(ref, acc[j]), sign))
    return rows


def evaluate(p: CellParams, r: ReadoutParams, dataset: Dataset,
             solver_cfg: SolverConfig) -> tuple[float, float]:
    """Accuracy and mean forward iterations over a dataset."""
    if len(dataset) == 0:
        raise ShapeError("cannot evaluate on an empty dataset")
    correct = 0
    iters = 0
    for i in range(len(dataset)):
        logits, sol = forward_predict(p, r, dataset.features[i], solver_cfg)
        correct += int(np.argmax(logits)) == int(dataset.labels[i])
        iters += sol.iterations
    return correct / len(dataset), iters / len(dataset)


def train_model(p: CellParams, r: ReadoutParams, train_ds: Dataset,
                test_ds: Dataset, cfg: TrainConfig,
                probe_strategies: list[StrategyConfig] | None = None,
                on_epoch=None) -> TrainResult:
    """Full training run; returns final weights plus the run record.

    On mid-run divergence the partial record is attached to the raised
    TrainingAborted so callers can still flush it.
    """
    if train_ds.d_x != p.d_x or test_ds.d_x != p.d_x:
        raise ShapeError(
            f"dataset feature width {train_ds.d_x} does not match cell d_x {p.d_x}"
        )
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    record = RunRecord()
    t0 = time.perf_counter()
    if cfg.pretrain.enabled:
        p, r = pretrain_unrolled(p, r, train_ds, cfg,
                                 rng=np.random.default_rng(seeds[0]))
    opt = SgdMomentum(cfg.learning_rate, cfg.momentum)
    shuffle_rng = np.random.default_rng(seeds[1])
    X, y = train_ds.features, train_ds.labels
    n = len(train_ds)
    step = 0
    diverged = 0
    probes = (probe_strategies if probe_strategies is not None
              else default_probe_strategies(cfg.strategy))
    try:
        for epoch in range(cfg.epochs):
            order = shuffle_rng.permutation(n)
            em = StepMetrics()
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                batch = (X[idx], y[idx])
                step += 1
                p, r, sm = train_step(p, r, batch, cfg, opt)
                em.merge(sm)
                if cfg.fidelity_every and step % cfg.fidelity_every == 0:
                    record.probe_rows.extend(
                        gradient_fidelity_probe(
                            p, r, batch, probes, cfg.solver, step
                        )
                    )
            diverged += em.diverged
            test_acc, _ = evaluate(p, r, test_ds, cfg.solver)
            row = EpochRow(
                epoch=epoch,
                wall_s=time.perf_counter() - t0,
                train_loss=em.loss_sum / em.samples,
                train_acc=em.correct / em.samples,
                test_acc=test_acc,
                fwd_iters_mean=em.fwd_iters_sum / em.samples,
                bwd_vjps_mean=em.vjp_sum / em.samples,
                fwd_conv_rate=em.fwd_converged / em.samples,
            )
            record.epoch_rows.append(row)
            if on_epoch is not None:
                on_epoch(row)
    except (BatchDivergedError, DivergenceError) as exc:
        raise TrainingAborted(
            f"training stopped at step {step}: {exc}", record
        ) from exc
    return TrainResult(
        params=p,
        readout=r,
        record=record,
        wall_seconds=time.perf_counter() - t0,
        diverged_samples=diverged,
        total_steps=step,
    )
