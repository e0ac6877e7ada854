"""Run configuration: JSON files, dotted --set overrides, checkpoints.

A run file is a JSON object with optional sections; anything omitted
takes the documented default.  Overrides use dotted paths, for example
``strategy.variant=gdeq``; values parse as JSON with a fallback to the
raw string.  The npg damping factor is spelled ``lambda`` in files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backward import StrategyConfig
from .cell import CELL_KINDS, TANH, CellParams, init_cell
from .datasets import Dataset, load_dataset_csv, make_two_spirals
from .errors import ConfigError, ShapeError
from .solver import SolverConfig
from .training import PretrainConfig, ReadoutParams, TrainConfig, init_readout

DEMO_PRESETS = ("tanh", "linear", "scalar-linear", "blowup")


@dataclass(frozen=True)
class ModelConfig:
    d_z: int = 32
    kind: str = TANH
    w_scale: float = 1.0
    u_scale: float = 3.0
    spectral_gamma: float = 0.9

    def __post_init__(self):
        if self.d_z < 1:
            raise ConfigError("model.d_z", f"must be at least 1, got {self.d_z}")
        if self.kind not in CELL_KINDS:
            raise ConfigError(
                "model.kind",
                f"unknown kind {self.kind!r}, expected one of {CELL_KINDS}",
            )
        if not (self.spectral_gamma > 0.0):
            raise ConfigError(
                "model.spectral_gamma",
                f"must be positive, got {self.spectral_gamma}",
            )


@dataclass(frozen=True)
class DataConfig:
    train_n: int = 2000
    test_n: int = 400
    noise: float = 0.05
    turns: float = 1.0
    seed: int | None = None
    train_csv: str | None = None
    test_csv: str | None = None

    def __post_init__(self):
        if self.train_n < 2:
            raise ConfigError(
                "data.train_n", f"must be at least 2, got {self.train_n}"
            )
        if self.test_n < 2:
            raise ConfigError(
                "data.test_n", f"must be at least 2, got {self.test_n}"
            )
        if self.noise < 0.0:
            raise ConfigError(
                "data.noise", f"must be non-negative, got {self.noise}"
            )
        if (self.train_csv is None) != (self.test_csv is None):
            raise ConfigError(
                "data.test_csv",
                "train_csv and test_csv must be given together",
            )


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    fidelity_every: int = 0

    def __post_init__(self):
        # Reuse the TrainConfig validators.
        TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            fidelity_every=self.fidelity_every,
        )


@dataclass(frozen=True)
class BenchConfig:
    checkpoint: str | None = None
    trials: int = 100
    batch_size: int = 64
    warmup: int = 3

    def __post_init__(self):
        if self.trials < 10:
            raise ConfigError(
                "bench.trials", f"must be at least 10, got {self.trials}"
            )
        if self.batch_size < 1:
            raise ConfigError(
                "bench.batch_size",
                f"must be at least 1, got {self.batch_size}",
            )
        if self.warmup < 0:
            raise ConfigError(
                "bench.warmup", f"must be non-negative, got {self.warmup}"
            )


@dataclass(frozen=True)
class DemoConfig:
    preset: str = "tanh"
    d_z: int = 16
    d_x: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.preset not in DEMO_PRESETS:
            raise ConfigError(
                "demo.preset",
                f"unknown preset {self.preset!r}, expected one of {DEMO_PRESETS}",
            )
        if self.d_z < 1:
            raise ConfigError("demo.d_z", f"must be at least 1, got {self.d_z}")
        if self.d_x < 1:
            raise ConfigError("demo.d_x", f"must be at least 1, got {self.d_x}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    demo: DemoConfig = field(default_factory=DemoConfig)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.train.epochs,
            batch_size=self.train.batch_size,
            learning_rate=self.train.learning_rate,
            momentum=self.train.momentum,
            seed=self.seed,
            strategy=self.strategy,
            solver=self.solver,
            pretrain=self.pretrain,
            fidelity_every=self.train.fidelity_every,
        )

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=int(seed))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be a JSON object")
        known = {"seed", "model", "data", "solver", "strategy", "train",
                 "pretrain", "bench", "demo"}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown section or field")
        seed = _as_int("seed", data.get("seed", 0))
        return cls(
            seed=seed,
            model=_build("model", data, ModelConfig, {
                "d_z": _as_int, "kind": _as_str, "w_scale": _as_float,
                "u_scale": _as_float, "spectral_gamma": _as_float,
            }),
            data=_build("data", data, DataConfig, {
                "train_n": _as_int, "test_n": _as_int, "noise": _as_float,
                "turns": _as_float, "seed": _as_opt_int,
                "train_csv": _as_opt_str, "test_csv": _as_opt_str,
            }),
            solver=_build("solver", data, SolverConfig, {
                "tol": _as_float, "max_iter": _as_int, "memory": _as_int,
                "eps_den": _as_float,
            }),
            strategy=_build("strategy", data, StrategyConfig, {
                "variant": _as_str, "k": _as_int, "lam": _as_float,
                "max_iter": _as_int, "tol": _as_float,
            }, aliases={"lambda": "lam"}),
            train=_build("train", data, TrainSettings, {
                "epochs": _as_int, "batch_size": _as_int,
                "learning_rate": _as_float, "momentum": _as_float,
                "fidelity_every": _as_int,
            }),
            pretrain=_build("pretrain", data, PretrainConfig, {
                "enabled": _as_bool, "unroll_depth": _as_int,
                "epochs": _as_int,
            }),
            bench=_build("bench", data, BenchConfig, {
                "checkpoint": _as_opt_str, "trials": _as_int,
                "batch_size": _as_int, "warmup": _as_int,
            }),
            demo=_build("demo", data, DemoConfig, {
                "preset": _as_str, "d_z": _as_int, "d_x": _as_int,
                "seed": _as_int,
            }),
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "model": {
                "d_z": self.model.d_z, "kind": self.model.kind,
                "w_scale": self.model.w_scale, "u_scale": self.model.u_scale,
                "spectral_gamma": self.model.spectral_gamma,
            },
            "data": {
                "train_n": self.data.train_n, "test_n": self.data.test_n,
                "noise": self.data.noise, "turns": self.data.turns,
                "seed": self.data.seed, "train_csv": self.data.train_csv,
                "test_csv": self.data.test_csv,
            },
            "solver": {
                "tol": self.solver.tol, "max_iter": self.solver.max_iter,
                "memory": self.solver.memory, "eps_den": self.solver.eps_den,
            },
            "strategy": {
                "variant": self.strategy.variant, "k": self.strategy.k,
                "lambda": self.strategy.lam,
                "max_iter": self.strategy.max_iter, "tol": self.strategy.tol,
            },
            "train": {
                "epochs": self.train.epochs,
                "batch_size": self.train.batch_size,
                "learning_rate": self.train.learning_rate,
                "momentum": self.train.momentum,
                "fidelity_every": self.train.fidelity_every,
            },
            "pretrain": {
                "enabled": self.pretrain.enabled,
                "unroll_depth": self.pretrain.unroll_depth,
                "epochs": self.pretrain.epochs,
            },
            "bench": {
                "checkpoint": self.bench.checkpoint,
                "trials": self.bench.trials,
                "batch_size": self.bench.batch_size,
                "warmup": self.bench.warmup,
            },
            "demo": {
                "preset": self.demo.preset, "d_z": self.demo.d_z,
                "d_x": self.demo.d_x, "seed": self.demo.seed,
            },
        }


def _as_int(path: str, v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    return v


def _as_opt_int(path: str, v):
    return None if v is None else _as_int(path, v)


def _as_float(path: str, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    return float(v)


def _as_str(path: str, v):
    if not isinstance(v, str):
        raise ConfigError(path, f"expected a string, got {v!r}")
    return v


def _as_opt_str(path: str, v):
    return None if v is None else _as_str(path, v)


def _as_bool(path: str, v):
    if not isinstance(v, bool):
        raise ConfigError(path, f"expected true or false, got {v!r}")
    return v


def _build(section: str, data: dict, cls, fields: dict, aliases=None):
    raw = data.get(section, {})
    if not isinstance(raw, dict):
        raise ConfigError(section, "must be a JSON object")
    kwargs = {}
    for key, value in raw.items():
        name = (aliases or {}).get(key, key)
        if name not in fields:
            raise ConfigError(f"{section}.{key}", "unknown field")
        kwargs[name] = fields[name](f"{section}.{key}", value)
    return cls(**kwargs)


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    return data


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply KEY=VALUE items with dotted keys; values parse as JSON."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError("--set", f"expected KEY=VALUE, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = value
    return out


def resolve_data_seed(cfg: RunConfig) -> int:
    return cfg.seed if cfg.data.seed is None else cfg.data.seed


def build_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    if cfg.data.train_csv is not None:
        train = load_dataset_csv(cfg.data.train_csv)
        test = load_dataset_csv(cfg.data.test_csv, num_classes=train.num_classes)
        if test.d_x != train.d_x:
            raise ConfigError(
                "data.test_csv",
                f"feature width {test.d_x} does not match train {train.d_x}",
            )
        return train, test
    seed = resolve_data_seed(cfg)
    train = make_two_spirals(cfg.data.train_n, cfg.data.noise, seed=seed,
                             turns=cfg.data.turns)
    test = make_two_spirals(cfg.data.test_n, cfg.data.noise, seed=seed + 1,
                            turns=cfg.data.turns)
    return train, test


def build_model(cfg: RunConfig, d_x: int,
                num_classes: int) -> tuple[CellParams, ReadoutParams]:
    ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1,))
    cell_seed, readout_seed = (int(s) for s in ss.generate_state(2))
    p = init_cell(cfg.model.d_z, d_x, cfg.model.kind, seed=cell_seed,
                  w_scale=cfg.model.w_scale, u_scale=cfg.model.u_scale,
                  gamma=cfg.model.spectral_gamma)
    r = init_readout(num_classes, cfg.model.d_z, seed=readout_seed)
    return p, r


CHECKPOINT_FORMAT = "deqkit-checkpoint-v1"


def save_checkpoint(path, p: CellParams, r: ReadoutParams) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "kind": p.kind,
        "W": p.W.tolist(),
        "U": p.U.tolist(),
        "b": p.b.tolist(),
        "R": r.R.tolist(),
        "c": r.c.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple[CellParams, ReadoutParams]:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigError("checkpoint", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            "checkpoint", f"{path} is not valid JSON: {exc}"
        ) from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(
            "checkpoint", f"{path} is not a {CHECKPOINT_FORMAT} file"
        )
    try:
        p = CellParams(
            np.asarray(payload["W"], dtype=np.float64),
            np.asarray(payload["U"], dtype=np.float64),
            np.asarray(payload["b"], dtype=np.float64),
            payload.get("kind", TANH),
        )
        r = ReadoutParams(
            np.asarray(payload["R"], dtype=np.float64),
            np.asarray(payload["c"], dtype=np.float64),
        )
    except (KeyError, ShapeError, ValueError) as exc:
        raise ConfigError("checkpoint", f"{path}: {exc}") from exc
    return p, r
