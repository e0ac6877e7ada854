"""Weight-tied equilibrium cell: f(z, x) = act(W z + U x + b).

Two activation kinds are supported: "tanh" and "linear" (identity).
Jacobians and vector-Jacobian products are closed-form; a module-level
counter tracks every state VJP so backward strategies can be compared
by measured cost rather than by claimed cost.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import OracleError, ShapeError
from .linalg import Array, as_vector, require_finite

TANH = "tanh"
LINEAR = "linear"
CELL_KINDS = (TANH, LINEAR)


@dataclass(frozen=True)
class CellParams:
    """Cell weights. W is (d_z, d_z), U is (d_z, d_x), b is (d_z,)."""

    W: Array
    U: Array
    b: Array
    kind: str = TANH

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        U = np.asarray(self.U, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ShapeError(f"W must be square, got shape {W.shape}")
        if U.ndim != 2 or U.shape[0] != W.shape[0]:
            raise ShapeError(
                f"U must have {W.shape[0]} rows, got shape {U.shape}"
            )
        if b.shape != (W.shape[0],):
            raise ShapeError(
                f"b must have shape ({W.shape[0]},), got {b.shape}"
            )
        if self.kind not in CELL_KINDS:
            raise ShapeError(
                f"unknown cell kind {self.kind!r}, expected one of {CELL_KINDS}"
            )
        for name, arr in (("W", W), ("U", U), ("b", b)):
            require_finite(arr, name)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "b", b)

    @property
    def d_z(self) -> int:
        return self.W.shape[0]

    @property
    def d_x(self) -> int:
        return self.U.shape[1]


@dataclass
class ParamGrads:
    """Gradients with the same shapes as (W, U, b)."""

    gW: Array
    gU: Array
    gb: Array

    def scaled(self, a: float) -> "ParamGrads":
        return ParamGrads(self.gW * a, self.gU * a, self.gb * a)


class VjpCounter:
    """Thread-safe counter of state VJP applications."""

    def __init__(self):
        self._lock = threading.Lock()
        self._value = 0

    def increment(self, n: int = 1) -> None:
        with self._lock:
            self._value += n

    def read(self) -> int:
        with self._lock:
            return self._value

    def reset(self) -> int:
        """Zero the counter and return the value it held."""
        with self._lock:
            value = self._value
            self._value = 0
            return value


VJP_COUNTER = VjpCounter()


def cell_forward(p: CellParams, z, x) -> Array:
    """Evaluate f(z, x)."""
    z = as_vector(z, p.d_z, "z")
    x = as_vector(x, p.d_x, "x")
    pre = p.W @ z + (p.U @ x + p.b)
    if p.kind == TANH:
        return np.tanh(pre)
    return pre


def _activation_slope(p: CellParams, z: Array, x: Array) -> Array | None:
    """Diagonal of act'(W z + U x + b), or None for the identity."""
    if p.kind == LINEAR:
        return None
    f = cell_forward(p, z, x)
    return 1.0 - f * f


def cell_jacobian_state(p: CellParams, z, x) -> Array:
    """Dense d f / d z at (z, x)."""
    z = as_vector(z, p.d_z, "z")
    x = as_vector(x, p.d_x, "x")
    d = _activation_slope(p, z, x)
    if d is None:
        return p.W.copy()
    return d[:, None] * p.W


def state_vjp_operator(p: CellParams, z, x):
    """Return a callable w -> (df/dz)^T w with the slope precomputed.

    Each call counts as one VJP.  Intended for backward strategies that
    apply the transposed Jacobian many times at a fixed (z, x).
    """
    z = as_vector(z, p.d_z, "z")
    x = as_vector(x, p.d_x, "x")
    d = _activation_slope(p, z, x)
    WT = p.W.T
    if d is None:
        def apply_t(w: Array) -> Array:
            VJP_COUNTER.increment()
            return WT @ w
    else:
        def apply_t(w: Array) -> Array:
            VJP_COUNTER.increment()
            return WT @ (d * w)
    return apply_t


def cell_vjp_state(p: CellParams, z, x, v) -> Array:
    """Return (df/dz)^T v, incrementing the module VJP counter by one."""
    v = as_vector(v, p.d_z, "v")
    return state_vjp_operator(p, z, x)(v)


def cell_vjp_params(p: CellParams, z, x, u) -> ParamGrads:
    """Pull the adjoint u back onto (W, U, b) at the point (z, x)."""
    z = as_vector(z, p.d_z, "z")
    x = as_vector(x, p.d_x, "x")
    u = as_vector(u, p.d_z, "u")
    d = _activation_slope(p, z, x)
    w = u if d is None else d * u
    return ParamGrads(np.outer(w, z), np.outer(w, x), w.copy())


def cell_vjp_input(p: CellParams, z, x, u) -> Array:
    """Pull the adjoint u back onto the input x."""
    z = as_vector(z, p.d_z, "z")
    x = as_vector(x, p.d_x, "x")
    u = as_vector(u, p.d_z, "u")
    d = _activation_slope(p, z, x)
    w = u if d is None else d * u
    return p.U.T @ w


def spectral_norm_estimate(W, iters: int = 100, seed: int = 0) -> float:
    """Largest singular value of W by power iteration on W^T W."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ShapeError(f"W must be 2-D, got shape {W.shape}")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = W.T @ (W @ v)
        n = np.linalg.norm(w)
        if n == 0.0:
            return 0.0
        v = w / n
    return float(np.linalg.norm(W @ v))


def spectral_rescale(p: CellParams, gamma: float) -> CellParams:
    """Scale W so its estimated spectral norm is at most gamma.

    Used only at initialisation; training steps may push the norm back
    above gamma and that is deliberate.
    """
    if gamma <= 0.0:
        raise ShapeError(f"gamma must be positive, got {gamma}")
    sigma = spectral_norm_estimate(p.W)
    if sigma <= gamma or sigma == 0.0:
        return p
    return CellParams(p.W * (gamma / sigma), p.U, p.b, p.kind)


def numeric_grad_oracle(fn, point, step: float = 1e-6) -> Array:
    """Central-difference gradient of a scalar function of a flat vector."""
    point = np.asarray(point, dtype=np.float64)
    if point.ndim != 1:
        raise ShapeError(f"point must be 1-D, got shape {point.shape}")
    if step <= 0.0:
        raise ShapeError(f"step must be positive, got {step}")
    grad = np.empty_like(point)
    for i in range(point.shape[0]):
        plus = point.copy()
        minus = point.copy()
        plus[i] += step
        minus[i] -= step
        fp = float(fn(plus))
        fm = float(fn(minus))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleError(
                f"non-finite value while probing coordinate {i}"
            )
        grad[i] = (fp - fm) / (2.0 * step)
    return grad


def flatten_params(p: CellParams) -> Array:
    return np.concatenate([p.W.ravel(), p.U.ravel(), p.b])


def unflatten_params(template: CellParams, vec) -> CellParams:
    vec = as_vector(vec, name="vec")
    d_z, d_x = template.d_z, template.d_x
    n_w, n_u = d_z * d_z, d_z * d_x
    if vec.shape[0] != n_w + n_u + d_z:
        raise ShapeError(
            f"vec has length {vec.shape[0]}, expected {n_w + n_u + d_z}"
        )
    W = vec[:n_w].reshape(d_z, d_z)
    U = vec[n_w:n_w + n_u].reshape(d_z, d_x)
    b = vec[n_w + n_u:]
    return CellParams(W.copy(), U.copy(), b.copy(), template.kind)


def flatten_grads(g: ParamGrads) -> Array:
    return np.concatenate([g.gW.ravel(), g.gU.ravel(), g.gb])


def init_cell(d_z: int, d_x: int, kind: str = TANH, seed: int = 0,
              w_scale: float = 1.0, u_scale: float = 3.0,
              gamma: float = 0.9) -> CellParams:
    """Random cell with W rescaled to spectral norm gamma.

    The input injection is deliberately wide (u_scale 3): raw planar
    features are small, and weak injection leaves the equilibrium too
    flat in x for the readout to separate the classes.
    """
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((d_z, d_z)) * (w_scale / np.sqrt(d_z))
    U = rng.standard_normal((d_z, d_x)) * (u_scale / np.sqrt(d_x))
    b = np.zeros(d_z)
    return spectral_rescale(CellParams(W, U, b, kind), gamma)
