"""Root finding for the equilibrium condition g(z, x) = f(z, x) - z = 0.

Two solvers share an interface: a limited-memory Broyden method whose
approximate inverse Jacobian doubles as a backward-pass operator, and a
plain fixed-point (Picard) iteration used as a baseline.  Both return
the best iterate seen, never silently a non-finite one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .cell import TANH, CellParams, cell_forward
from .errors import ConfigError, DivergenceError
from .linalg import (
    Array,
    LimitedMemoryInverse,
    as_vector,
    lm_apply,
    lm_apply_transpose,
    lm_push,
    require_finite,
)

BROYDEN = "broyden"
PICARD = "picard"


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 18
    memory: int = 32
    eps_den: float = 1e-10

    def __post_init__(self):
        if not (self.tol > 0.0):
            raise ConfigError("solver.tol", f"must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(
                "solver.max_iter", f"must be at least 1, got {self.max_iter}"
            )
        if self.memory < 1:
            raise ConfigError(
                "solver.memory", f"must be at least 1, got {self.memory}"
            )
        if not (self.eps_den > 0.0):
            raise ConfigError(
                "solver.eps_den", f"must be positive, got {self.eps_den}"
            )


@dataclass
class FixedPointSolution:
    """Outcome of a solve: best iterate plus diagnostics.

    ``inv_jacobian`` is the limited-memory operator accumulated during
    the solve (zero pairs for Picard).  ``residual_trace[0]`` is the
    residual norm at z0 and one entry follows per iteration.
    """

    z_star: Array
    residual_norm: float
    iterations: int
    converged: bool
    inv_jacobian: LimitedMemoryInverse
    residual_trace: list[float] = field(default_factory=list)
    solver: str = BROYDEN
    update_skips: int = 0


class BroydenStep(NamedTuple):
    z_next: Array
    g_next: Array
    B_next: LimitedMemoryInverse
    update_skipped: bool


def residual(p: CellParams, z, x) -> Array:
    """g(z, x) = f(z, x) - z."""
    z = as_vector(z, p.d_z, "z")
    return cell_forward(p, z, x) - z


def _norm(g: Array) -> float:
    """Euclidean norm; inf when any entry is non-finite.

    Falls back to a scaled computation when the squared norm overflows
    but the entries themselves are representable.
    """
    gn2 = float(g @ g)
    if math.isfinite(gn2):
        return math.sqrt(gn2)
    if not np.all(np.isfinite(g)):
        return math.inf
    m = float(np.max(np.abs(g)))
    w = g / m
    return m * math.sqrt(float(w @ w))


def broyden_step(p: CellParams, x, z_t, g_t, B: LimitedMemoryInverse,
                 eps_den: float = 1e-10) -> BroydenStep:
    """One Broyden iteration from (z_t, g_t) under the operator B.

    ``g_t`` must equal ``residual(p, z_t, x)``.  The rank-one update is
    skipped (B returned unchanged) when the secant denominator
    dz . (dz + B g_next) is smaller than eps_den * ||dz||^2.
    """
    z_t = as_vector(z_t, p.d_z, "z_t")
    g_t = as_vector(g_t, p.d_z, "g_t")
    Bg = lm_apply(B, g_t)
    z_next = z_t - Bg
    g_next = residual(p, z_next, x)
    if not np.all(np.isfinite(g_next)):
        raise DivergenceError("broyden step produced a non-finite residual")
    dz = z_next - z_t
    Bgn = lm_apply(B, g_next)
    dz2 = float(dz @ dz)
    denom = dz2 + float(dz @ Bgn)
    if dz2 == 0.0 or abs(denom) < eps_den * dz2:
        return BroydenStep(z_next, g_next, B, True)
    u = -Bgn / denom
    vT = lm_apply_transpose(B, dz)
    return BroydenStep(z_next, g_next, lm_push(B, u, vT), False)


def broyden_solve(p: CellParams, x, z0,
                  cfg: SolverConfig | None = None) -> FixedPointSolution:
    """Iterate Broyden steps until the residual norm is at or below tol.

    Returns the best iterate seen.  Raises DivergenceError (with the
    partial residual trace attached) on a non-finite iterate.
    """
    if cfg is None:
        cfg = SolverConfig()
    x = require_finite(as_vector(x, p.d_x, "x"), "x")
    z = require_finite(as_vector(z0, p.d_z, "z0"), "z0").copy()
    W = p.W
    tanh = p.kind == TANH

    memory = cfg.memory
    us = np.zeros((memory, p.d_z))
    vs = np.zeros((memory, p.d_z))
    count = 0

    with np.errstate(over="ignore", invalid="ignore"):
        c = p.U @ x + p.b
        g = (np.tanh(W @ z + c) if tanh else W @ z + c) - z
        gn = _norm(g)
        trace = [gn]
        if not math.isfinite(gn):
            raise DivergenceError("non-finite residual at z0", trace)
        best_gn = gn
        best_z = z
        Bg = -g
        skips = 0
        it = 0
        while gn > cfg.tol and it < cfg.max_iter:
            z_next = z - Bg
            g_next = (np.tanh(W @ z_next + c) if tanh
                      else W @ z_next + c) - z_next
            gn_next = _norm(g_next)
            if not math.isfinite(gn_next):
                trace.append(math.inf)
                raise DivergenceError(
                    f"non-finite residual at iteration {it + 1}", trace
                )
            if count:
                Bgn = -g_next + us[:count].T @ (vs[:count] @ g_next)
            else:
                Bgn = -g_next
            dz = z_next - z
            dz2 = float(dz @ dz)
            denom = dz2 + float(dz @ Bgn)
            if not math.isfinite(denom) or dz2 == 0.0 \
                    or abs(denom) < cfg.eps_den * dz2:
                skips += 1
                Bg = Bgn
            else:
                u = -Bgn / denom
                if count:
                    vT = -dz + vs[:count].T @ (us[:count] @ dz)
                else:
                    vT = -dz
                if count == memory:
                    us[:-1] = us[1:]
                    vs[:-1] = vs[1:]
                    count -= 1
                us[count] = u
                vs[count] = vT
                count += 1
                Bg = Bgn + u * float(vT @ g_next)
            z = z_next
            g = g_next
            gn = gn_next
            it += 1
            trace.append(gn)
            if gn < best_gn:
                best_gn = gn
                best_z = z
    inv = LimitedMemoryInverse._from_arrays(p.d_z, memory, us, vs, count)
    return FixedPointSolution(
        z_star=best_z,
        residual_norm=best_gn,
        iterations=it,
        converged=best_gn <= cfg.tol,
        inv_jacobian=inv,
        residual_trace=trace,
        solver=BROYDEN,
        update_skips=skips,
    )


def picard_solve(p: CellParams, x, z0,
                 cfg: SolverConfig | None = None) -> FixedPointSolution:
    """Plain fixed-point iteration z <- f(z, x) with the same interface.

    The returned operator holds zero pairs, so gradient strategies that
    need Broyden state must reject solutions produced here.
    """
    if cfg is None:
        cfg = SolverConfig()
    x = require_finite(as_vector(x, p.d_x, "x"), "x")
    z = require_finite(as_vector(z0, p.d_z, "z0"), "z0").copy()
    with np.errstate(over="ignore", invalid="ignore"):
        f_val = cell_forward(p, z, x)
        g = f_val - z
        gn = _norm(g)
        trace = [gn]
        if not math.isfinite(gn):
            raise DivergenceError("non-finite residual at z0", trace)
        best_gn = gn
        best_z = z
        it = 0
        while gn > cfg.tol and it < cfg.max_iter:
            z = f_val
            f_val = cell_forward(p, z, x)
            g = f_val - z
            gn = _norm(g)
            if not math.isfinite(gn):
                trace.append(math.inf)
                raise DivergenceError(
                    f"non-finite residual at iteration {it + 1}", trace
                )
            it += 1
            trace.append(gn)
            if gn < best_gn:
                best_gn = gn
                best_z = z
    inv = LimitedMemoryInverse(p.d_z, cfg.memory)
    return FixedPointSolution(
        z_star=best_z,
        residual_norm=best_gn,
        iterations=it,
        converged=best_gn <= cfg.tol,
        inv_jacobian=inv,
        residual_trace=trace,
        solver=PICARD,
        update_skips=0,
    )
