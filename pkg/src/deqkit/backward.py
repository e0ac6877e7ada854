"""Backward-pass strategies: map a loss gradient at z* to parameter grads.

With J = df/dz at the fixed point, the exact adjoint solves
u = v + J^T u.  Each strategy approximates that solve differently:

- implicit: run the adjoint fixed-point iteration to tolerance,
- jfb:      take u = v (zeroth-order truncation),
- npg:      damped truncated Neumann sum with k terms and damping lam,
- gdeq:     reuse the forward solver's limited-memory operator.

All report how many state VJPs they spent so costs can be compared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cell import CellParams, ParamGrads, cell_vjp_input, cell_vjp_params, state_vjp_operator
from .errors import ConfigError
from .linalg import Array, LimitedMemoryInverse, as_vector, lm_apply_transpose
from .solver import BROYDEN, FixedPointSolution

IMPLICIT = "implicit"
JFB = "jfb"
NPG = "npg"
GDEQ = "gdeq"
STRATEGIES = (IMPLICIT, JFB, NPG, GDEQ)


@dataclass(frozen=True)
class StrategyConfig:
    """Which strategy to run and its knobs.

    ``k`` and ``lam`` apply to npg only; ``max_iter`` and ``tol`` to
    implicit only.  The damping factor is called lambda in run files.
    """

    variant: str = IMPLICIT
    k: int = 5
    lam: float = 0.5
    max_iter: int = 20
    tol: float = 1e-6

    def __post_init__(self):
        if self.variant not in STRATEGIES:
            raise ConfigError(
                "strategy.variant",
                f"unknown variant {self.variant!r}, expected one of {STRATEGIES}",
            )
        if self.k < 1:
            raise ConfigError("strategy.k", f"must be at least 1, got {self.k}")
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(
                "strategy.lambda", f"must be in [0, 1], got {self.lam}"
            )
        if self.max_iter < 1:
            raise ConfigError(
                "strategy.max_iter", f"must be at least 1, got {self.max_iter}"
            )
        if not (self.tol > 0.0):
            raise ConfigError(
                "strategy.tol", f"must be positive, got {self.tol}"
            )


@dataclass
class AdjointVector:
    u: Array
    vjp_count: int
    converged: bool = True
    strategy: str = ""


def adjoint_implicit(p: CellParams, x, z_star, v,
                     cfg: StrategyConfig | None = None) -> AdjointVector:
    """Iterate u <- v + J^T u until the update is below tol.

    Returns the iterate with the smallest defect seen; ``converged`` is
    False when max_iter passes without reaching tol.
    """
    if cfg is None:
        cfg = StrategyConfig(variant=IMPLICIT)
    v = as_vector(v, p.d_z, "v")
    apply_t = state_vjp_operator(p, z_star, x)
    u = v
    best_u = v
    best_defect = math.inf
    used = 0
    converged = False
    for _ in range(cfg.max_iter):
        u_next = v + apply_t(u)
        used += 1
        diff = u_next - u
        defect = math.sqrt(float(diff @ diff))
        if defect < best_defect:
            best_defect = defect
            best_u = u_next
        u = u_next
        if defect <= cfg.tol:
            converged = True
            break
    return AdjointVector(best_u, used, converged, IMPLICIT)


def adjoint_jfb(v) -> AdjointVector:
    """u = v: no correction, no VJPs."""
    v = as_vector(v, name="v")
    return AdjointVector(v.copy(), 0, True, JFB)


def adjoint_npg(p: CellParams, x, z_star, v, k: int = 5,
                lam: float = 0.5) -> AdjointVector:
    """Damped truncated Neumann sum u = lam * sum_{i<k} M^i v.

    M w = lam * J^T w + (1 - lam) * w, costing one VJP per power, so
    exactly k - 1 VJPs in total.
    """
    if k < 1:
        raise ConfigError("strategy.k", f"must be at least 1, got {k}")
    if not (0.0 <= lam <= 1.0):
        raise ConfigError("strategy.lambda", f"must be in [0, 1], got {lam}")
    v = as_vector(v, p.d_z, "v")
    apply_t = state_vjp_operator(p, z_star, x)
    w = v
    s = v.copy()
    for _ in range(k - 1):
        w = lam * apply_t(w) + (1.0 - lam) * w
        s += w
    return AdjointVector(lam * s, k - 1, True, NPG)


def adjoint_gdeq(B: LimitedMemoryInverse, v) -> AdjointVector:
    """u = -(B^{-1})^T v, reusing the forward operator.  No VJPs."""
    v = as_vector(v, B.dim, "v")
    return AdjointVector(-lm_apply_transpose(B, v), 0, True, GDEQ)


def grads_from_adjoint(p: CellParams, x, z_star,
                       adj: AdjointVector) -> tuple[ParamGrads, Array]:
    """Pull the adjoint back onto (W, U, b) and onto the input."""
    grads = cell_vjp_params(p, z_star, x, adj.u)
    input_grad = cell_vjp_input(p, z_star, x, adj.u)
    return grads, input_grad


def strategy_dispatch(cfg: StrategyConfig, p: CellParams, x,
                      sol: FixedPointSolution, v) -> AdjointVector:
    """Run the configured strategy against a forward solution."""
    if cfg.variant == JFB:
        return adjoint_jfb(v)
    if cfg.variant == IMPLICIT:
        return adjoint_implicit(p, x, sol.z_star, v, cfg)
    if cfg.variant == NPG:
        return adjoint_npg(p, x, sol.z_star, v, cfg.k, cfg.lam)
    if cfg.variant == GDEQ:
        if sol.solver != BROYDEN:
            raise ConfigError(
                "strategy.variant",
                f"gdeq reuses the broyden operator but the forward pass "
                f"used {sol.solver!r}",
            )
        return adjoint_gdeq(sol.inv_jacobian, v)
    raise ConfigError("strategy.variant", f"unknown variant {cfg.variant!r}")
