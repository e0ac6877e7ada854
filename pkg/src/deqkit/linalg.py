"""Limited-memory low-rank approximation of an inverse Jacobian.

The operator represents B^{-1} = -I + sum_i u_i v_i^T with at most
``capacity`` rank-one pairs.  Pairs are stored as rows of two stacked
(capacity, dim) arrays so that applying the operator is two matvecs
regardless of how many pairs are held.  Instances are value-like: the
update ``lm_push`` returns a new operator and never mutates its input.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

Array = np.ndarray


def as_vector(x, dim: int | None = None, name: str = "vector") -> Array:
    """Coerce to a float64 1-D array, checking length when ``dim`` is given."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ShapeError(f"{name} has length {arr.shape[0]}, expected {dim}")
    return arr


def require_finite(arr: Array, name: str = "array") -> Array:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


class LimitedMemoryInverse:
    """Bounded stack of rank-one corrections to -I."""

    __slots__ = ("dim", "capacity", "_us", "_vs", "_count")

    def __init__(self, dim: int, capacity: int = 32, pairs=()):
        if dim < 1:
            raise ShapeError(f"dim must be positive, got {dim}")
        if capacity < 1:
            raise ShapeError(f"capacity must be positive, got {capacity}")
        self.dim = int(dim)
        self.capacity = int(capacity)
        self._us = np.zeros((self.capacity, self.dim))
        self._vs = np.zeros((self.capacity, self.dim))
        pairs = list(pairs)
        if len(pairs) > self.capacity:
            raise ShapeError(
                f"got {len(pairs)} pairs but capacity is {self.capacity}"
            )
        for i, (u, v) in enumerate(pairs):
            self._us[i] = as_vector(u, self.dim, "u")
            self._vs[i] = as_vector(v, self.dim, "v")
        self._count = len(pairs)

    @classmethod
    def _from_arrays(cls, dim: int, capacity: int, us: Array, vs: Array,
                     count: int) -> "LimitedMemoryInverse":
        # Takes ownership of us/vs; internal fast path for the solver.
        op = cls.__new__(cls)
        op.dim = dim
        op.capacity = capacity
        op._us = us
        op._vs = vs
        op._count = count
        return op

    def __len__(self) -> int:
        return self._count

    @property
    def pairs(self) -> list[tuple[Array, Array]]:
        """Stored (u, v) pairs, oldest first, as defensive copies."""
        return [(self._us[i].copy(), self._vs[i].copy())
                for i in range(self._count)]

    def __repr__(self) -> str:
        return (f"LimitedMemoryInverse(dim={self.dim}, "
                f"capacity={self.capacity}, pairs={self._count})")


def lm_apply(op: LimitedMemoryInverse, w) -> Array:
    """Return B^{-1} w = -w + sum_i u_i (v_i . w)."""
    w = as_vector(w, op.dim, "w")
    if op._count == 0:
        return -w
    us = op._us[: op._count]
    vs = op._vs[: op._count]
    return -w + us.T @ (vs @ w)


def lm_apply_transpose(op: LimitedMemoryInverse, w) -> Array:
    """Return (B^{-1})^T w = -w + sum_i v_i (u_i . w)."""
    w = as_vector(w, op.dim, "w")
    if op._count == 0:
        return -w
    us = op._us[: op._count]
    vs = op._vs[: op._count]
    return -w + vs.T @ (us @ w)


def lm_push(op: LimitedMemoryInverse, u, v) -> LimitedMemoryInverse:
    """Append a rank-one pair, evicting the oldest once at capacity.

    Returns a new operator; ``op`` is left untouched.
    """
    u = require_finite(as_vector(u, op.dim, "u"), "u")
    v = require_finite(as_vector(v, op.dim, "v"), "v")
    us = np.zeros_like(op._us)
    vs = np.zeros_like(op._vs)
    if op._count < op.capacity:
        count = op._count
        us[:count] = op._us[:count]
        vs[:count] = op._vs[:count]
    else:
        count = op.capacity - 1
        us[:count] = op._us[1:]
        vs[:count] = op._vs[1:]
    us[count] = u
    vs[count] = v
    return LimitedMemoryInverse._from_arrays(
        op.dim, op.capacity, us, vs, count + 1
    )
