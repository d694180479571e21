"""Empirical distributions, support pools, cost matrices and exact order-1 transport.

Transport problems are solved exactly as linear programs with HiGHS, which
is ample at desk scale (a few hundred atoms per side).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import optimize, sparse

__all__ = [
    "NORM_KINDS",
    "EmpiricalDistribution",
    "SupportPool",
    "CostMatrix",
    "merge_supports",
    "cost_matrix",
    "pairwise_norms",
    "wasserstein_distance",
    "transport_plan",
]

NormKind = Literal["l1", "l2", "linf"]
NORM_KINDS: tuple[str, ...] = ("l1", "l2", "linf")

_WEIGHT_TOL = 1e-12


def _check_norm(norm_kind: str) -> str:
    if norm_kind not in NORM_KINDS:
        raise ValueError(f"unknown norm {norm_kind!r}; expected one of {NORM_KINDS}")
    return norm_kind


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        # a flat sequence of scalars is a 1-D sample set
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"points must be a 2-D array (n, d), got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Weighted point cloud in R^d.

    ``points`` has shape (n, d) and ``weights`` shape (n,). Use
    :meth:`uniform` for the usual equal-weight empirical measure.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] == 0:
            raise ValueError("empirical distribution needs at least one point")
        if pts.shape[1] < 1:
            raise ValueError("points must have dimension d >= 1")
        if w.shape[0] != pts.shape[0]:
            raise ValueError(
                f"got {w.shape[0]} weights for {pts.shape[0]} points"
            )
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum():.17g}, expected 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "EmpiricalDistribution":
        pts = _as_points(points)
        n = pts.shape[0]
        if n == 0:
            raise ValueError("empirical distribution needs at least one point")
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True, eq=False)
class SupportPool:
    """The concatenated supports of two empirical distributions.

    The first ``n1`` points come from the first sample and carry label 1,
    the remaining ``n2`` carry label 2. Duplicates are kept.
    """

    points: np.ndarray
    source_label: np.ndarray
    n1: int
    n2: int

    def __post_init__(self):
        pts = _as_points(self.points)
        labels = np.asarray(self.source_label, dtype=int).reshape(-1)
        if pts.shape[0] != self.n1 + self.n2 or labels.shape[0] != pts.shape[0]:
            raise ValueError("pool length must equal n1 + n2")
        expected = np.concatenate([np.ones(self.n1, int), np.full(self.n2, 2)])
        if not np.array_equal(labels, expected):
            raise ValueError("first n1 labels must be 1 and the last n2 must be 2")
        pts.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "source_label", labels)

    @property
    def size(self) -> int:
        return self.n1 + self.n2

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.size


@dataclass(frozen=True, eq=False)
class CostMatrix:
    entries: np.ndarray
    norm_kind: str = "l2"

    def __post_init__(self):
        c = np.asarray(self.entries, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"cost matrix must be square, got shape {c.shape}")
        _check_norm(self.norm_kind)
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def merge_supports(q1: EmpiricalDistribution, q2: EmpiricalDistribution) -> SupportPool:
    """Stack the supports of ``q1`` and ``q2`` (in that order) into one pool."""
    if q1.dim != q2.dim:
        raise ValueError(
            f"dimension mismatch: first sample has d={q1.dim}, second has d={q2.dim}"
        )
    points = np.vstack([q1.points, q2.points])
    labels = np.concatenate([np.ones(q1.n, int), np.full(q2.n, 2)])
    return SupportPool(points, labels, q1.n, q2.n)


def pairwise_norms(x: np.ndarray, y: np.ndarray, norm_kind: str = "l2") -> np.ndarray:
    """Matrix of ``norm(x[i] - y[j])``."""
    _check_norm(norm_kind)
    x = _as_points(x)
    y = _as_points(y)
    diff = np.abs(x[:, None, :] - y[None, :, :])
    if norm_kind == "l1":
        return diff.sum(axis=2)
    if norm_kind == "linf":
        return diff.max(axis=2)
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def cost_matrix(pool: SupportPool, norm_kind: str = "l2") -> CostMatrix:
    """Pairwise distances between pool points under the chosen norm."""
    return CostMatrix(pairwise_norms(pool.points, pool.points, norm_kind), norm_kind)


def transport_plan(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Optimal coupling of weight vectors ``a`` and ``b`` under ``cost``.

    Solved as a linear program with HiGHS. Both weight vectors are
    renormalised to unit mass before solving.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (a.size, b.size):
        raise ValueError(f"cost shape {cost.shape} does not match ({a.size}, {b.size})")
    if not np.all(np.isfinite(cost)):
        raise ValueError("transport costs must be finite")
    n, m = cost.shape
    # row-major flow variables: rows sum to a, columns sum to b
    eq = sparse.vstack(
        [
            sparse.kron(sparse.eye(n), np.ones((1, m))),
            sparse.kron(np.ones((1, n)), sparse.eye(m)),
        ],
        format="csr",
    )
    res = optimize.linprog(
        cost.ravel(),
        A_eq=eq,
        b_eq=np.concatenate([a / a.sum(), b / b.sum()]),
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"transport solver failed: {res.message}")
    return np.maximum(res.x.reshape(n, m), 0.0)


def wasserstein_distance(
    p: EmpiricalDistribution, q: EmpiricalDistribution, norm_kind: str = "l2"
) -> float:
    """Order-1 Wasserstein distance between two weighted point clouds."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: d={p.dim} vs d={q.dim}")
    cost = pairwise_norms(p.points, q.points, norm_kind)
    flow = transport_plan(p.weights, q.weights, cost)
    return max(float(np.sum(flow * cost)), 0.0)
