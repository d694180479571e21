"""Least favorable distributions over Wasserstein balls.

Maximizes ``sum_m h(p1[m], p2[m])`` over two transport plans ``gamma_k`` that
move the empirical masses of sample k onto the merged support pool, each
within its own transport budget ``theta_k``; ``p_k`` are the plans' column
sums. The feasible set is a product of budgeted transportation polytopes and
the objective is concave.

Three solvers are available. A log-barrier Newton method (exp, log, quad) and
an exact linear program (hinge) are the defaults; Frank-Wolfe with the exact
linear maximization oracle :func:`lmo` is kept as a first-order option. The
oracle also certifies every answer through the Frank-Wolfe gap.

Only the ``n_k`` rows that carry mass are stored for each plan: row ``l`` of
``gamma1`` belongs to pool point ``l`` and row ``l`` of ``gamma2`` to pool
point ``n1 + l``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse

from .distributions import (
    CostMatrix,
    EmpiricalDistribution,
    SupportPool,
    cost_matrix,
    merge_supports,
)
from .divergence import (
    PsiFamily,
    divergence_of_value,
    get_family,
    pointwise_grad,
    pointwise_objective,
    smoothed_objective,
)

__all__ = [
    "TransportPlan",
    "LfdProblem",
    "LfdSolution",
    "SolverConfig",
    "solve",
    "lmo",
    "objective_and_gradient",
    "brute_force",
    "METHODS",
]

logger = logging.getLogger(__name__)

GRAD_CLAMP = 1e-12
ROW_TOL = 1e-10
BUDGET_TOL = 1e-9
_LN2 = np.log(2.0)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Mass moved from the ``n_k`` atoms of sample ``k`` to the pool points."""

    rows: np.ndarray
    budget_used: float
    k: int

    @property
    def column_sums(self) -> np.ndarray:
        return self.rows.sum(axis=0)


@dataclass(frozen=True, eq=False)
class LfdProblem:
    """Two empirical samples on a shared pool with transport budgets."""

    pool: SupportPool
    costs: CostMatrix
    theta1: float
    theta2: float
    family: PsiFamily
    mass1: np.ndarray = None
    mass2: np.ndarray = None

    def __post_init__(self):
        fam = get_family(self.family)
        object.__setattr__(self, "family", fam)
        if self.costs.size != self.pool.size:
            raise ValueError("cost matrix does not match the pool")
        if not np.all(np.isfinite(self.costs.entries)):
            raise ValueError("costs must be finite")
        for name in ("theta1", "theta2"):
            theta = float(getattr(self, name))
            if not theta >= 0:
                raise ValueError(f"{name} must be nonnegative, got {theta!r}")
            object.__setattr__(self, name, theta)
        for name, n in (("mass1", self.pool.n1), ("mass2", self.pool.n2)):
            m = getattr(self, name)
            m = np.full(n, 1.0 / n) if m is None else np.asarray(m, dtype=float)
            if m.shape != (n,) or abs(m.sum() - 1.0) > 1e-12 or np.any(m < 0):
                raise ValueError(f"{name} must be {n} nonnegative weights summing to 1")
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @classmethod
    def from_samples(
        cls,
        q1: EmpiricalDistribution,
        q2: EmpiricalDistribution,
        theta1: float,
        theta2: float,
        family="exp",
        norm_kind: str = "l2",
    ) -> "LfdProblem":
        pool = merge_supports(q1, q2)
        return cls(
            pool,
            cost_matrix(pool, norm_kind),
            theta1,
            theta2,
            get_family(family),
            q1.weights,
            q2.weights,
        )

    def with_thetas(self, theta1: float, theta2: float) -> "LfdProblem":
        return LfdProblem(
            self.pool, self.costs, theta1, theta2, self.family, self.mass1, self.mass2
        )

    @property
    def n1(self) -> int:
        return self.pool.n1

    @property
    def n2(self) -> int:
        return self.pool.n2

    def side_costs(self, k: int) -> np.ndarray:
        c = self.costs.entries
        return c[: self.n1] if k == 1 else c[self.n1 :]

    def side_mass(self, k: int) -> np.ndarray:
        return self.mass1 if k == 1 else self.mass2

    def theta(self, k: int) -> float:
        return self.theta1 if k == 1 else self.theta2

    def diagonal_plan(self, k: int) -> np.ndarray:
        n_k = self.n1 if k == 1 else self.n2
        offset = 0 if k == 1 else self.n1
        rows = np.zeros((n_k, self.pool.size))
        rows[np.arange(n_k), offset + np.arange(n_k)] = self.side_mass(k)
        return rows

    def empirical_objective(self) -> float:
        """Objective of the unmoved samples, with coincident pool points merged."""
        pts = self.pool.points
        _, inverse = np.unique(pts, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        a = np.bincount(inverse[: self.n1], weights=self.mass1, minlength=inverse.max() + 1)
        b = np.bincount(inverse[self.n1 :], weights=self.mass2, minlength=inverse.max() + 1)
        return float(np.sum(pointwise_objective(self.family, a, b)))


@dataclass(frozen=True, eq=False)
class LfdSolution:
    gamma1: TransportPlan
    gamma2: TransportPlan
    p1: np.ndarray
    p2: np.ndarray
    objective: float
    divergence: float
    fw_gap: float
    iterations: int
    family: PsiFamily = field(default_factory=lambda: PsiFamily("exp"))
    converged: bool = True
    pool: SupportPool | None = None


METHODS = ("auto", "barrier", "frank-wolfe", "lp")


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings.

    ``method="auto"`` runs the barrier method for exp/log/quad and the exact
    linear program for hinge. ``"frank-wolfe"`` is the plain first-order
    alternative (hinge then uses the smoothed objective). Every method
    reports the Frank-Wolfe gap of its final plans, or the duality gap for
    the linear program. There is no randomness; ``seed`` is carried for
    interface uniformity with the Monte Carlo routines.
    """

    max_iters: int = 5000
    gap_tol: float = 1e-6
    seed: int = 0
    method: str = "auto"
    line_search_iters: int = 30
    away_steps: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not self.gap_tol > 0:
            raise ValueError("gap_tol must be positive")


# ---------------------------------------------------------------------------
# linear maximization oracle
# ---------------------------------------------------------------------------


def _assign(g, costs, lam):
    scores = g[None, :] - lam * costs
    return np.argmax(scores, axis=1)


def lmo(gradient, k: int, costs, theta: float, row_mass=None) -> TransportPlan:
    """Maximize ``sum_{l,m} s[l,m] g[m]`` over budgeted transportation plans.

    ``costs`` holds the ``n_k`` rows of side ``k`` (one per source atom, one
    column per pool point). Rows carry ``row_mass`` (uniform ``1/n_k`` by
    default) and the plan must satisfy ``sum s * costs <= theta``.

    For a multiplier ``lam`` every row sends its mass to
    ``argmax_m g[m] - lam * costs[l, m]`` (lowest index on ties). When the
    unconstrained choice overspends, ``lam`` is bisected to the breakpoint
    where the budget is crossed and the two neighbouring assignments are
    mixed so the budget binds exactly.
    """
    g = np.asarray(gradient, dtype=float)
    costs = np.asarray(costs, dtype=float)
    n_k, n_cols = costs.shape
    if g.shape != (n_cols,) or not np.all(np.isfinite(g)):
        raise ValueError("gradient must be a finite vector with one entry per column")
    if not theta >= 0:
        raise ValueError("theta must be nonnegative")
    w = np.full(n_k, 1.0 / n_k) if row_mass is None else np.asarray(row_mass, float)
    rows_idx = np.arange(n_k)

    def budget(choice):
        return float(np.dot(w, costs[rows_idx, choice]))

    def plan(choice):
        s = np.zeros((n_k, n_cols))
        s[rows_idx, choice] = w
        return s

    choice0 = _assign(g, costs, 0.0)
    b0 = budget(choice0)
    if b0 <= theta:
        return TransportPlan(plan(choice0), b0, k)

    positive = costs[costs > 0]
    lam_hi = 2.0 * (g.max() - g.min()) / positive.min() + 1.0
    lam_lo = 0.0
    choice_hi = _assign(g, costs, lam_hi)
    b_hi = budget(choice_hi)
    choice_lo, b_lo = choice0, b0
    for _ in range(100):
        if theta - b_hi <= 1e-12 or lam_hi - lam_lo <= 4e-16 * lam_hi:
            break
        mid = 0.5 * (lam_lo + lam_hi)
        choice = _assign(g, costs, mid)
        b = budget(choice)
        if b <= theta:
            lam_hi, choice_hi, b_hi = mid, choice, b
        else:
            lam_lo, choice_lo, b_lo = mid, choice, b
    if theta - b_hi <= 1e-12:
        return TransportPlan(plan(choice_hi), b_hi, k)
    tau = (theta - b_hi) / (b_lo - b_hi)
    rows = (1.0 - tau) * plan(choice_hi) + tau * plan(choice_lo)
    return TransportPlan(rows, float(np.sum(rows * costs)), k)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def _column_grad(family, p1, p2):
    return pointwise_grad(
        family, np.maximum(p1, GRAD_CLAMP), np.maximum(p2, GRAD_CLAMP)
    )


def _check_plan(problem: LfdProblem, rows, k: int):
    rows = np.asarray(rows, dtype=float)
    n_k = problem.n1 if k == 1 else problem.n2
    if rows.shape != (n_k, problem.pool.size):
        raise ValueError(f"plan {k} has shape {rows.shape}, expected {(n_k, problem.pool.size)}")
    if np.any(rows < -1e-15):
        raise ValueError(f"plan {k} has negative entries")
    if np.max(np.abs(rows.sum(axis=1) - problem.side_mass(k))) > ROW_TOL:
        raise ValueError(f"plan {k} rows do not carry the sample masses")
    used = float(np.sum(rows * problem.side_costs(k)))
    if used > problem.theta(k) + BUDGET_TOL:
        raise ValueError(f"plan {k} spends {used:.6g} > theta{k} = {problem.theta(k):.6g}")
    return rows


def objective_and_gradient(problem: LfdProblem, gamma1, gamma2):
    """Objective value and per-column gradients of both plans.

    ``gamma1``/``gamma2`` may be :class:`TransportPlan` objects or raw arrays.
    The gradient with respect to ``gamma_k[l, m]`` does not depend on ``l``,
    so one vector of length ``n1 + n2`` is returned per side.
    """
    g1 = _check_plan(problem, getattr(gamma1, "rows", gamma1), 1)
    g2 = _check_plan(problem, getattr(gamma2, "rows", gamma2), 2)
    p1 = g1.sum(axis=0)
    p2 = g2.sum(axis=0)
    value = float(np.sum(pointwise_objective(problem.family, p1, p2)))
    grad1, grad2 = _column_grad(problem.family, p1, p2)
    return value, np.asarray(grad1), np.asarray(grad2)


# ---------------------------------------------------------------------------
# Frank-Wolfe
# ---------------------------------------------------------------------------

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _golden_max(f, hi, iters):
    """Maximize a concave scalar function on [0, hi]; returns (step, value)."""
    a, b = 0.0, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


class _ActiveSet:
    """Convex decomposition of the iterate into oracle outputs."""

    def __init__(self, atom):
        self.atoms = {self._key(atom): atom}
        self.weights = {self._key(atom): 1.0}

    @staticmethod
    def _key(atom):
        return atom[0].tobytes() + atom[1].tobytes()

    def add(self, atom, step):
        for key in self.weights:
            self.weights[key] *= 1.0 - step
        key = self._key(atom)
        if key in self.atoms:
            self.weights[key] += step
        else:
            self.atoms[key] = atom
            self.weights[key] = step
        self._prune()

    def remove_away(self, key, step):
        for k in self.weights:
            self.weights[k] *= 1.0 + step
        self.weights[key] -= step
        self._prune()

    def _prune(self):
        for key in [k for k, w in self.weights.items() if w <= 1e-15]:
            del self.weights[key]
            del self.atoms[key]

    def away_atom(self, g1, g2):
        best_key, best_val = None, np.inf
        for key, (a1, a2) in self.atoms.items():
            val = float(np.dot(a1.sum(axis=0), g1) + np.dot(a2.sum(axis=0), g2))
            if val < best_val:
                best_key, best_val = key, val
        return best_key, best_val


def _final_solution(problem, x1, x2, gap, iterations, converged):
    p1 = x1.sum(axis=0)
    p2 = x2.sum(axis=0)
    value = float(np.sum(pointwise_objective(problem.family, p1, p2)))
    value = min(max(value, 0.0), 2.0)
    c1, c2 = problem.side_costs(1), problem.side_costs(2)
    return LfdSolution(
        gamma1=TransportPlan(x1, float(np.sum(x1 * c1)), 1),
        gamma2=TransportPlan(x2, float(np.sum(x2 * c2)), 2),
        p1=p1,
        p2=p2,
        objective=value,
        divergence=divergence_of_value(problem.family, value),
        fw_gap=float(gap),
        iterations=int(iterations),
        family=problem.family,
        converged=bool(converged),
        pool=problem.pool,
    )


def _fw_gap(problem: LfdProblem, x1, x2) -> float:
    """Frank-Wolfe gap of the plans under the clamped column gradients."""
    p1, p2 = x1.sum(axis=0), x2.sum(axis=0)
    g1, g2 = _column_grad(problem.family, p1, p2)
    s1 = lmo(g1, 1, problem.side_costs(1), problem.theta1, problem.mass1).column_sums
    s2 = lmo(g2, 2, problem.side_costs(2), problem.theta2, problem.mass2).column_sums
    return max(float(np.dot(g1, s1 - p1) + np.dot(g2, s2 - p2)), 0.0)


# ---------------------------------------------------------------------------
# barrier method (exp, log, quad)
# ---------------------------------------------------------------------------


def _curvature(kind, a, b):
    """Value, gradient and rank-one curvature factors of ``h`` per column.

    The Hessian of ``h`` at ``(a, b)`` is ``-(ua, -ub)(ua, -ub)^T``.
    Columns where a factor is not finite (a zero mass) get 0 there; the
    barrier keeps every mass positive so this only guards round-off.
    """
    s = a + b
    with np.errstate(all="ignore"):
        if kind == "exp":
            v = 2.0 * np.sqrt(a * b)
            ga, gb = np.sqrt(b / a), np.sqrt(a / b)
            ua = np.sqrt(0.5 * np.sqrt(b) / a**1.5)
            ub = np.sqrt(0.5 * np.sqrt(a) / b**1.5)
        elif kind == "log":
            v = np.asarray(pointwise_objective("log", np.maximum(a, 0), np.maximum(b, 0)))
            ga, gb = np.log2(s / a), np.log2(s / b)
            ua = np.sqrt(b / (a * s * _LN2))
            ub = np.sqrt(a / (b * s * _LN2))
        else:
            v = 4.0 * a * b / s
            ga, gb = 4.0 * (b / s) ** 2, 4.0 * (a / s) ** 2
            k = np.sqrt(8.0 / s**3)
            ua, ub = k * b, k * a
    out = []
    for t in (v, ga, gb, ua, ub):
        out.append(np.where(np.isfinite(t), t, 0.0))
    return out


class _BarrierState:
    """Free entries of both plans flattened into one vector."""

    def __init__(self, problem: LfdProblem):
        n1, n2, size = problem.n1, problem.n2, problem.pool.size
        self.size = size
        self.n_rows = n1 + n2
        costs = [problem.side_costs(1), problem.side_costs(2)]
        masses = [problem.mass1, problem.mass2]
        thetas = [problem.theta1, problem.theta2]
        blocks = []
        for k in range(2):
            c, w, th = costs[k], masses[k], thetas[k]
            # with no budget only zero-cost moves (the atom itself or duplicates) exist
            mask = np.ones_like(c, bool) if th > 0 else (c == 0)
            mask &= (w > 0)[:, None]
            n_k = c.shape[0]
            own = np.zeros_like(c)
            own[np.arange(n_k), (0 if k == 0 else n1) + np.arange(n_k)] = 1.0
            if th > 0:
                spread = float(w @ c.mean(axis=1))
                eps = 0.5 if spread == 0 else min(0.5, 0.5 * th / spread)
                start = (1.0 - eps) * own + eps / size
            else:
                start = mask / np.maximum(mask.sum(axis=1, keepdims=True), 1)
            blocks.append((mask, w[:, None] * start, c))
        self.free = np.concatenate([blocks[0][0].ravel(), blocks[1][0].ravel()])
        rows = np.concatenate(
            [np.repeat(np.arange(n1), size), n1 + np.repeat(np.arange(n2), size)]
        )
        cols = np.tile(np.arange(size), n1 + n2)
        side = np.concatenate([np.zeros(n1 * size, bool), np.ones(n2 * size, bool)])
        cost = np.concatenate([blocks[0][2].ravel(), blocks[1][2].ravel()])
        self.x0 = np.concatenate([blocks[0][1].ravel(), blocks[1][1].ravel()])[self.free]
        self.row = rows[self.free]
        self.col = cols[self.free]
        self.second = side[self.free]
        cost = cost[self.free]
        budgets = [k for k in range(2) if thetas[k] > 0]
        self.cvec = np.array(
            [np.where(self.second == bool(k), cost, 0.0) for k in budgets]
        ).reshape(len(budgets), cost.size)
        self.theta = np.array([thetas[k] for k in budgets])
        self.mass = np.concatenate([masses[0], masses[1]])
        self.n1 = n1

    def columns(self, x):
        first = ~self.second
        p1 = np.bincount(self.col[first], x[first], minlength=self.size)
        p2 = np.bincount(self.col[self.second], x[self.second], minlength=self.size)
        return p1, p2

    def renormalize(self, x):
        sums = np.bincount(self.row, x, minlength=self.n_rows)
        return x * (self.mass / np.where(sums > 0, sums, 1.0))[self.row]

    def plans(self, x):
        full = np.zeros(self.free.size)
        full[self.free] = x
        cut = self.n1 * self.size
        return full[:cut].reshape(self.n1, self.size), full[cut:].reshape(-1, self.size)


_MU_SHRINK = 0.2
_CENTERING = 1e-2


def _barrier(problem: LfdProblem, cfg: SolverConfig):
    """Primal log-barrier path following with a reduced Newton system.

    Maximizes ``f(x) + mu (sum log x + sum log slack)`` subject to the row
    sums for a decreasing sequence of ``mu``. The Newton matrix is
    ``D + U U^T`` (``D`` from the barrier, ``U`` one column per pool point
    from the rank-one Hessian of ``h`` plus one per active budget). Instead
    of inverting it directly, the step is recovered from a small symmetric
    system in the multipliers of ``U^T dx`` and of the row constraints,
    which is built from positive sums only and stays accurate for tiny
    ``mu``. Rows are rescaled after each step so they stay exact.
    """
    kind = problem.family.kind
    st = _BarrierState(problem)
    x = st.x0.copy()
    nv, nb, size, nr = x.size, st.theta.size, st.size, st.n_rows
    q = size + nb
    col, row, second, cvec = st.col, st.row, st.second, st.cvec

    def gradient(x, mu, slack=None):
        p1, p2 = st.columns(x)
        _, ga, gb, ua, ub = _curvature(kind, p1, p2)
        if slack is None:
            slack = st.theta - cvec @ x
        g = np.where(second, gb[col], ga[col]) + mu / x - (mu / slack) @ cvec
        return g, ua, ub, slack

    best = x.copy()
    best_gap = np.inf
    if nv == nr:
        # every row is pinned to a single entry
        x1, x2 = st.plans(x)
        return x1, x2, _fw_gap(problem, x1, x2), 0
    p1, p2 = st.columns(x)
    _, ga, gb, _, _ = _curvature(kind, p1, p2)
    mu = max(1e-4, float(np.abs(np.where(second, gb[col], ga[col]) * x).sum()) / (nv + nb))
    it = 0
    while it < cfg.max_iters:
        for _ in range(60):
            it += 1
            g, ua, ub, slack = gradient(x, mu)
            dinv = x * x / mu
            u = np.where(second, -ub[col], ua[col])
            bv = (np.sqrt(mu) / slack)[:, None] * cvec
            a = np.zeros((q + nr, q + nr))
            idx = np.arange(size)
            a[idx, idx] = 1.0 + np.bincount(col, u * u * dinv, minlength=size)
            if nb:
                cb = bv * dinv
                a[size:q, size:q] = np.eye(nb) + cb @ bv.T
                for j in range(nb):
                    a[size + j, :size] = np.bincount(col, cb[j] * u, minlength=size)
                    a[size + j, q:] = -np.bincount(row, cb[j], minlength=nr)
                a[:size, size:q] = a[size:q, :size].T
                a[q:, size:q] = a[size:q, q:].T
            ue = np.zeros((size, nr))
            np.add.at(ue, (col, row), -u * dinv)
            a[:size, q:] = ue
            a[q:, :size] = ue.T
            a[q + np.arange(nr), q + np.arange(nr)] = np.bincount(row, dinv, minlength=nr)
            dg = dinv * g
            rhs = np.concatenate(
                [
                    np.bincount(col, u * dg, minlength=size),
                    bv @ dg,
                    -np.bincount(row, dg, minlength=nr),
                ]
            )
            scale = 1.0 / np.sqrt(np.abs(np.diag(a)))
            try:
                sol = scale * np.linalg.solve(a * scale[:, None] * scale[None, :], rhs * scale)
            except np.linalg.LinAlgError:
                break
            w_col, w_bud, nu = sol[:size], sol[size:q], sol[q:]
            dx = dinv * (g + nu[row] - u * w_col[col] - bv.T @ w_bud)
            decrement = float(g @ dx)
            if not decrement > _CENTERING * mu:
                break
            step = 1.0
            neg = dx < 0
            if neg.any():
                step = min(step, 0.99 * float(np.min(-x[neg] / dx[neg])))
            cd = cvec @ dx
            pos = cd > 0
            if pos.any():
                step = min(step, 0.99 * float(np.min(slack[pos] / cd[pos])))

            def slope(t):
                return float(gradient(x + t * dx, mu, slack - t * cd)[0] @ dx)

            s_hi = slope(step)
            if s_hi < 0:
                # the slope decreases along the line: Illinois regula falsi for its root
                lo, hi, s_lo = 0.0, step, decrement
                for _ in range(30):
                    mid = hi - s_hi * (hi - lo) / (s_hi - s_lo)
                    if not lo < mid < hi:
                        mid = 0.5 * (lo + hi)
                    s_mid = slope(mid)
                    if abs(s_mid) <= 0.1 * decrement:
                        lo = mid
                        break
                    if s_mid > 0:
                        lo, s_lo = mid, s_mid
                        s_hi *= 0.5
                    else:
                        hi, s_hi = mid, s_mid
                        s_lo *= 0.5
                step = lo if lo > 0 else hi
            for _ in range(40):
                trial = st.renormalize(x + step * dx)
                if np.all(trial > 0) and not (nb and np.any(cvec @ trial >= st.theta)):
                    break
                step *= 0.5
            else:
                break
            x = trial
            if it >= cfg.max_iters:
                break
        # the certificate roughly tracks mu * m, so skip the oracle while that is far off
        if mu * (nv + nb) <= 10.0 * cfg.gap_tol or it >= cfg.max_iters:
            x1, x2 = st.plans(x)
            gap = _fw_gap(problem, x1, x2)
            logger.debug("barrier mu %.3g after %d steps, gap %.3g", mu, it, gap)
            if gap < best_gap:
                best, best_gap = x.copy(), gap
        else:
            gap = np.inf
        # past this point round-off, not the barrier, limits the gap
        measure = mu * (nv + nb)
        stalled = np.isfinite(best_gap) and measure < 1e-2 * best_gap
        if gap <= cfg.gap_tol or stalled or measure < 1e-14 or it >= cfg.max_iters:
            break
        mu *= _MU_SHRINK
    if not np.isfinite(best_gap):
        best, best_gap = x, _fw_gap(problem, *st.plans(x))
    x1, x2 = st.plans(best)
    return x1, x2, best_gap, it


# ---------------------------------------------------------------------------
# linear program (hinge)
# ---------------------------------------------------------------------------


def _hinge_lp(problem: LfdProblem):
    """Exact hinge solution: maximize ``2 sum t`` with ``t <= p1``, ``t <= p2``.

    Returns the plans and the primal-dual gap reported by HiGHS.
    """
    n1, n2, size = problem.n1, problem.n2, problem.pool.size
    nv1, nv2 = n1 * size, n2 * size
    nvar = nv1 + nv2 + size
    c = np.zeros(nvar)
    c[nv1 + nv2 :] = -2.0
    eq = sparse.lil_matrix((n1 + n2, nvar))
    for l in range(n1):
        eq[l, l * size : (l + 1) * size] = 1.0
    for l in range(n2):
        eq[n1 + l, nv1 + l * size : nv1 + (l + 1) * size] = 1.0
    b_eq = np.concatenate([problem.mass1, problem.mass2])
    # t_m - sum_l gamma_k[l, m] <= 0 for both sides, then the two budgets
    ub = sparse.lil_matrix((2 * size + 2, nvar))
    for m in range(size):
        ub[m, m : nv1 : size] = -1.0
        ub[size + m, nv1 + m : nv1 + nv2 : size] = -1.0
        ub[m, nv1 + nv2 + m] = 1.0
        ub[size + m, nv1 + nv2 + m] = 1.0
    ub[2 * size, :nv1] = problem.side_costs(1).ravel()
    ub[2 * size + 1, nv1 : nv1 + nv2] = problem.side_costs(2).ravel()
    b_ub = np.concatenate([np.zeros(2 * size), [problem.theta1, problem.theta2]])
    res = optimize.linprog(
        c,
        A_ub=ub.tocsr(),
        b_ub=b_ub,
        A_eq=eq.tocsr(),
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"hinge linear program failed: {res.message}")
    x = np.maximum(res.x, 0.0)
    x1 = x[:nv1].reshape(n1, size)
    x2 = x[nv1 : nv1 + nv2].reshape(n2, size)
    # clean round-off so rows carry the exact masses
    x1 *= (problem.mass1 / np.where(x1.sum(1) > 0, x1.sum(1), 1.0))[:, None]
    x2 *= (problem.mass2 / np.where(x2.sum(1) > 0, x2.sum(1), 1.0))[:, None]
    dual = float(b_eq @ res.eqlin.marginals + b_ub @ res.ineqlin.marginals)
    gap = max(float(res.fun) - dual, 0.0)
    return x1, x2, gap, int(res.nit)


def _frank_wolfe(problem: LfdProblem, cfg: SolverConfig, init=None) -> LfdSolution:
    """Frank-Wolfe ascent with optional away steps.

    Starts from ``init`` (a previous :class:`LfdSolution` whose plans are
    feasible for ``problem``, e.g. one solved at a smaller radius) or from the
    no-transport plans. Each iteration takes the better of the classic
    ``2/(t+2)`` step and a golden-section line search; with ``away_steps``
    the iterate may also move away from the worst atom of its active set.
    Stops when the Frank-Wolfe gap drops to ``gap_tol``.
    """
    fam = problem.family
    c1, c2 = problem.side_costs(1), problem.side_costs(2)
    w1, w2 = problem.mass1, problem.mass2
    if init is not None:
        x1 = _check_plan(problem, init.gamma1.rows, 1).copy()
        x2 = _check_plan(problem, init.gamma2.rows, 2).copy()
    else:
        x1 = problem.diagonal_plan(1)
        x2 = problem.diagonal_plan(2)
    active = _ActiveSet((x1.copy(), x2.copy()))
    p1, p2 = x1.sum(axis=0), x2.sum(axis=0)

    def f_cols(q1, q2):
        return float(np.sum(smoothed_objective(fam, np.maximum(q1, 0.0), np.maximum(q2, 0.0))))

    value = f_cols(p1, p2)
    gap = np.inf
    it = 0
    for it in range(cfg.max_iters):
        g1, g2 = _column_grad(fam, p1, p2)
        s1 = lmo(g1, 1, c1, problem.theta1, w1).rows
        s2 = lmo(g2, 2, c2, problem.theta2, w2).rows
        sp1, sp2 = s1.sum(axis=0), s2.sum(axis=0)
        lin_x = float(np.dot(g1, p1) + np.dot(g2, p2))
        gap = float(np.dot(g1, sp1) + np.dot(g2, sp2)) - lin_x
        if gap <= cfg.gap_tol:
            return _final_solution(problem, x1, x2, max(gap, 0.0), it, True)

        away_key = None
        if cfg.away_steps and len(active.atoms) > 1:
            away_key, away_lin = active.away_atom(g1, g2)
            if lin_x - away_lin > gap:
                a1, a2 = active.atoms[away_key]
                w_away = active.weights[away_key]
                d1, d2 = x1 - a1, x2 - a2
                dp1, dp2 = p1 - a1.sum(axis=0), p2 - a2.sum(axis=0)
                max_step = w_away / (1.0 - w_away) if w_away < 1.0 else 0.0
            else:
                away_key = None
        if away_key is None:
            d1, d2 = s1 - x1, s2 - x2
            dp1, dp2 = sp1 - p1, sp2 - p2
            max_step = 1.0

        def along(step):
            return f_cols(p1 + step * dp1, p2 + step * dp2)

        step, best = _golden_max(along, max_step, cfg.line_search_iters)
        # endpoint and the classic schedule as fallbacks
        for cand in (max_step, min(2.0 / (it + 2.0), max_step)):
            v = along(cand)
            if v > best:
                step, best = cand, v
        if best < value:
            step, best = 0.0, value
        if step > 0.0:
            x1 = x1 + step * d1
            x2 = x2 + step * d2
            np.maximum(x1, 0.0, out=x1)
            np.maximum(x2, 0.0, out=x2)
            p1, p2 = x1.sum(axis=0), x2.sum(axis=0)
            value = best
            if away_key is None:
                active.add((s1, s2), step)
            else:
                active.remove_away(away_key, step)
        elif away_key is None:
            # no ascent along the oracle direction; gap is a numerical artefact
            break
    logger.debug("frank-wolfe stopped after %d iterations, gap %.3g", it + 1, gap)
    return _final_solution(problem, x1, x2, max(gap, 0.0), it + 1, gap <= cfg.gap_tol)


def solve(problem: LfdProblem, config: SolverConfig | None = None, init=None) -> LfdSolution:
    """Find least favorable distributions for ``problem``.

    ``init`` is a previous :class:`LfdSolution` feasible for ``problem``
    (typically solved at a smaller radius). Frank-Wolfe starts from it; the
    other methods return it instead of their own answer when it scores
    higher, so objective values never drop along a warm-started sweep.
    """
    cfg = config or SolverConfig()
    kind = problem.family.kind
    method = cfg.method
    if method == "auto":
        method = "lp" if kind == "hinge" else "barrier"
    if method == "lp" and kind != "hinge":
        raise ValueError("the lp method only applies to the hinge family")
    if method == "barrier" and kind == "hinge":
        raise ValueError("the barrier method needs a smooth family; use lp or frank-wolfe")
    if method == "frank-wolfe":
        return _frank_wolfe(problem, cfg, init)
    if method == "lp":
        x1, x2, gap, iterations = _hinge_lp(problem)
    else:
        x1, x2, gap, iterations = _barrier(problem, cfg)
    if init is not None:
        i1 = _check_plan(problem, init.gamma1.rows, 1)
        i2 = _check_plan(problem, init.gamma2.rows, 2)
        fam = problem.family
        new = np.sum(pointwise_objective(fam, x1.sum(0), x2.sum(0)))
        old = np.sum(pointwise_objective(fam, i1.sum(0), i2.sum(0)))
        if old > new:
            x1, x2 = i1.copy(), i2.copy()
            gap = _fw_gap(problem, x1, x2) if method == "barrier" else gap
    return _final_solution(problem, x1, x2, gap, iterations, gap <= cfg.gap_tol)


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------


def _simplex_grid(dim: int, k: int) -> np.ndarray:
    """All points of the simplex in R^dim with coordinates in multiples of 1/k."""
    pts = [c for c in itertools.product(range(k + 1), repeat=dim - 1) if sum(c) <= k]
    arr = np.array(pts, dtype=float).reshape(len(pts), dim - 1) / k
    return np.hstack([arr, 1.0 - arr.sum(axis=1, keepdims=True)])


def _local_grid(center: np.ndarray, spacing: float, reach: int = 2) -> np.ndarray:
    """Simplex points near ``center`` on a lattice of the given spacing."""
    dim = center.size
    offs = np.arange(-reach, reach + 1) * spacing
    grid = np.array(list(itertools.product(offs, repeat=dim - 1))).reshape(-1, dim - 1)
    head = center[:-1] + grid
    pts = np.hstack([head, 1.0 - head.sum(axis=1, keepdims=True)])
    return pts[np.all(pts >= -1e-15, axis=1)].clip(min=0.0)


def brute_force(problem: LfdProblem, grid_depth: int = 40, coarse: int = 8) -> LfdSolution:
    """Nested grid search over the plans of a tiny instance (``n1 + n2 <= 3``).

    Each row of each plan is a point of the probability simplex scaled by its
    mass. A coarse lattice with spacing ``1/coarse`` is searched first, then
    ``grid_depth`` rounds search a 5-point-per-axis lattice around the
    incumbent, halving the spacing whenever the incumbent does not move.
    Candidates that overspend a budget are shrunk toward the unmoved plan
    onto the budget boundary. Exact ``h`` is used for every family. Meant as
    a test oracle only.
    """
    size = problem.pool.size
    if size > 3:
        raise ValueError(f"brute_force handles n1 + n2 <= 3, got {size}")
    fam = problem.family
    n1 = problem.n1
    masses = np.concatenate([problem.mass1, problem.mass2])
    costs = np.vstack([problem.side_costs(1), problem.side_costs(2)])
    thetas = (problem.theta1, problem.theta2)
    diag_rows = np.eye(size) * masses[:, None]

    def best_of(candidates):
        # candidates[r]: (c_r, size) simplex points for row r
        combos = np.array(list(itertools.product(*[range(len(c)) for c in candidates])))
        rows = np.stack(
            [candidates[r][combos[:, r]] * masses[r] for r in range(len(candidates))], axis=1
        )
        spend = np.einsum("crm,rm->cr", rows, costs)
        # overspending candidates are pulled toward the unmoved plan until the
        # budget binds, so the search can slide along the budget face
        for side, theta in ((slice(0, n1), thetas[0]), (slice(n1, size), thetas[1])):
            used = spend[:, side].sum(1)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(used > theta, (theta / used) * (1.0 - 1e-14), 1.0)
            rows[:, side] = t[:, None, None] * rows[:, side] + (1.0 - t)[:, None, None] * diag_rows[side]
            ok_side = np.einsum("crm,rm->c", rows[:, side], costs[side]) <= theta
            rows[~ok_side, side] = diag_rows[side]
        p1 = rows[:, :n1].sum(1)
        p2 = rows[:, n1:].sum(1)
        vals = np.sum(pointwise_objective(fam, p1, p2), axis=1)
        i = int(np.argmax(vals))
        return vals[i], rows[i] / np.where(masses > 0, masses, 1.0)[:, None]

    # the unmoved samples are always feasible, so seed the incumbent with them
    diag = np.eye(size)
    best_val, best = best_of([diag[r : r + 1] for r in range(size)])
    val, rows = best_of([_simplex_grid(size, coarse)] * size)
    if val > best_val:
        best_val, best = val, rows
    spacing = 1.0 / coarse
    for _ in range(grid_depth):
        if size == 1:
            break
        val, rows = best_of([_local_grid(best[r], spacing) for r in range(size)])
        if val > best_val + 1e-15:
            best_val, best = val, rows
        else:
            spacing *= 0.5
    plans = best * masses[:, None]
    x1, x2 = plans[:n1].copy(), plans[n1:].copy()
    return _final_solution(problem, x1, x2, np.nan, grid_depth, False)
