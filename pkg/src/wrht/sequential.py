"""Change detection with robust detectors: radius calibration, CUSUM, Hotelling baseline.

Random draws go through Philox generators keyed by ``(seed, purpose, index)``,
so a replicate's draws do not depend on how many other replicates run or in
which order they are consumed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .detector import DetectorModel, evaluate
from .distributions import EmpiricalDistribution, wasserstein_distance
from .divergence import get_family
from .lfd import LfdProblem, SolverConfig, solve

__all__ = [
    "CalibrationConfig",
    "CalibrationResult",
    "HotellingModel",
    "ChangeReport",
    "StreamSpec",
    "rng_for",
    "bootstrap_pairs",
    "calibrate_radius",
    "cusum_run",
    "robust_scores",
    "hotelling_fit",
    "hotelling_score",
    "upper_quantile",
    "alarm_threshold",
    "threshold_by_type1",
    "make_report",
    "evaluate_runs",
    "synth_stream",
]

logger = logging.getLogger(__name__)

# purpose tags for rng_for
BOOTSTRAP, STREAM, NULL_RUN = 1, 2, 3


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one replicate."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


# ---------------------------------------------------------------------------
# radius calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationConfig:
    """Bootstrap calibration of the Wasserstein radius.

    ``theta_grid=None`` uses 21 evenly spaced radii from 0 to half the
    largest bootstrap-pair Wasserstein distance; at that end every pair's
    balls overlap and the divergence is 0.
    """

    window_size: int = 20
    bootstrap_reps: int = 50
    confidence: float = 0.9
    divergence_tol: float = 0.05
    theta_grid: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.window_size < 1 or self.bootstrap_reps < 1:
            raise ValueError("window_size and bootstrap_reps must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if not self.divergence_tol >= 0.0:
            raise ValueError("divergence_tol must be nonnegative")
        if self.theta_grid is not None:
            grid = tuple(float(t) for t in self.theta_grid)
            if not grid:
                raise ValueError("theta_grid must be nonempty")
            if grid[0] < 0 or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError("theta_grid must be nonnegative and strictly increasing")
            object.__setattr__(self, "theta_grid", grid)


@dataclass(frozen=True)
class CalibrationResult:
    theta: float
    grid: tuple[float, ...]
    quantiles: tuple[float, ...]
    qualified: bool


def upper_quantile(values, level: float) -> float:
    """Order statistic ``ceil(level * n)`` (1-based) of the sorted values."""
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    if v.size == 0:
        raise ValueError("quantile of an empty sample")
    k = min(max(math.ceil(level * v.size - 1e-12), 1), v.size)
    return float(v[k - 1])


def bootstrap_pairs(data: np.ndarray, n: int, reps: int, seed: int):
    """Bootstrap pairs of size-``n`` windows.

    Each replicate shuffles the data, splits it into two disjoint halves and
    resamples ``n`` points with replacement from each half.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    half = data.shape[0] // 2
    pairs = []
    for b in range(reps):
        rng = rng_for(seed, BOOTSTRAP, b)
        perm = rng.permutation(data.shape[0])
        left, right = perm[:half], perm[half : 2 * half]
        pairs.append(
            (
                data[left[rng.integers(0, half, n)]],
                data[right[rng.integers(0, half, n)]],
            )
        )
    return pairs


def calibrate_radius(
    pre_change_data,
    family,
    cfg: CalibrationConfig | None = None,
    norm_kind: str = "l2",
    solver: SolverConfig | None = None,
    full_curve: bool = False,
) -> CalibrationResult:
    """Smallest grid radius whose bootstrap divergence quantile is at most the tolerance.

    Both balls get the same radius. Radii are visited in ascending order and
    each bootstrap pair's solve is warm-started from its previous radius,
    so per-pair divergences never increase along the grid. The scan stops
    at the first qualifying radius unless ``full_curve`` is set. If none
    qualifies the largest radius is returned with ``qualified=False``.
    """
    cfg = cfg or CalibrationConfig()
    fam = get_family(family)
    data = np.asarray(pre_change_data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if data.ndim != 2 or data.shape[0] < 2 * cfg.window_size:
        raise ValueError(
            f"need at least {2 * cfg.window_size} pre-change samples, got {data.shape[0]}"
        )
    pairs = bootstrap_pairs(data, cfg.window_size, cfg.bootstrap_reps, cfg.seed)
    problems = [
        LfdProblem.from_samples(
            EmpiricalDistribution.uniform(a), EmpiricalDistribution.uniform(b), 0.0, 0.0, fam, norm_kind
        )
        for a, b in pairs
    ]
    grid = cfg.theta_grid
    if grid is None:
        w_max = max(
            wasserstein_distance(
                EmpiricalDistribution.uniform(a), EmpiricalDistribution.uniform(b), norm_kind
            )
            for a, b in pairs
        )
        grid = tuple(float(t) for t in np.linspace(0.0, 0.5 * w_max, 21))
        if w_max == 0.0:
            grid = (0.0,)
    previous = [None] * len(problems)
    quantiles = []
    chosen = None
    for theta in grid:
        divs = []
        for i, base in enumerate(problems):
            sol = solve(base.with_thetas(theta, theta), solver, init=previous[i])
            previous[i] = sol
            divs.append(sol.divergence)
        q = upper_quantile(divs, cfg.confidence)
        quantiles.append(q)
        if chosen is None and q <= cfg.divergence_tol:
            chosen = theta
            if not full_curve:
                break
    if chosen is None:
        logger.warning("no radius in the grid meets the divergence tolerance")
        return CalibrationResult(grid[-1], tuple(grid), tuple(quantiles), False)
    return CalibrationResult(chosen, tuple(grid), tuple(quantiles), True)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def cusum_run(scores, threshold: float):
    """One-sided CUSUM ``S_t = max(0, S_{t-1} + score_t)``.

    Returns the 1-based index of the first ``S_t >= threshold`` (or None)
    and the whole trajectory.
    """
    s = np.asarray(scores, dtype=float).reshape(-1)
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    traj = np.empty_like(s)
    acc = 0.0
    alarm = None
    for t, x in enumerate(s):
        acc = max(0.0, acc + x)
        traj[t] = acc
        if alarm is None and acc >= threshold:
            alarm = t + 1
    return alarm, traj


def cusum_max(scores) -> float:
    """Largest value of the CUSUM trajectory (0 for an empty stream)."""
    _, traj = cusum_run(scores, np.inf)
    return float(traj.max(initial=0.0))


def robust_scores(model: DetectorModel, stream) -> np.ndarray:
    """Per-sample score ``-phi``; positive values point to the second hypothesis."""
    pts = np.asarray(stream, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None] if model.dim == 1 else pts[None, :]
    return -np.asarray(evaluate(model, pts), dtype=float)


@dataclass(frozen=True, eq=False)
class HotellingModel:
    mu: np.ndarray
    sigma_inv: np.ndarray
    ridge: float


def hotelling_fit(training, ridge: float | None = None) -> HotellingModel:
    """Mean and inverse covariance (plus ``ridge * I``) of the training samples.

    The default ridge is ``1e-8 * trace(cov) / d``.
    """
    x = np.asarray(training, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < d + 1:
        raise ValueError(f"need at least d + 1 = {d + 1} training samples, got {n}")
    mu = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    if ridge is None:
        ridge = 1e-8 * float(np.trace(cov)) / d
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    reg = cov + ridge * np.eye(d)
    eig = np.linalg.eigvalsh(reg)
    if eig.min() <= 1e-12 * max(eig.max(), 1e-300):
        raise ValueError("training covariance is singular; use a positive ridge")
    inv = np.linalg.inv(reg)
    return HotellingModel(mu, 0.5 * (inv + inv.T), float(ridge))


def hotelling_score(model: HotellingModel, x):
    """``(x - mu)' Sigma^{-1} (x - mu)`` for one point or each row of an array."""
    arr = np.asarray(x, dtype=float)
    d = model.mu.size
    single = arr.ndim <= 1 and arr.size == d
    pts = arr.reshape(-1, d)
    diff = pts - model.mu
    vals = np.maximum(np.einsum("ij,jk,ik->i", diff, model.sigma_inv, diff), 0.0)
    return float(vals[0]) if single else vals


def alarm_threshold(maxima, alpha: float) -> float:
    """Order statistic ``floor((1 - alpha) R) + 1`` (1-based) of ``R`` run maxima.

    At most ``alpha R`` runs exceed the returned value, so with alarms at
    ``S_t >= h`` the in-sample false-alarm fraction is about ``alpha``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    v = np.sort(np.asarray(maxima, dtype=float).reshape(-1))
    if v.size == 0:
        raise ValueError("threshold of an empty sample")
    k = min(math.floor((1.0 - alpha) * v.size + 1e-12) + 1, v.size)
    return float(v[k - 1])


def threshold_by_type1(
    score_generator: Callable[[np.random.Generator], Sequence[float]],
    alpha: float,
    reps: int,
    seed: int = 0,
    statistic: Callable[[np.ndarray], float] = cusum_max,
) -> float:
    """:func:`alarm_threshold` of a run statistic over simulated pre-change runs.

    ``score_generator(rng)`` returns one pre-change score sequence; the
    default statistic is the CUSUM maximum, so a threshold at the returned
    value keeps the false-alarm probability near ``alpha``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if reps < 1:
        raise ValueError("reps must be positive")
    maxima = [
        statistic(np.asarray(score_generator(rng_for(seed, NULL_RUN, r)), dtype=float))
        for r in range(reps)
    ]
    return alarm_threshold(maxima, alpha)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChangeReport:
    """Outcome of one monitored stream; times are 1-based sample indices.

    ``truth_change_time`` is the index of the first post-change sample.
    """

    alarm_time: int | None
    threshold: float
    per_step_stat: np.ndarray
    method: str
    truth_change_time: int | None = None
    delay: int | None = None
    false_alarm: bool = False


def make_report(alarm_time, threshold, per_step_stat, method, truth_change_time=None) -> ChangeReport:
    delay = None
    false_alarm = False
    if alarm_time is not None and truth_change_time is not None:
        if alarm_time >= truth_change_time:
            delay = int(alarm_time - truth_change_time)
        else:
            false_alarm = True
    return ChangeReport(
        alarm_time,
        float(threshold),
        np.asarray(per_step_stat, dtype=float),
        method,
        truth_change_time,
        delay,
        false_alarm,
    )


def evaluate_runs(reports: Sequence[ChangeReport]) -> dict:
    """Average delay over detected runs, false-alarm rate and detection rate.

    ``avg_delay`` is None when no run detected the change.
    """
    if not reports:
        raise ValueError("no reports to evaluate")
    delays = [r.delay for r in reports if r.delay is not None]
    n = len(reports)
    return {
        "avg_delay": float(np.mean(delays)) if delays else None,
        "type1_rate": sum(r.false_alarm for r in reports) / n,
        "detection_rate": len(delays) / n,
    }


# ---------------------------------------------------------------------------
# synthetic streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StreamSpec:
    """Gaussian stream with covariance ``cov_scale * I`` whose mean switches after ``change_time`` samples."""

    d: int = 2
    pre_mean: tuple[float, ...] = (0.0, 0.0)
    post_mean: tuple[float, ...] = (2.0, 0.0)
    cov_scale: float = 1.0
    change_time: int = 200
    length: int = 400
    seed: int = 0

    def __post_init__(self):
        if len(self.pre_mean) != self.d or len(self.post_mean) != self.d:
            raise ValueError("means must have d entries")
        if not 0 <= self.change_time <= self.length:
            raise ValueError("change_time must lie in [0, length]")
        if self.cov_scale < 0:
            raise ValueError("cov_scale must be nonnegative")


def synth_stream(spec: StreamSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Samples of shape ``(length, d)``; rows from ``change_time`` on use the post-change mean."""
    rng = rng if rng is not None else rng_for(spec.seed, STREAM)
    mean = np.empty((spec.length, spec.d))
    mean[: spec.change_time] = spec.pre_mean
    mean[spec.change_time :] = spec.post_mean
    noise = rng.standard_normal((spec.length, spec.d))
    return mean + math.sqrt(spec.cov_scale) * noise
