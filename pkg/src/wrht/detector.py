"""Robust detectors built from least favorable distributions.

The detector takes the family's optimal value at every pool point and is
extended to the rest of the space by the nearest pool point. The sign rule
accepts the first hypothesis when the detector is nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distributions import NORM_KINDS, SupportPool, pairwise_norms
from .divergence import CLAMP_CAP, PsiFamily, detector_value, ell, get_family, psi
from .lfd import LfdSolution

__all__ = [
    "DetectorModel",
    "FORMAT_HEADER",
    "build",
    "evaluate",
    "risk_phi",
    "risk_bound",
    "sign_rule_errors",
    "save_model",
    "load_model",
]

FORMAT_HEADER = "wrht-detector v1"
_WEIGHT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DetectorModel:
    """Detector values at the pool points plus what is needed to extend them."""

    pool: SupportPool
    phi: np.ndarray
    family: PsiFamily
    p1: np.ndarray
    p2: np.ndarray
    norm_kind: str = "l2"

    def __post_init__(self):
        object.__setattr__(self, "family", get_family(self.family))
        if self.norm_kind not in NORM_KINDS:
            raise ValueError(f"unknown norm {self.norm_kind!r}")
        for name in ("phi", "p1", "p2"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if arr.shape != (self.pool.size,):
                raise ValueError(f"{name} must have one entry per pool point")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(np.abs(self.phi) > CLAMP_CAP):
            raise ValueError(f"detector values must lie within +-{CLAMP_CAP}")

    @property
    def dim(self) -> int:
        return self.pool.dim


def build(solution: LfdSolution, family=None, norm_kind: str = "l2", pool=None) -> DetectorModel:
    """Detector of an LFD solution; points carrying no mass get 0.

    ``pool`` defaults to the pool the solution was computed on.
    """
    fam = get_family(family if family is not None else solution.family)
    pool = pool if pool is not None else solution.pool
    if pool is None:
        raise ValueError("solution carries no pool; pass one explicitly")
    p1 = np.asarray(solution.p1, dtype=float)
    p2 = np.asarray(solution.p2, dtype=float)
    phi = np.asarray(detector_value(fam, p1, p2), dtype=float).reshape(-1)
    return DetectorModel(pool, phi, fam, p1, p2, norm_kind)


def _nearest(model: DetectorModel, points: np.ndarray) -> np.ndarray:
    dist = pairwise_norms(points, model.pool.points, model.norm_kind)
    # argmin returns the first minimum, i.e. the lowest pool index on ties
    return np.argmin(dist, axis=1)


def evaluate(model: DetectorModel, omega) -> float | np.ndarray:
    """Detector value at one point (d-vector) or at each row of an (m, d) array."""
    arr = np.asarray(omega, dtype=float)
    single = arr.ndim == 1
    pts = arr[None, :] if single else arr
    if pts.ndim != 2 or pts.shape[1] != model.dim:
        raise ValueError(
            f"dimension mismatch: model has d={model.dim}, got shape {arr.shape}"
        )
    vals = model.phi[_nearest(model, pts)]
    return float(vals[0]) if single else vals


def _check_weights(weights, n, name):
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape != (n,):
        raise ValueError(f"{name}: got {w.size} weights for {n} values")
    if np.any(w < 0) or abs(w.sum() - 1.0) > _WEIGHT_TOL:
        raise ValueError(f"{name}: weights must be nonnegative and sum to 1")
    return w


def risk_phi(phi_under_p1, phi_under_p2, family, weights1=None, weights2=None) -> float:
    """``E_P1[ell(-phi)] + E_P2[ell(phi)]`` for detector values drawn under each hypothesis.

    Weights default to uniform.
    """
    fam = get_family(family)
    v1 = np.asarray(phi_under_p1, dtype=float).reshape(-1)
    v2 = np.asarray(phi_under_p2, dtype=float).reshape(-1)
    if v1.size == 0 or v2.size == 0:
        raise ValueError("risk needs at least one value under each hypothesis")
    w1 = _check_weights(weights1, v1.size, "weights1")
    w2 = _check_weights(weights2, v2.size, "weights2")
    return float(np.dot(w1, ell(fam, -v1)) + np.dot(w2, ell(fam, v2)))


def sign_rule_errors(phi_under_p1, phi_under_p2, weights1=None, weights2=None):
    """Type-I and type-II error of the rule "accept the first hypothesis iff phi >= 0"."""
    v1 = np.asarray(phi_under_p1, dtype=float).reshape(-1)
    v2 = np.asarray(phi_under_p2, dtype=float).reshape(-1)
    w1 = _check_weights(weights1, v1.size, "weights1")
    w2 = _check_weights(weights2, v2.size, "weights2")
    return float(np.dot(w1, v1 < 0)), float(np.dot(w2, v2 >= 0))


def risk_bound(family, epsilon: float) -> float:
    """Risk level ``psi(epsilon)`` below which both error probabilities stay under ``epsilon``."""
    eps = float(epsilon)
    if not 0.0 < eps < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    return float(psi(family, eps))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_model(model: DetectorModel, path) -> None:
    """Write the versioned flat-file format."""
    lines = [
        FORMAT_HEADER,
        model.family.kind,
        model.norm_kind,
        str(model.dim),
        f"{model.pool.n1} {model.pool.n2}",
    ]
    for m in range(model.pool.size):
        vals = list(model.pool.points[m]) + [model.p1[m], model.p2[m], model.phi[m]]
        lines.append(" ".join(_fmt(v) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_model(path) -> DetectorModel:
    """Read a model written by :func:`save_model`."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if len(lines) < 5 or lines[0].strip() != FORMAT_HEADER:
        raise ValueError(f"{path}: not a {FORMAT_HEADER!r} file")
    family = lines[1].strip()
    norm_kind = lines[2].strip()
    try:
        d = int(lines[3])
        n1, n2 = (int(t) for t in lines[4].split())
        body = np.array([[float(t) for t in ln.split()] for ln in lines[5:] if ln.strip()])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed detector file ({exc})") from None
    if body.shape != (n1 + n2, d + 3):
        raise ValueError(f"{path}: expected {n1 + n2} rows of {d + 3} numbers")
    labels = np.concatenate([np.ones(n1, int), np.full(n2, 2)])
    pool = SupportPool(body[:, :d], labels, n1, n2)
    return DetectorModel(pool, body[:, d + 2], family, body[:, d], body[:, d + 1], norm_kind)
