"""Generating functions, their auxiliary concave functions and optimal detectors.

Four families are supported, selected by name:

========  =====================  ==========================  =====================
name      ell(t)                 psi(p)                      detector(p1, p2)
========  =====================  ==========================  =====================
exp       e^t                    2 sqrt(p(1-p))              ln sqrt(p1/p2)
log       log2(1 + e^t)          binary entropy (bits)       ln(p1/p2)
quad      ((t+1)_+)^2            4p(1-p)                     (p1-p2)/(p1+p2)
hinge     (t+1)_+                2 min(p, 1-p)               sgn(p1-p2)
========  =====================  ==========================  =====================

``psi(p) = min_t [p ell(t) + (1-p) ell(-t)]`` and the pointwise objective
``h(a, b) = (a+b) psi(a/(a+b))`` is the per-atom risk of the best detector.
A detector value >= 0 accepts the first hypothesis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FAMILIES",
    "CLAMP_CAP",
    "PsiFamily",
    "get_family",
    "ell",
    "psi",
    "psi_smoothed",
    "pointwise_objective",
    "smoothed_objective",
    "pointwise_grad",
    "detector_value",
    "divergence_of_value",
]

FAMILIES: tuple[str, ...] = ("exp", "log", "quad", "hinge")
CLAMP_CAP = 50.0
_LN2 = np.log(2.0)
_VALUE_TOL = 1e-9


@dataclass(frozen=True)
class PsiFamily:
    """A generating-function family.

    ``smoothing_mu`` only matters for ``hinge``: the solver maximizes a
    log-sum-exp smoothing of ``2 min(p, 1-p)`` whose uniform error is at most
    ``2 log 2 / mu``.
    """

    kind: str
    smoothing_mu: float = 200.0

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown family {self.kind!r}; expected one of {FAMILIES}")
        if not self.smoothing_mu > 0:
            raise ValueError("smoothing_mu must be positive")

    @property
    def smooth(self) -> bool:
        """True when the pointwise objective is differentiable in the interior."""
        return self.kind != "hinge"


def get_family(family) -> PsiFamily:
    if isinstance(family, PsiFamily):
        return family
    return PsiFamily(str(family).lower())


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def ell(family, t):
    """Generating function evaluated at ``t``."""
    fam = get_family(family)
    t = np.asarray(t, dtype=float)
    if fam.kind == "exp":
        out = np.exp(t)
    elif fam.kind == "log":
        out = np.logaddexp(0.0, t) / _LN2
    elif fam.kind == "quad":
        out = np.maximum(t + 1.0, 0.0) ** 2
    else:
        out = np.maximum(t + 1.0, 0.0)
    return _scalar_or_array(out)


def _xlogx(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def psi(family, p):
    """Auxiliary function on [0, 1]; zero at both ends and 1 at p = 1/2."""
    fam = get_family(family)
    p = np.asarray(p, dtype=float)
    if np.any(~(p >= 0.0) | ~(p <= 1.0)):
        raise ValueError("psi is defined on [0, 1] only")
    if fam.kind == "exp":
        out = 2.0 * np.sqrt(p * (1.0 - p))
    elif fam.kind == "log":
        out = -(_xlogx(p) + _xlogx(1.0 - p)) / _LN2
    elif fam.kind == "quad":
        out = 4.0 * p * (1.0 - p)
    else:
        out = 2.0 * np.minimum(p, 1.0 - p)
    return _scalar_or_array(out)


def psi_smoothed(p, mu: float):
    """Log-sum-exp smoothing of ``2 min(p, 1-p)``; never above the exact value."""
    p = np.asarray(p, dtype=float)
    out = 2.0 * np.minimum(p, 1.0 - p) - (2.0 / mu) * np.log1p(
        np.exp(-mu * np.abs(1.0 - 2.0 * p))
    )
    return _scalar_or_array(out)


def _check_masses(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("masses must be nonnegative")
    return a, b


def pointwise_objective(family, a, b):
    """``h(a, b) = (a + b) psi(a / (a + b))`` with ``h(0, 0) = 0``."""
    fam = get_family(family)
    a, b = _check_masses(a, b)
    s = a + b
    if fam.kind == "exp":
        out = 2.0 * np.sqrt(a * b)
    elif fam.kind == "quad":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(s > 0, 4.0 * a * b / np.where(s > 0, s, 1.0), 0.0)
    elif fam.kind == "hinge":
        out = 2.0 * np.minimum(a, b)
    else:
        # (a+b) H(a/(a+b)) = (a+b) log(a+b) - a log a - b log b
        out = (_xlogx(s) - _xlogx(a) - _xlogx(b)) / _LN2
        out = np.maximum(out, 0.0)
    return _scalar_or_array(out)


def smoothed_objective(family, a, b):
    """The objective the solver ascends: exact ``h`` except for hinge."""
    fam = get_family(family)
    if fam.kind != "hinge":
        return pointwise_objective(fam, a, b)
    a, b = _check_masses(a, b)
    s = a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(s > 0, a / np.where(s > 0, s, 1.0), 0.5)
    return _scalar_or_array(s * psi_smoothed(r, fam.smoothing_mu))


def pointwise_grad(family, a, b):
    """Partial derivatives ``(dh/da, dh/db)``.

    For hinge this is the gradient of the smoothed objective. Components are
    ``+inf`` where the exact derivative blows up (one mass zero for exp/log).
    """
    fam = get_family(family)
    a, b = _check_masses(a, b)
    s = a + b
    if np.any(s <= 0):
        raise ValueError("gradient needs a + b > 0; clamp masses first")
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam.kind == "exp":
            ga = np.sqrt(b / a)
            gb = np.sqrt(a / b)
        elif fam.kind == "log":
            ga = np.log2(s / a)
            gb = np.log2(s / b)
        elif fam.kind == "quad":
            ga = 4.0 * (b / s) ** 2
            gb = 4.0 * (a / s) ** 2
        else:
            r = a / s
            val = psi_smoothed(r, fam.smoothing_mu)
            slope = 2.0 * np.tanh(0.5 * fam.smoothing_mu * (1.0 - 2.0 * r))
            ga = val + (1.0 - r) * slope
            gb = val - r * slope
    return _scalar_or_array(ga), _scalar_or_array(gb)


def detector_value(family, p1, p2):
    """Optimal detector value at an atom carrying masses ``p1`` and ``p2``.

    Positive values favour the first hypothesis. Infinite log-ratios are
    clamped to ``+-CLAMP_CAP``; an atom with no mass gets 0.
    """
    fam = get_family(family)
    p1, p2 = _check_masses(p1, p2)
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam.kind == "exp":
            out = 0.5 * (np.log(p1) - np.log(p2))
        elif fam.kind == "log":
            out = np.log(p1) - np.log(p2)
        elif fam.kind == "quad":
            out = (p1 - p2) / (p1 + p2)
        else:
            out = np.sign(p1 - p2)
    out = np.where((p1 == 0) & (p2 == 0), 0.0, out)
    out = np.clip(out, -CLAMP_CAP, CLAMP_CAP)
    return _scalar_or_array(out)


def divergence_of_value(family, objective_value: float) -> float:
    """Map an optimal risk value in [0, 2] to the family's divergence ``1 - v/2``.

    Squared Hellinger for exp, JS/log 2 for log, triangle discrimination for
    quad and total variation for hinge.
    """
    get_family(family)
    v = float(objective_value)
    if not (-_VALUE_TOL <= v <= 2.0 + _VALUE_TOL):
        raise ValueError(
            f"objective value {v!r} outside [0, 2]; the solution is infeasible"
        )
    return 1.0 - min(max(v, 0.0), 2.0) / 2.0
