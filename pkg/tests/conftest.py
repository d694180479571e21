import numpy as np
import pytest
from scipy import optimize

from wrht.distributions import EmpiricalDistribution
from wrht.lfd import LfdProblem


# one line per acceptance criterion, shown after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


def assignment_transport_cost(x, y, norm="l2"):
    """W1 between uniform samples via an assignment problem (independent oracle).

    Each point is repeated so both sides have lcm(n, m) unit atoms.
    """
    n, m = len(x), len(y)
    size = np.lcm(n, m)
    xs = np.repeat(np.asarray(x, float), size // n, axis=0)
    ys = np.repeat(np.asarray(y, float), size // m, axis=0)
    diff = xs[:, None, :] - ys[None, :, :]
    cost = {
        "l1": np.abs(diff).sum(-1),
        "l2": np.sqrt((diff**2).sum(-1)),
        "linf": np.abs(diff).max(-1),
    }[norm]
    rows, cols = optimize.linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / size)


def random_problem(rng, n1, n2, family, frac1=0.3, frac2=None, d=2, norm="l2"):
    """Two Gaussian clouds a unit apart with radii given as fractions of the mean cost."""
    x = rng.normal(size=(n1, d))
    y = rng.normal(size=(n2, d)) + np.eye(d)[0]
    base = LfdProblem.from_samples(
        EmpiricalDistribution.uniform(x), EmpiricalDistribution.uniform(y), 0.0, 0.0, family, norm
    )
    scale = float(base.costs.entries.mean())
    frac2 = frac1 if frac2 is None else frac2
    return base.with_thetas(frac1 * scale, frac2 * scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
