"""End-to-end acceptance checks; each prints one PASS/FAIL line in the session summary."""

import json
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import optimize

from conftest import ACCEPTANCE, random_problem
from test_lfd import random_feasible_plan
from wrht.cli import RunConfig, simulate
from wrht.detector import DetectorModel, build, evaluate, risk_phi, sign_rule_errors
from wrht.distributions import EmpiricalDistribution, SupportPool, wasserstein_distance
from wrht.divergence import FAMILIES, ell, psi, pointwise_objective
from wrht.lfd import LfdProblem, SolverConfig, brute_force, lmo, objective_and_gradient, solve

E = EmpiricalDistribution.uniform
SMOOTH = ("exp", "log", "quad")


def record(number, title, ok, detail):
    ACCEPTANCE.append(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
    assert ok, detail


def test_01_two_atom_closed_form():
    worst_cf = worst_bf = worst_t = 0.0
    for theta in (0.05, 0.1, 0.25, 0.4):
        pr = LfdProblem.from_samples(E([[0.0]]), E([[1.0]]), theta, theta, "exp")
        t0 = time.perf_counter()
        sol = solve(pr)
        worst_t = max(worst_t, time.perf_counter() - t0)
        expected = 4 * np.sqrt(theta * (1 - theta))
        worst_cf = max(worst_cf, abs(sol.objective - expected))
        worst_bf = max(worst_bf, abs(sol.objective - brute_force(pr).objective))
    ok = worst_cf <= 1e-4 and worst_bf <= 1e-3 and worst_t < 1.0
    record(1, "two-atom closed form", ok,
           f"closed-form err {worst_cf:.1e}, grid err {worst_bf:.1e}, slowest {worst_t:.3f}s")


def test_02_saturation():
    worst = {f: 0.0 for f in FAMILIES}
    worst_div = 0.0
    for i in range(10):
        rng = np.random.default_rng(500 + i)
        n1, n2 = rng.integers(1, 11, size=2)
        x = rng.normal(size=(n1, 2))
        y = rng.normal(size=(n2, 2)) + [1.5, 0.0]
        w = wasserstein_distance(E(x), E(y))
        split = rng.uniform(0.2, 0.8)
        # even instances sit exactly on theta1 + theta2 = W
        scale = 1.0 if i % 2 == 0 else rng.uniform(1.0, 1.5)
        for family in FAMILIES:
            pr = LfdProblem.from_samples(E(x), E(y), split * w * scale, (1 - split) * w * scale, family)
            sol = solve(pr, SolverConfig(gap_tol=1e-8))
            worst[family] = max(worst[family], abs(sol.objective - 2.0))
            if family != "hinge":
                worst_div = max(worst_div, sol.divergence)
    ok = max(worst[f] for f in SMOOTH) <= 1e-6 and worst["hinge"] <= 1e-3 and worst_div <= 1e-6
    detail = ", ".join(f"{f} {v:.1e}" for f, v in worst.items())
    record(2, "saturation at overlapping balls", ok, f"max |obj-2|: {detail}; max div {worst_div:.1e}")


def test_03_zero_radius_identity():
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng(700 + i)
        n1, n2 = rng.integers(1, 12, size=2)
        # integer-valued points make coincident atoms common
        x = rng.integers(-2, 3, size=(n1, 2)).astype(float)
        y = rng.integers(-1, 4, size=(n2, 2)).astype(float)
        family = FAMILIES[i % 4]
        pr = LfdProblem.from_samples(E(x), E(y), 0.0, 0.0, family)
        # direct sum over distinct points of the two empiricals
        pts = np.unique(np.vstack([x, y]), axis=0)
        a = np.array([np.mean(np.all(x == p, axis=1)) for p in pts])
        b = np.array([np.mean(np.all(y == p, axis=1)) for p in pts])
        direct = float(np.sum(pointwise_objective(family, a, b)))
        worst = max(worst, abs(solve(pr).objective - direct))
    record(3, "zero-radius identity", worst <= 1e-9, f"max err {worst:.1e} over 20 instances")


def _smooth_instances():
    out = []
    for i in range(12):
        rng = np.random.default_rng(900 + i)
        family = SMOOTH[i % 3]
        pr = random_problem(rng, int(rng.integers(2, 12)), int(rng.integers(2, 12)), family,
                            float(rng.uniform(0.0, 0.5)), float(rng.uniform(0.0, 0.5)))
        out.append((pr, solve(pr)))
    return out


def test_04_attainment():
    worst = 0.0
    for pr, sol in _smooth_instances():
        phi = build(sol).phi
        risk = risk_phi(phi, phi, pr.family, weights1=sol.p1, weights2=sol.p2)
        worst = max(worst, abs(risk - sol.objective))
    record(4, "optimal detector attains the LFD value", worst <= 1e-6,
           f"max |risk - objective| {worst:.1e} over 12 smooth instances")


def test_05_saddle_point():
    worst = -np.inf
    count = 0
    for pr, sol in _smooth_instances()[:6]:
        phi = build(sol).phi
        rng = np.random.default_rng(17)
        for j in range(200):
            if j % 2:
                p1 = random_feasible_plan(pr, 1, rng).sum(0)
                p2 = random_feasible_plan(pr, 2, rng).sum(0)
            else:
                # budget-binding extreme points in random directions
                g = rng.normal(size=(2, pr.pool.size))
                p1 = lmo(g[0], 1, pr.side_costs(1), pr.theta1).column_sums
                p2 = lmo(g[1], 2, pr.side_costs(2), pr.theta2).column_sums
            worst = max(worst, risk_phi(phi, phi, pr.family, p1 / p1.sum(), p2 / p2.sum()) - sol.objective)
            count += 1
    record(5, "saddle point against random feasible pairs", worst <= 1e-4,
           f"max excess {worst:.1e} over {count} pairs (smooth families)")


def test_06_gradient():
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(31)
    step = 1e-6
    for i in range(50):
        family = SMOOTH[i % 3]
        pr = random_problem(rng, 4, 5, family, 10.0)
        x1 = random_feasible_plan(pr, 1, rng)
        x2 = random_feasible_plan(pr, 2, rng)
        _, g1, g2 = objective_and_gradient(pr, x1, x2)
        analytic, numeric = [], []
        for k, x, g in ((1, x1, g1), (2, x2, g2)):
            for l in range(x.shape[0]):
                m, m2 = rng.choice(x.shape[1], 2, replace=False)
                # shift mass within a row so the perturbed plan stays feasible
                up, dn = x.copy(), x.copy()
                up[l, m] += step
                up[l, m2] -= step
                dn[l, m] -= step
                dn[l, m2] += step
                f_up = objective_and_gradient(pr, *((up, x2) if k == 1 else (x1, up)))[0]
                f_dn = objective_and_gradient(pr, *((dn, x2) if k == 1 else (x1, dn)))[0]
                numeric.append((f_up - f_dn) / (2 * step))
                analytic.append(g[m] - g[m2])
        analytic, numeric = np.array(analytic), np.array(numeric)
        worst = max(worst, np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))
    elapsed = time.perf_counter() - t0
    record(6, "gradient vs central differences", worst <= 1e-5 and elapsed < 10,
           f"max relative err {worst:.1e} on 50 plans, {elapsed:.2f}s")


def test_07_monotonicity():
    worst = np.inf
    for i in range(5):
        rng = np.random.default_rng(1100 + i)
        base = random_problem(rng, 8, 8, FAMILIES[i % 4], 0.0)
        scale = float(base.costs.entries.mean())
        vals = [solve(base.with_thetas(f * scale, f * scale)).objective for f in np.linspace(0, 0.6, 8)]
        worst = min(worst, float(np.min(np.diff(vals))))
    record(7, "objective nondecreasing in the radius", worst >= -1e-6,
           f"smallest step {worst:.1e} over 5 instances x 8 radii")


def _psi_oracle(family, p):
    t = np.linspace(-40.0, 40.0, 8001)
    vals = p * ell(family, t) + (1 - p) * ell(family, -t)
    i = int(np.argmin(vals))
    lo, hi = t[max(i - 1, 0)], t[min(i + 1, t.size - 1)]
    res = optimize.minimize_scalar(
        lambda s: p * ell(family, s) + (1 - p) * ell(family, -s),
        bounds=(lo, hi), method="bounded", options={"xatol": 1e-12},
    )
    return min(float(res.fun), float(vals[i]))


def test_08_psi_identity():
    grid = np.linspace(0.0, 1.0, 1000)
    worst = {f: max(abs(psi(f, p) - _psi_oracle(f, p)) for p in grid) for f in FAMILIES}
    ok = max(worst.values()) <= 1e-6
    record(8, "psi matches its variational definition", ok,
           ", ".join(f"{f} {v:.1e}" for f, v in worst.items()))


def test_09_indicator_domination():
    violations = 0
    for i in range(20):
        rng = np.random.default_rng(1300 + i)
        family = FAMILIES[i % 4]
        n1, n2 = rng.integers(2, 10, size=2)
        pool = SupportPool(rng.normal(size=(n1 + n2, 2)), [1] * n1 + [2] * n2, n1, n2)
        masses = rng.random(n1 + n2)
        phi = np.sign(rng.normal(size=n1 + n2)) if family == "hinge" else rng.normal(scale=2, size=n1 + n2)
        model = DetectorModel(pool, phi, family, masses, masses)
        s1 = evaluate(model, rng.normal(size=(40, 2)))
        s2 = evaluate(model, rng.normal(size=(40, 2)) + [1.0, 0.0])
        if max(sign_rule_errors(s1, s2)) > risk_phi(s1, s2, family):
            violations += 1
    record(9, "sign-rule errors dominated by the risk", violations == 0,
           f"{violations} violations in 20 detectors")


@pytest.mark.slow
def test_10_monte_carlo():
    t0 = time.perf_counter()
    out = simulate(RunConfig(family="exp", runs=100, alpha=0.05, window_size=20,
                             pre_length=200, post_length=200, shift=2.0, dim=2))
    elapsed = time.perf_counter() - t0
    rob = out["methods"]["robust-cusum"][0]
    hot = out["methods"]["hotelling"][0]
    detected = round(rob["detection_rate"] * out["runs"])
    ok = detected >= 95 and rob["type1_rate"] <= 0.10 and elapsed < 300 and len(hot["delays"]) == 100
    record(10, "Monte Carlo robust CUSUM", ok,
           f"detected {detected}/100, false alarms {rob['type1_rate']:.2f}, "
           f"avg delay {rob['avg_delay']:.2f}; Hotelling detection {hot['detection_rate']:.2f}, "
           f"avg delay {hot['avg_delay']:.2f}; {elapsed:.0f}s")


def test_11_determinism(tmp_path):
    rng = np.random.default_rng(0)
    files = {}
    for name, arr in {
        "q1": rng.normal(size=(10, 2)),
        "q2": rng.normal(size=(10, 2)) + [2.0, 0.0],
        "pre": rng.normal(size=(50, 2)),
        "stream": np.vstack([rng.normal(size=(25, 2)), rng.normal(size=(25, 2)) + [2.0, 0.0]]),
    }.items():
        path = tmp_path / f"{name}.csv"
        np.savetxt(path, arr, delimiter=",", fmt="%.17g")
        files[name] = str(path)
    radii = ["--theta1", "0.15", "--theta2", "0.15"]
    commands = {
        "solve": ["solve", files["q1"], files["q2"], *radii],
        "calibrate": ["calibrate", files["pre"], "--window-size", "8", "--bootstrap-reps", "6"],
        "detect": ["detect", files["stream"], "--q1", files["q1"], "--q2", files["q2"], *radii,
                   "--null-data", files["pre"], "--null-reps", "40"],
        "baseline": ["baseline", files["pre"], files["stream"], "--null-reps", "40"],
        "simulate": ["simulate", "--runs", "3", "--null-reps", "20", "--pre-length", "40",
                     "--post-length", "40", *radii],
    }
    differing = []
    for name, argv in commands.items():
        runs = [
            subprocess.run([sys.executable, "-m", "wrht.cli", *argv, "--seed", "7"],
                           capture_output=True, check=True).stdout
            for _ in range(2)
        ]
        json.loads(runs[0])
        if runs[0] != runs[1]:
            differing.append(name)
    record(11, "byte-identical CLI reruns", not differing,
           f"{len(commands)} commands, differing: {differing or 'none'}")


def test_12_dimension_insensitivity():
    def best_time(d, cfg):
        rng = np.random.default_rng(0)
        pr = random_problem(rng, 30, 30, "exp", 0.1, d=d)
        times = []
        for _ in range(5):
            t0 = time.perf_counter()
            solve(pr, cfg)
            times.append(time.perf_counter() - t0)
        return min(times)

    # fixed work: Frank-Wolfe with a gap target it never reaches
    fixed = SolverConfig(method="frank-wolfe", max_iters=200, gap_tol=1e-300)
    ratios = {}
    for label, cfg in (("fixed-iteration", fixed), ("default", SolverConfig())):
        t2, t100 = best_time(2, cfg), best_time(100, cfg)
        ratios[label] = max(t2, t100) / min(t2, t100)
    ok = all(r < 2.0 for r in ratios.values())
    record(12, "solver time independent of dimension", ok,
           ", ".join(f"{k} d=2 vs d=100 ratio {v:.2f}" for k, v in ratios.items()))
