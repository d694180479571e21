import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from wrht.divergence import (
    CLAMP_CAP,
    FAMILIES,
    PsiFamily,
    detector_value,
    divergence_of_value,
    ell,
    get_family,
    pointwise_grad,
    pointwise_objective,
    psi,
    psi_smoothed,
    smoothed_objective,
)

SMOOTH = ("exp", "log", "quad")


def psi_by_grid(family, p):
    """min_t [p ell(t) + (1-p) ell(-t)] by dense grid search plus local refinement."""
    t = np.linspace(-40.0, 40.0, 80001)
    vals = p * ell(family, t) + (1 - p) * ell(family, -t)
    i = int(np.argmin(vals))
    fine = np.linspace(t[max(i - 1, 0)], t[min(i + 1, t.size - 1)], 20001)
    return float(np.min(p * ell(family, fine) + (1 - p) * ell(family, -fine)))


class TestFamilies:
    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown family"):
            get_family("cubic")

    def test_case_insensitive(self):
        assert get_family("EXP").kind == "exp"

    def test_bad_smoothing(self):
        with pytest.raises(ValueError):
            PsiFamily("hinge", smoothing_mu=0.0)

    @pytest.mark.parametrize(
        "family, t, expected", [("exp", 0.0, 1.0), ("hinge", -2.0, 0.0), ("quad", 1.0, 4.0)]
    )
    def test_ell_values(self, family, t, expected):
        assert ell(family, t) == pytest.approx(expected)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_ell_at_zero_is_one(self, family):
        assert ell(family, 0.0) == pytest.approx(1.0)


class TestPsi:
    @pytest.mark.parametrize(
        "family, p, expected",
        [("exp", 0.5, 1.0), ("hinge", 0.3, 0.6), ("quad", 0.25, 0.75), ("log", 0.5, 1.0)],
    )
    def test_values(self, family, p, expected):
        assert psi(family, p) == pytest.approx(expected)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_endpoints(self, family):
        assert psi(family, 0.0) == 0.0
        assert psi(family, 1.0) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("p", [-0.1, 1.1, np.nan])
    def test_domain(self, p):
        with pytest.raises(ValueError, match="defined on"):
            psi("exp", p)

    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("p", [0.01, 0.1, 0.37, 0.5, 0.8, 0.99])
    def test_matches_variational_definition(self, family, p):
        assert psi(family, p) == pytest.approx(psi_by_grid(family, p), abs=1e-6)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_symmetric_and_concave(self, family):
        p = np.linspace(0, 1, 201)
        v = psi(family, p)
        np.testing.assert_allclose(v, v[::-1], atol=1e-12)
        assert np.all(np.diff(v, 2) <= 1e-12)

    @pytest.mark.parametrize("mu", [10.0, 200.0, 1e4])
    def test_smoothing_error_bound(self, mu):
        p = np.linspace(0, 1, 1001)
        gap = psi("hinge", p) - psi_smoothed(p, mu)
        assert np.all(gap >= 0)
        assert gap.max() <= 2 * np.log(2) / mu + 1e-12


class TestPointwiseObjective:
    @pytest.mark.parametrize(
        "family, a, b, expected", [("exp", 1, 1, 2.0), ("quad", 1, 3, 3.0), ("hinge", 1, 3, 2.0)]
    )
    def test_values(self, family, a, b, expected):
        assert pointwise_objective(family, a, b) == pytest.approx(expected)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_one_sided_is_zero(self, family):
        assert pointwise_objective(family, 0.7, 0.0) == 0.0
        assert pointwise_objective(family, 0.0, 0.0) == 0.0

    def test_negative(self):
        with pytest.raises(ValueError, match="nonnegative"):
            pointwise_objective("exp", -1.0, 1.0)

    @pytest.mark.parametrize("family", FAMILIES)
    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(1e-6, 10), b=st.floats(1e-6, 10))
    def test_matches_psi_form(self, family, a, b):
        expected = (a + b) * psi(family, a / (a + b))
        assert pointwise_objective(family, a, b) == pytest.approx(expected, rel=1e-9, abs=1e-12)

    @pytest.mark.parametrize("family", FAMILIES)
    @settings(max_examples=30, deadline=None)
    @given(a=st.floats(1e-3, 10), b=st.floats(1e-3, 10), s=st.floats(1e-2, 100))
    def test_positively_homogeneous(self, family, a, b, s):
        assert pointwise_objective(family, s * a, s * b) == pytest.approx(
            s * pointwise_objective(family, a, b), rel=1e-9
        )

    @pytest.mark.parametrize("family", SMOOTH)
    def test_smoothed_equals_exact_for_smooth(self, family):
        assert smoothed_objective(family, 0.3, 0.4) == pointwise_objective(family, 0.3, 0.4)

    def test_smoothed_hinge_below_exact(self):
        a = np.linspace(0.01, 1, 50)
        assert np.all(smoothed_objective("hinge", a, 0.5) <= pointwise_objective("hinge", a, 0.5) + 1e-12)


class TestGradient:
    def test_exp_example(self):
        ga, gb = pointwise_grad("exp", 1.0, 4.0)
        assert ga == pytest.approx(2.0)
        assert gb == pytest.approx(0.5)

    def test_hinge_sharp_limit(self):
        ga, gb = pointwise_grad(PsiFamily("hinge", smoothing_mu=1e6), 1.0, 3.0)
        assert (ga, gb) == pytest.approx((2.0, 0.0), abs=1e-9)

    def test_zero_mass_rejected(self):
        with pytest.raises(ValueError, match="a \\+ b > 0"):
            pointwise_grad("exp", 0.0, 0.0)

    @pytest.mark.parametrize("family", list(SMOOTH) + ["hinge"])
    def test_finite_differences(self, family, rng):
        f = smoothed_objective
        for a, b in rng.uniform(0.05, 2.0, size=(25, 2)):
            ga, gb = pointwise_grad(family, a, b)
            eps = 1e-6
            fa = (f(family, a + eps, b) - f(family, a - eps, b)) / (2 * eps)
            fb = (f(family, a, b + eps) - f(family, a, b - eps)) / (2 * eps)
            assert ga == pytest.approx(fa, rel=1e-6, abs=1e-8)
            assert gb == pytest.approx(fb, rel=1e-6, abs=1e-8)

    @pytest.mark.parametrize("family", list(SMOOTH) + ["hinge"])
    def test_euler_identity(self, family, rng):
        # 1-homogeneity: a*ga + b*gb = h
        a, b = rng.uniform(0.1, 2.0, size=(2, 20))
        ga, gb = pointwise_grad(family, a, b)
        np.testing.assert_allclose(a * ga + b * gb, smoothed_objective(family, a, b), rtol=1e-9)


class TestDetectorValue:
    @pytest.mark.parametrize(
        "family, p1, p2, expected",
        [
            ("exp", 4.0, 1.0, np.log(2)),
            ("exp", 0.4, 0.1, np.log(2)),
            ("log", 4.0, 1.0, np.log(4)),
            ("hinge", 2.0, 5.0, -1.0),
            ("quad", 1.0, 1.0, 0.0),
            ("quad", 3.0, 1.0, 0.5),
        ],
    )
    def test_values(self, family, p1, p2, expected):
        assert detector_value(family, p1, p2) == pytest.approx(expected)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_clamping_and_empty(self, family):
        assert detector_value(family, 0.0, 0.0) == 0.0
        assert -CLAMP_CAP <= detector_value(family, 0.0, 1.0) < 0
        assert 0 < detector_value(family, 1.0, 0.0) <= CLAMP_CAP

    @pytest.mark.parametrize("family", FAMILIES)
    def test_antisymmetric(self, family, rng):
        a, b = rng.random((2, 30))
        np.testing.assert_allclose(detector_value(family, a, b), -detector_value(family, b, a))

    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("a, b", [(0.2, 0.5), (0.7, 0.1), (0.3, 0.3)])
    def test_attains_pointwise_minimum(self, family, a, b):
        # a ell(-phi) + b ell(phi) is minimised by the detector value
        phi = detector_value(family, a, b)
        risk = a * ell(family, -phi) + b * ell(family, phi)
        assert risk == pytest.approx(pointwise_objective(family, a, b), abs=1e-9)


class TestDivergence:
    @pytest.mark.parametrize(
        "value, expected", [(2.0, 0.0), (0.0, 1.0), (np.sqrt(3), 1 - np.sqrt(3) / 2)]
    )
    def test_values(self, value, expected):
        assert divergence_of_value("exp", value) == pytest.approx(expected)

    @pytest.mark.parametrize("value", [-0.01, 2.01])
    def test_out_of_range(self, value):
        with pytest.raises(ValueError, match="outside"):
            divergence_of_value("exp", value)


class TestInvariants:
    @pytest.mark.parametrize("family", FAMILIES)
    @settings(max_examples=40, deadline=None)
    @given(
        x=st.tuples(st.floats(0, 5), st.floats(0, 5)),
        y=st.tuples(st.floats(0, 5), st.floats(0, 5)),
    )
    def test_concave(self, family, x, y):
        mid = pointwise_objective(family, (x[0] + y[0]) / 2, (x[1] + y[1]) / 2)
        avg = (pointwise_objective(family, *x) + pointwise_objective(family, *y)) / 2
        assert mid >= avg - 1e-12

    @pytest.mark.parametrize("family", FAMILIES)
    @settings(max_examples=40, deadline=None)
    @given(a=st.floats(1e-3, 5), b=st.floats(1e-3, 5))
    def test_symmetric(self, family, a, b):
        assert pointwise_objective(family, a, b) == pytest.approx(
            pointwise_objective(family, b, a), rel=1e-12
        )

    @pytest.mark.parametrize("family", FAMILIES)
    @settings(max_examples=40, deadline=None)
    @given(a=st.floats(1e-3, 5), b=st.floats(1e-3, 5), s=st.floats(1e-3, 1e3))
    def test_decision_scale_invariant(self, family, a, b, s):
        # one-ulp ties may round either way
        assume(abs(a - b) > 1e-9 * max(a, b) or a == b)
        assert np.sign(detector_value(family, s * a, s * b)) == np.sign(detector_value(family, a, b))

    @pytest.mark.parametrize("family", ["exp", "log", "quad"])
    @pytest.mark.parametrize("r", [0.1, 0.3, 0.5, 0.77, 0.9])
    def test_is_pointwise_minimiser(self, family, r):
        t = np.linspace(-10, 10, 200001)
        best = t[np.argmin(r * ell(family, -t) + (1 - r) * ell(family, t))]
        assert detector_value(family, r, 1 - r) == pytest.approx(best, abs=1e-3)
