from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vstab import comparison as cf
from vstab.comparison import ComparisonFn, Kind
from vstab.errors import ComparisonClassError, KindMismatch, NoBracket, NonMonotoneTimes


def cubic_plus():
    return ComparisonFn(lambda s: s + s ** 3, Kind.KINF, 1e3, "s+s^3")


class TestCertify:
    def test_catalog_members_certify(self):
        for f in (cf.identity(), cf.linear(3.0), cf.power(2.0), cf.power(0.5, 2.0), cf.zero()):
            assert f.certify() is f

    def test_exp_decay_is_class_l(self):
        cf.exp_decay(1.0).certify()

    def test_nonzero_at_origin_rejected(self):
        with pytest.raises(ComparisonClassError):
            ComparisonFn(lambda s: s + 1.0, Kind.K, 10.0).certify()

    def test_non_monotone_rejected(self):
        with pytest.raises(ComparisonClassError):
            ComparisonFn(lambda s: np.sin(s), Kind.KINF, 10.0).certify()

    def test_pd_may_decrease(self):
        ComparisonFn(lambda s: s * np.exp(-s), Kind.PD, 50.0).certify()

    def test_pd_vanishing_rejected(self):
        with pytest.raises(ComparisonClassError):
            ComparisonFn(lambda s: np.maximum(s - 1.0, 0.0), Kind.PD, 5.0).certify()

    def test_class_l_needs_decay(self):
        with pytest.raises(ComparisonClassError):
            ComparisonFn(lambda s: 1.0 + 1.0 / (1.0 + s), Kind.L, 10.0).certify()

    def test_scalar_call_returns_float(self):
        assert isinstance(cf.identity()(2), float)


class TestInvert:
    def test_square(self):
        assert cf.invert(cf.power(2.0), 4.0) == pytest.approx(2.0, abs=1e-12)

    def test_identity(self):
        assert cf.invert(cf.identity(), 7.3) == pytest.approx(7.3, abs=1e-12)

    def test_cubic_by_root_finding(self):
        assert cf.invert(cubic_plus(), 10.0) == pytest.approx(2.0, abs=1e-10)

    def test_rejects_class_l(self):
        with pytest.raises(KindMismatch):
            cf.invert(cf.exp_decay(), 0.5)

    def test_below_range(self):
        with pytest.raises(NoBracket):
            cf.invert(cf.identity(), -1.0)

    def test_class_k_saturation(self):
        sat = ComparisonFn(lambda s: s / (1.0 + s), Kind.K, 100.0)
        with pytest.raises(NoBracket):
            cf.invert(sat, 2.0)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.0, 1e4))
    def test_right_inverse(self, y):
        for f in (cubic_plus(), cf.power(3.0, 2.0), cf.linear(0.25)):
            x = cf.invert(f, y)
            assert float(f(x)) == pytest.approx(y, rel=1e-9, abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 400.0), st.floats(0.0, 400.0))
    def test_weak_triangle_inequality(self, a, b):
        psi = cubic_plus()
        lhs = cf.invert(psi, a + b)
        rhs = cf.invert(psi, 2 * a) + cf.invert(psi, 2 * b)
        assert lhs <= rhs + 1e-9


class TestAlgebra:
    def test_compose(self):
        assert cf.compose(cf.linear(2.0), cf.power(2.0))(3.0) == pytest.approx(18.0)

    def test_compose_identity(self):
        g = cf.power(1.5, 2.0)
        s = np.linspace(0, 10, 11)
        np.testing.assert_allclose(cf.compose(cf.identity(), g)(s), g(s))

    def test_compose_root_of_fourth_power(self):
        assert cf.compose(cf.power(0.5), cf.power(4.0))(2.0) == pytest.approx(4.0)

    def test_compose_propagates_zero(self):
        h = cf.compose(cf.linear(2.0), cf.zero())
        assert h.is_zero and h(5.0) == 0.0

    def test_kind_of_composition(self):
        assert cf.compose(cf.identity(), cf.exp_decay()).kind is Kind.L

    def test_scaled_and_add(self):
        f = 2.0 * cf.identity() + cf.power(2.0)
        assert f(3.0) == pytest.approx(15.0)

    def test_pointwise_max(self):
        f = cf.pointwise_max(cf.identity(), cf.power(2.0))
        assert f(0.5) == pytest.approx(0.5) and f(3.0) == pytest.approx(9.0)

    def test_inverse_function(self):
        g = cf.inverse(cf.power(2.0))
        assert g(9.0) == pytest.approx(3.0)

    def test_tabulated_extends_linearly(self):
        f = cf.tabulated([0.0, 1.0, 2.0], [0.0, 1.0, 4.0])
        assert f(1.0) == pytest.approx(1.0)
        assert f(3.0) > f(2.0)
        f.certify(n=2000)

    def test_from_spec(self):
        assert cf.from_spec({"name": "power", "p": 2, "k": 3})(2.0) == pytest.approx(12.0)
        assert cf.from_spec("identity")(4.0) == 4.0
        with pytest.raises(KeyError):
            cf.from_spec("nope")


class TestKL:
    def beta(self):
        return cf.kl_from_decay_times(cf.identity(), lambda r: [float(n) for n in range(11)])

    def test_value_at_zero_time(self):
        assert self.beta()(1.0, 0.0) == pytest.approx(2.0, abs=1e-12)

    def test_knot_values(self):
        b = self.beta()
        for n in range(1, 11):
            assert b(1.0, float(n)) <= 2.0 ** -(n - 1) * (1 + 1e-12)

    def test_zero_magnitude(self):
        t = np.linspace(0, 50, 11)
        np.testing.assert_array_equal(self.beta()(0.0, t), 0.0)

    def test_sampled_kl_invariants(self):
        self.beta().certify(np.linspace(0, 5, 21), np.linspace(0, 30, 31))

    def test_rejects_non_increasing_times(self):
        b = cf.kl_from_decay_times(cf.identity(), lambda r: [0.0, 2.0, 1.0])
        with pytest.raises(NonMonotoneTimes):
            b(1.0, 0.5)

    def test_mapping_lookup(self):
        table = {1.0: [0.0, 1.0, 2.0], 2.0: [0.0, 3.0, 6.0]}
        b = cf.kl_from_decay_times(cf.identity(), table, r_grid=[1.0, 2.0])
        assert b(2.0, 0.0) == pytest.approx(4.0)
        assert b(5.0, 0.0) == pytest.approx(10.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 100.0), st.floats(0.0, 100.0), st.floats(0.0, 50.0), st.floats(0.0, 50.0))
    def test_monotone_in_both_arguments(self, r1, r2, t1, t2):
        b = self.beta()
        (ra, rb), (ta, tb) = sorted((r1, r2)), sorted((t1, t2))
        assert b(ra, ta) <= b(rb, ta) * (1 + 1e-12) + 1e-300
        assert b(ra, tb) <= b(ra, ta) * (1 + 1e-12) + 1e-300


def test_power_exact_inverse_is_used():
    f = cf.power(2.0, 4.0)
    assert cf.invert(f, 16.0) == pytest.approx(2.0, abs=1e-15)
    assert math.isclose(float(cf.inverse(f)(4.0)), 1.0)
