from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vstab import comparison as cf
from vstab.dynamics import InputSignal, integrate, linear_delay_system, zero_system
from vstab.errors import DelayMismatch, DivergentIntegrand
from vstab.example import example_system
from vstab.history import constant, from_function
from vstab.lkf import (build_scaling, dini_derivative, dissipative_to_implication, driver_derivative,
                       eval_lkf, exponential_trick, extrapolate, lkf_along, quad_exp, sandwich_check,
                       scale_lkf, squared_norm, sup_norm_lkf)
from vstab.sampling import SampleSpace, bump_history


def exp_history():
    return from_function(np.exp, 1.0, 64, derivative=np.exp)


class TestEvaluation:
    def test_zero_history(self):
        assert eval_lkf(quad_exp(1.3, 0.7), constant([0.0])) == 0.0

    def test_constant_one(self):
        assert eval_lkf(quad_exp(0.0, 1.0), constant([1.0])) == pytest.approx(2.0, abs=1e-14)

    def test_exponential_history(self):
        expected = 2.0 + (1.0 - math.exp(-3.0)) / 3.0
        assert eval_lkf(quad_exp(1.0, 2.0), exp_history()) == pytest.approx(expected, abs=1e-8)
        assert expected == pytest.approx(2.316738, abs=1e-6)

    def test_trick_matches_quadexp(self):
        W = exponential_trick(squared_norm, squared_norm, 1.0, 2.0)
        assert eval_lkf(W, exp_history()) == pytest.approx(eval_lkf(quad_exp(1.0, 2.0), exp_history()),
                                                           abs=1e-12)

    def test_trick_without_integral(self):
        W = exponential_trick(squared_norm, lambda x: np.zeros(len(x)), 5.0, 3.0)
        phi = SampleSpace(seed=1).history(0)
        assert eval_lkf(W, phi) == pytest.approx(3.0 * float(phi.values[-1, 0]) ** 2)

    def test_delay_mismatch(self):
        with pytest.raises(DelayMismatch):
            eval_lkf(quad_exp(0.0, 1.0, theta=2.0), constant([1.0]))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 3.0), st.floats(0.1, 4.0))
    def test_trapezoid_oracle(self, seed, c, kappa):
        phi = SampleSpace(seed=seed, history_amplitude=3.0).history(0)
        s = np.linspace(-1.0, 0.0, 100_001)
        y = np.exp(c * s) * phi(s)[:, 0] ** 2
        ref = kappa * phi.values[-1, 0] ** 2 + np.trapezoid(y, s)
        assert eval_lkf(quad_exp(c, kappa), phi) == pytest.approx(ref, abs=1e-8)

    def test_along_trajectory_matches_windows(self):
        sys = example_system()
        x0 = SampleSpace(seed=3).history(2)
        traj = integrate(sys, x0, InputSignal.constant([0.5]), 3.0, 0.05)
        V = quad_exp(0.7, 1.5)
        ts, vs = lkf_along(V, traj, [0.0, 0.33, 1.0, 2.71, 3.0])
        from vstab.dynamics import window
        for t, v in zip(ts, vs):
            assert v == pytest.approx(eval_lkf(V, window(traj, t)), abs=1e-10)


class TestSandwich:
    def test_quadexp_pointwise(self):
        rep = sandwich_check(quad_exp(0.0, 1.0), SampleSpace(seed=2, history_amplitude=3.0, sample_count=50))
        assert rep.passed and rep.details["regime"] == "pointwise"

    def test_quadexp_not_coercive(self):
        V = quad_exp(0.0, 1.0)
        spike = bump_history(-0.5, 0.01, np.array([1.0]))
        assert eval_lkf(V, spike) < 0.1 * spike.sup_norm() ** 2
        rep = sandwich_check(V, SampleSpace(seed=2, history_generator="spikes", sample_count=30), coercive=True)
        assert not rep.passed

    def test_sup_norm_functional(self):
        rep = sandwich_check(sup_norm_lkf(), SampleSpace(seed=4, sample_count=30), coercive=True)
        assert rep.passed


class TestDerivatives:
    def test_constant_zero_drift(self):
        est = driver_derivative(quad_exp(0.0, 1.0), constant([1.0]), np.array([0.0]))
        assert est.limit == pytest.approx(0.0, abs=1e-9)

    def test_example_at_constant_one(self):
        sys = example_system()
        phi = constant([1.0])
        est = driver_derivative(quad_exp(0.0, 1.0), phi, sys.f(phi, [0.0]))
        assert est.limit == pytest.approx(-2 * math.exp(-1) / 4, abs=1e-6)

    def test_zero_history(self):
        est = driver_derivative(quad_exp(0.4, 2.0), constant([0.0]), np.array([0.0]))
        assert est.limit == 0.0

    def test_dini_frozen_flow(self):
        est = dini_derivative(zero_system(), quad_exp(0.0, 1.0), constant([2.0]), 0.0)
        assert est.limit == pytest.approx(0.0, abs=1e-9)

    def test_dini_linear_delay(self):
        est = dini_derivative(linear_delay_system(), quad_exp(0.0, 1.0), constant([1.0]), 0.0)
        assert est.limit == pytest.approx(-2.0, abs=1e-5)

    def test_extrapolation_of_linear_error(self):
        hs = [1e-2, 1e-3, 1e-4]
        est = extrapolate(hs, [3.0 + 5 * h for h in hs])
        assert est.limit == pytest.approx(3.0, abs=1e-12) and est.converged

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-1.0, 1.0))
    def test_dini_matches_driver(self, seed, u):
        sys = example_system()
        V = quad_exp(0.5, 1.0)
        phi = SampleSpace(seed=seed, history_amplitude=2.0).history(0)
        hs = (1e-2, 1e-3, 1e-4)
        a = driver_derivative(V, phi, sys.f(phi, [u]), hs)
        b = dini_derivative(sys, V, phi, u, hs)
        assert abs(a.limit - b.limit) <= max(1e-3, 10 * (a.tol + b.tol))


class TestTransforms:
    def test_scaling_exponential(self):
        xi = build_scaling(cf.exp_decay(1.0), cf.identity())
        assert xi(1.0) == pytest.approx(math.e - 1.0, abs=1e-8)
        assert xi(0.0) == 0.0
        xi.certify(n=500)

    def test_scaling_constant(self):
        one = cf.ComparisonFn(lambda s: np.ones_like(s), cf.Kind.L, 10.0)
        xi = build_scaling(one, cf.identity(), domain_cap=10.0)
        assert xi(3.0) == pytest.approx(3.0, abs=1e-8)

    def test_scaling_rational(self):
        sigma = cf.ComparisonFn(lambda s: 1.0 / (1.0 + s), cf.Kind.L, 100.0)
        xi = build_scaling(sigma, cf.identity())
        assert xi(2.0) == pytest.approx(4.0, abs=1e-8)

    def test_scaling_divergent(self):
        sigma = cf.ComparisonFn(lambda s: np.where(s < 1.0, 1.0, 0.0), cf.Kind.L, 10.0)
        with pytest.raises(DivergentIntegrand):
            build_scaling(sigma, cf.identity(), domain_cap=10.0)

    def test_scale_lkf(self):
        V = quad_exp(0.0, 1.0)
        W = scale_lkf(V, cf.identity())
        phi = SampleSpace(seed=5).history(0)
        assert eval_lkf(W, phi) == pytest.approx(eval_lkf(V, phi))
        assert eval_lkf(scale_lkf(V, cf.power(2.0)), constant([1.0])) == pytest.approx(4.0)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_chain_rule(self, seed):
        sys = example_system()
        V = quad_exp(0.0, 1.0)
        W = scale_lkf(V, cf.power(2.0))
        phi = SampleSpace(seed=seed, history_amplitude=2.0).history(0)
        drift = sys.f(phi, [0.3])
        hs = (1e-2, 1e-3, 1e-4, 1e-5)
        dv = driver_derivative(V, phi, drift, hs)
        dw = driver_derivative(W, phi, drift, hs)
        expected = 2.0 * eval_lkf(V, phi) * dv.limit
        assert dw.limit == pytest.approx(expected, abs=1e-4 * max(1.0, abs(expected)))
        if abs(dv.limit) > 1e-6:
            assert np.sign(dw.limit) == np.sign(dv.limit)

    def test_dissipative_to_implication(self):
        chi, alpha = dissipative_to_implication(cf.identity(), cf.identity())
        s = np.linspace(0, 10, 21)
        np.testing.assert_array_equal(chi(s), 2 * s)
        np.testing.assert_array_equal(alpha(s), s / 2)

    def test_dissipative_to_implication_square(self):
        chi, _ = dissipative_to_implication(cf.power(2.0), cf.identity())
        assert chi(3.0) == pytest.approx(math.sqrt(6.0))

    def test_dissipative_to_implication_zero_gain(self):
        chi, _ = dissipative_to_implication(cf.identity(), cf.zero())
        assert chi.is_zero
