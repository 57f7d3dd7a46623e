from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vstab.errors import BadStep, OutOfDomain
from vstab.history import (HistoryFunction, constant, from_function, from_samples, linear,
                           piecewise_linear, pseudotrajectory)
from vstab.sampling import SampleSpace, spline_history

controls = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=9)


def spline(vals, theta=1.0):
    return spline_history(np.asarray(vals, dtype=float)[:, None], theta)


class TestEval:
    def test_constant(self):
        assert constant([1.0])(-0.5)[0] == 1.0

    def test_identity_ramp(self):
        assert linear(0.0, 1.0)(-0.25)[0] == pytest.approx(-0.25)

    def test_shared_breakpoint(self):
        phi = piecewise_linear([-1.0, -0.5, 0.0], [0.0, 2.0, 1.0])
        assert phi(-0.5)[0] == pytest.approx(2.0)

    def test_out_of_domain(self):
        with pytest.raises(OutOfDomain):
            constant([1.0])(0.5)

    def test_vector_eval_shape(self):
        phi = constant([1.0, 2.0])
        assert phi(np.array([-1.0, -0.5, 0.0])).shape == (3, 2)

    def test_rejects_gaps(self):
        with pytest.raises(Exception):
            HistoryFunction(np.array([-1.0, -1.0, 0.0]), np.zeros((3, 1)), np.zeros((2, 2, 1)))


class TestSupNorm:
    def test_zero(self):
        assert constant([0.0]).sup_norm() == 0.0

    def test_interior_extremum(self):
        phi = from_function(lambda s: s * (s + 1.0), 1.0, segments=1, derivative=lambda s: 2 * s + 1.0)
        assert phi.sup_norm() == pytest.approx(0.25, abs=1e-14)

    def test_endpoint(self):
        assert linear(0.0, 1.0).sup_norm() == pytest.approx(1.0)

    def test_vector_valued(self):
        phi = from_function(lambda s: np.stack([np.cos(np.pi * s), np.sin(np.pi * s)], axis=-1), 1.0, 32)
        assert phi.sup_norm() == pytest.approx(1.0, abs=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(controls)
    def test_dominates_dense_samples(self, vals):
        phi = spline(vals)
        _, dense = phi.dense_samples(64)
        assert phi.sup_norm() >= np.max(np.abs(dense)) - 1e-12


class TestPseudotrajectory:
    def test_constant_with_drift(self):
        p = pseudotrajectory(constant([1.0]), np.array([0.5]), 0.25)
        assert p(0.0)[0] == pytest.approx(1.125)
        assert p(-0.25)[0] == pytest.approx(1.0)

    def test_zero_drift_shift(self):
        phi = linear(0.0, 1.0)
        p = pseudotrajectory(phi, np.array([0.0]), 0.3)
        for tau in (-1.0, -0.6, -0.3, -0.1, 0.0):
            assert p(tau)[0] == pytest.approx(phi(min(tau + 0.3, 0.0))[0], abs=1e-12)

    def test_ramp_both_branches(self):
        p = pseudotrajectory(linear(0.0, 1.0), np.array([1.0]), 0.5)
        assert p(-0.75)[0] == pytest.approx(-0.25)
        assert p(0.0)[0] == pytest.approx(0.5)

    def test_bad_step(self):
        with pytest.raises(BadStep):
            pseudotrajectory(constant([1.0]), np.array([0.0]), 1.0)

    @settings(max_examples=40, deadline=None)
    @given(controls, st.floats(-5.0, 5.0), st.floats(1e-4, 0.9))
    def test_continuous_and_norm_bound(self, vals, drift, h):
        phi = spline(vals)
        p = pseudotrajectory(phi, np.array([drift]), h)
        assert p.continuity_defect() <= 1e-10
        assert p.sup_norm() <= phi.sup_norm() + h * abs(drift) + 1e-12


class TestRepresentation:
    @settings(max_examples=30, deadline=None)
    @given(controls)
    def test_rebuild_from_breakpoints(self, vals):
        phi = spline(vals)
        deriv = np.concatenate([phi.slopes[:, 0], phi.slopes[-1:, 1]])
        again = from_samples(phi.taus, phi.values, deriv)
        s = np.linspace(-1.0, 0.0, 101)
        np.testing.assert_allclose(again(s), phi(s), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(controls)
    def test_csv_round_trip(self, vals):
        phi = spline(vals)
        back = HistoryFunction.from_csv(phi.to_csv())
        s = np.linspace(-1.0, 0.0, 57)
        np.testing.assert_array_equal(back(s), phi(s))

    def test_dict_round_trip(self):
        phi = SampleSpace(seed=1).history(3)
        back = HistoryFunction.from_dict(phi.to_dict())
        np.testing.assert_array_equal(back.values, phi.values)

    def test_restrict_subinterval(self):
        phi = spline([0.0, 1.0, -1.0, 2.0])
        taus, vals, _ = phi.restrict(-0.7, -0.2)
        assert taus[0] == pytest.approx(-0.7) and taus[-1] == pytest.approx(-0.2)
        np.testing.assert_allclose(vals[0], phi(-0.7), atol=1e-12)
        np.testing.assert_allclose(vals[-1], phi(-0.2), atol=1e-12)

    def test_scaling(self):
        phi = spline([0.0, 1.0, -1.0])
        np.testing.assert_allclose((phi * 3.0).values, 3.0 * phi.values)
        np.testing.assert_allclose((-phi).values, -phi.values)

    def test_from_function_accuracy(self):
        phi = from_function(np.sin, 2.0, 64)
        s = np.linspace(-2.0, 0.0, 301)
        np.testing.assert_allclose(phi(s)[:, 0], np.sin(s), atol=1e-8)
