from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vstab import comparison as cf
from vstab.certify import (ConditionKind, GrowthSpec, check_condition, check_growth_method, evaluate_sample,
                           falsify, growth_limit_trend)
from vstab.dynamics import linear_delay_system, zero_system
from vstab.example import alpha_example, example_system, growth_bound
from vstab.history import from_samples
from vstab.lkf import driver_derivative, quad_exp
from vstab.sampling import SampleSpace


def example_space(count=40, seed=0):
    return SampleSpace(seed=seed, history_amplitude=3.0, input_amplitude=2.0, sample_count=count)


def step_history():
    # phi(-1) = 0 and phi(0) = 1
    return from_samples(np.array([-1.0, 0.0]), np.array([[0.0], [1.0]]), np.array([[1.0], [1.0]]))


class TestCheckCondition:
    def test_example_ugs(self):
        rep = check_condition("ugs", example_system(), quad_exp(0.0, 1.0), None, cf.zero(), example_space())
        assert rep.passed and rep.samples_tested == 40 and rep.worst_margin <= 1e-7

    def test_example_impl_pointwise(self):
        rep = check_condition(ConditionKind.IMPL_POINTWISE, example_system(), quad_exp(0.0, 1.0),
                              alpha_example(), cf.linear(2.0), example_space())
        assert rep.passed and 0 < rep.details["gated"] <= 40

    def test_frozen_flow_diss_pointwise_fails(self):
        rep = check_condition("diss-pointwise", zero_system(), quad_exp(0.0, 1.0), cf.identity(),
                              cf.identity(), example_space())
        assert not rep.passed and rep.violations
        v = rep.violations[0]
        assert v.margin > 0 and v.phi_csv and v.to_dict()["margin"] == v.margin

    def test_frozen_flow_hand_value(self):
        out = evaluate_sample("diss-pointwise", zero_system(), quad_exp(0.0, 1.0), cf.identity(),
                              cf.identity(), step_history(), [0.0])
        assert out.lhs == pytest.approx(1.0, abs=1e-6) and out.rhs == -1.0

    def test_report_json_schema(self):
        rep = check_condition("ugs", zero_system(), quad_exp(0.0, 1.0), None, None, example_space(10))
        d = rep.to_dict()
        assert {"condition_id", "pass", "samples", "violations", "worst_margin"} <= set(d)
        assert d["pass"] == (not d["violations"])

    def test_deterministic(self):
        args = ("impl-pointwise", example_system(), quad_exp(0.0, 1.0), alpha_example(), cf.linear(2.0))
        a = check_condition(*args, example_space(15, seed=9)).to_json()
        b = check_condition(*args, example_space(15, seed=9)).to_json()
        assert a == b

    @settings(max_examples=5, deadline=None)
    @given(st.integers(0, 1000))
    def test_monotone_gating(self, seed):
        sys, V, space = example_system(), quad_exp(0.0, 1.0), example_space(20, seed)
        for kind in ("impl-pointwise", "impl-lkfwise"):
            small = check_condition(kind, sys, V, alpha_example(), cf.linear(1.0), space)
            large = check_condition(kind, sys, V, alpha_example(), cf.linear(2.0), space)
            assert set(large.details["gated_indices"]) <= set(small.details["gated_indices"])

    def test_linear_decay_dissipative(self):
        # x' = -x: D+V = -x(0)^2 - x(-1)^2 <= 0 for QuadExp(0, 1)
        sys = linear_delay_system(-1.0, 0.0)
        rep = check_condition("diss-lkfwise", sys, quad_exp(0.0, 1.0), cf.zero(), cf.zero(), example_space(20))
        assert rep.passed


class TestFalsify:
    def test_budget_floor(self):
        with pytest.raises(ValueError):
            falsify("ugs", zero_system(), quad_exp(0.0, 1.0), None, None, budget=50)

    def test_local_decay_witness(self):
        w = falsify("local-decay", example_system(), quad_exp(0.0, 2.0), None, None, budget=200)
        assert w is not None and w.lhs > 0 and w.rhs == 0.0

    def test_impl_lkfwise_witness(self):
        w = falsify("impl-lkfwise", example_system(), quad_exp(0.0, 1.0), cf.identity(), cf.identity(),
                    budget=400)
        assert w is not None and w.margin > 0
        # the witness reproduces under a fresh evaluation
        again = evaluate_sample("impl-lkfwise", example_system(), quad_exp(0.0, 1.0), cf.identity(),
                                cf.identity(), w.phi, w.u)
        assert again.margin == pytest.approx(w.margin, abs=1e-12)

    def test_frozen_flow_ugs_witness(self):
        w = falsify("ugs", zero_system(), quad_exp(0.0, 1.0), None, cf.identity(), budget=200)
        assert w is not None and w.lhs > 0 and w.evaluations <= 200
        assert "phi_csv" in w.to_dict()

    def test_no_witness_for_true_condition(self):
        assert falsify("ugs", example_system(), quad_exp(0.0, 1.0), None, cf.zero(), budget=100) is None


class TestGrowthMethod:
    def test_limit_trend_identity(self):
        status, data = growth_limit_trend(cf.identity(), cf.identity(), 1.0)
        assert status == "pass"
        assert data["ratio"][-1] == pytest.approx(math.exp(-1.0))

    def test_limit_trend_vanishing(self):
        decay = cf.ComparisonFn(lambda s: s / (1.0 + s ** 3), cf.Kind.PD, 1e6)
        status, _ = growth_limit_trend(decay, cf.identity(), 1.0)
        assert status == "fail"

    def test_example_fails(self):
        gs = GrowthSpec.quadratic(alpha_example(), cf.zero(), cf.linear(2.0 * (2.0 + math.exp(-1) / 4)))
        rep = check_growth_method(example_system(), quad_exp(0.0, 1.0), gs, example_space(10))
        assert not rep.passed and rep.details["q_spot_check"]

    def test_example_ray_derivative_vanishes(self):
        sys, V = example_system(), quad_exp(0.0, 1.0)
        phi = step_history()
        vals = [abs(driver_derivative(V, phi * r, sys.f(phi * r, [0.0])).limit + r ** 2)
                for r in (10.0, 100.0)]
        # D+V(r phi) + r^2 -> 0: the psi term dies and only -(r phi(0) - r phi(-1))^2 remains
        assert vals[1] <= vals[0] + 1e-6

    def test_zero_gain_pure_decay(self):
        sys = linear_delay_system(-1.0, 0.0)
        gs = GrowthSpec.quadratic(cf.linear(0.5), cf.zero(), cf.linear(2.0))
        rep = check_growth_method(sys, quad_exp(0.0, 1.0), gs, example_space(10).with_(input_amplitude=0.0))
        assert rep.details["subchecks"]["a"] == "pass"
        assert rep.details["subchecks"]["b"] == "pass"

    def test_growth_bound_matches_catalog(self):
        assert growth_bound()(1.0) == pytest.approx(2.0 + math.exp(-1) / 4)
