from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vstab.errors import ConfigError
from vstab.reports import CheckReport, Violation, dumps
from vstab.sampling import GENERATORS, SampleSpace, bump_history


class TestReports:
    def test_pass_iff_no_violations(self):
        rep = CheckReport("c")
        rep.record(-1.0)
        assert rep.finalize().passed and rep.to_dict()["status"] == "pass"
        bad = CheckReport("c")
        bad.add(Violation(3, "", [0.0], 1.0, 0.5))
        assert not bad.finalize().passed and bad.violations[0].margin == 0.5

    def test_violations_sorted_by_index(self):
        rep = CheckReport("c")
        for i in (5, 1, 3):
            rep.add(Violation(i, "", [], 1.0, 0.0))
        assert [v.index for v in rep.finalize().violations] == [1, 3, 5]

    def test_worst_margin(self):
        rep = CheckReport("c")
        for m in (-2.0, 0.5, -0.1):
            rep.record(m)
        assert rep.worst_margin == 0.5 and rep.samples_tested == 3

    def test_dumps_handles_numpy_and_nonfinite(self):
        text = dumps({"b": np.float64(1.5), "a": [np.int64(2), np.bool_(True)], "c": math.inf,
                      "d": math.nan, "e": np.arange(2)})
        assert json.loads(text) == {"a": [2, True], "b": 1.5, "c": "inf", "d": "nan", "e": [0, 1]}
        assert text.index('"a"') < text.index('"b"')

    def test_inconclusive_is_not_pass(self):
        rep = CheckReport("c", status="inconclusive")
        assert not rep.finalize().passed


class TestSampling:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 63 - 1), st.sampled_from(GENERATORS), st.floats(0.1, 10.0),
           st.integers(1, 3), st.integers(0, 50))
    def test_amplitude_bound(self, seed, gen, R, n, index):
        space = SampleSpace(seed=seed, history_amplitude=R, history_generator=gen, n=n)
        assert space.history(index).sup_norm() <= R * (1 + 1e-9)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 63 - 1), st.sampled_from(GENERATORS), st.integers(0, 50))
    def test_pure_function_of_seed_and_index(self, seed, gen, index):
        a = SampleSpace(seed=seed, history_generator=gen).sample(index)
        b = SampleSpace(seed=seed, history_generator=gen, sample_count=7).sample(index)
        np.testing.assert_array_equal(a[0].values, b[0].values)
        np.testing.assert_array_equal(a[1], b[1])

    def test_inputs_bounded(self):
        space = SampleSpace(seed=1, input_amplitude=0.3, m=2)
        for i in range(20):
            assert np.linalg.norm(space.input_value(i)) <= 0.3
            assert space.input_signal(i, 5.0).norm() <= 0.3

    def test_iteration_count(self):
        assert len(list(SampleSpace(sample_count=4))) == 4

    def test_rejects_bad_settings(self):
        with pytest.raises(ConfigError):
            SampleSpace(history_generator="nope")
        with pytest.raises(ConfigError):
            SampleSpace(sample_count=0)

    def test_bump_history(self):
        phi = bump_history(-0.5, 0.1, np.array([2.0]))
        assert phi(-0.5)[0] == pytest.approx(2.0)
        assert phi(-0.3)[0] == 0.0 and phi.sup_norm() == pytest.approx(2.0)

    def test_to_dict(self):
        d = SampleSpace(seed=4).to_dict()
        assert d["seed"] == 4 and d["history_generator"] == "random-cubic-spline"
