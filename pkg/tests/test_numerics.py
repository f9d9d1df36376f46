import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tkit.numerics import (
    LOG_ZERO,
    SeededRng,
    log_softmax,
    log_sum_exp,
    sample_without_replacement,
    softmax,
)


class TestLogSumExp:
    def test_single_element(self):
        assert log_sum_exp([3.7]) == pytest.approx(3.7, abs=0)

    def test_two_equal_elements(self):
        x = -1.25
        assert log_sum_exp([x, x]) == pytest.approx(x + math.log(2), rel=1e-15)

    def test_matches_naive_summation(self):
        # Naive log(sum(exp(.))) is a valid oracle for moderate inputs.
        rng = np.random.default_rng(7)
        for _ in range(100):
            v = rng.uniform(-30, 30, size=8)
            naive = math.log(np.sum(np.exp(v)))
            assert log_sum_exp(v) == pytest.approx(naive, rel=1e-12)

    def test_log_zero_is_absorbing(self):
        assert log_sum_exp([LOG_ZERO, 2.0]) == pytest.approx(2.0, abs=0)
        assert log_sum_exp([LOG_ZERO, LOG_ZERO]) == LOG_ZERO

    def test_no_overflow_for_huge_inputs(self):
        assert log_sum_exp([1e6, 1e6]) == pytest.approx(1e6 + math.log(2), rel=1e-12)
        assert np.isfinite(log_sum_exp([-1e6, 1e6]))

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            log_sum_exp([])


class TestSoftmax:
    def test_uniform_logits(self):
        for n in (1, 2, 5, 17):
            np.testing.assert_allclose(softmax(np.full(n, 0.3)), np.full(n, 1.0 / n),
                                       atol=1e-15)

    def test_closed_form_two_classes(self):
        # exp(0) : exp(ln 3) = 1 : 3
        np.testing.assert_allclose(softmax([0.0, math.log(3)]), [0.25, 0.75],
                                   rtol=1e-14)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12),
           st.floats(-100, 100))
    @settings(max_examples=200, deadline=None)
    def test_sums_to_one_and_shift_invariant(self, logits, shift):
        p = softmax(logits)
        assert abs(p.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(p, softmax(np.asarray(logits) + shift),
                                   atol=1e-12)

    def test_monotone_in_logits(self):
        p = softmax([0.0, 1.0, 2.0])
        assert p[0] < p[1] < p[2]

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            softmax([0.0, float("nan")])


class TestLogSoftmax:
    def test_matches_log_of_softmax(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 6))
        np.testing.assert_allclose(log_softmax(x, axis=-1),
                                   np.log(np.apply_along_axis(softmax, -1, x)),
                                   rtol=1e-12)


class TestSampleWithoutReplacement:
    def test_full_support_draw_returns_everything(self):
        w = np.array([0.5, 0.0, 2.0, 1.0])
        idx = sample_without_replacement(w, 3, SeededRng(0))
        assert sorted(idx) == [0, 2, 3]

    def test_zero_weight_never_drawn(self):
        w = np.array([1.0, 0.0, 1.0])
        for seed in range(200):
            idx = sample_without_replacement(w, 2, SeededRng(seed))
            assert sorted(idx) == [0, 2]

    def test_first_draw_marginal_matches_normalized_weight(self):
        # With weights [1, 2, 1], index 1 heads the draw order with
        # probability 1/2.  100k independent seeds, +-0.01 band.
        w = np.array([1.0, 2.0, 1.0])
        hits = sum(sample_without_replacement(w, 1, SeededRng(s, 1))[0] == 1
                   for s in range(100_000))
        assert abs(hits / 100_000 - 0.5) <= 0.01

    def test_deterministic_under_seed_and_stream(self):
        w = np.arange(1.0, 11.0)
        a = sample_without_replacement(w, 4, SeededRng(123, 9))
        b = sample_without_replacement(w, 4, SeededRng(123, 9))
        c = sample_without_replacement(w, 4, SeededRng(123, 10))
        np.testing.assert_array_equal(a, b)
        assert list(a) != list(c)  # different stream, different draw

    def test_k_zero(self):
        assert sample_without_replacement([1.0], 0, SeededRng(0)).size == 0

    def test_oversized_k_rejected(self):
        with pytest.raises(ValueError):
            sample_without_replacement([1.0, 0.0], 2, SeededRng(0))

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            sample_without_replacement([1.0, -0.1], 1, SeededRng(0))
