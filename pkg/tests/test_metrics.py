"""Metric oracles: rank AUC vs pair counting, logloss hand cases."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrbench.errors import MetricUndefinedError, NumericError
from ctrbench.metrics import auc, auc_pair_count, evaluate, logloss


class TestAuc:
    def test_hand_case_three_of_four_pairs(self):
        assert auc([0.9, 0.8, 0.7, 0.2], [1, 0, 1, 0]) == 0.75

    def test_perfect_separation(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_tie_credits_one_half(self):
        assert auc([0.5, 0.5], [1, 0]) == 0.5

    def test_single_class_raises(self):
        with pytest.raises(MetricUndefinedError):
            auc([0.1, 0.2], [1, 1])
        with pytest.raises(MetricUndefinedError):
            auc([0.1, 0.2], [0, 0])

    def test_rank_formulation_equals_pair_counting_exactly(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            n = int(rng.integers(2, 1000))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            # coarse grid of scores forces plenty of ties
            scores = rng.integers(0, 10, size=n) / 10.0
            assert auc(scores, labels) == auc_pair_count(scores, labels)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(7)
        scores = rng.normal(size=200)
        labels = rng.integers(0, 2, size=200)
        base = auc(scores, labels)
        assert auc(np.exp(scores), labels) == base
        assert auc(3.0 * scores + 11.0, labels) == base

    def test_negated_scores_complement(self):
        rng = np.random.default_rng(8)
        scores = rng.normal(size=151)  # continuous, no ties
        labels = rng.integers(0, 2, size=151)
        assert auc(-scores, labels) == pytest.approx(1.0 - auc(scores, labels), abs=1e-15)

    def test_negated_scores_with_ties(self):
        scores = np.array([0.5, 0.5, 0.3, 0.3, 0.1])
        labels = np.array([1, 0, 1, 0, 1])
        assert auc(-scores, labels) == pytest.approx(1.0 - auc(scores, labels), abs=1e-15)


class TestLogloss:
    def test_half_probability_is_ln2(self):
        assert logloss([0.5], [1]) == pytest.approx(math.log(2), abs=1e-12)

    def test_clamped_certainty_correct(self):
        # -ln(1 - 1e-7) and -ln(1e-7), values pinned by a high-precision oracle
        assert logloss([1.0], [1]) == pytest.approx(1.000000050000003e-07, rel=1e-9)
        assert logloss([0.0], [0]) == pytest.approx(1.000000050000003e-07, rel=1e-9)
        assert logloss([1e-7], [1]) == pytest.approx(16.11809565095832, rel=1e-12)

    def test_logit_mode_agrees_with_probability_mode(self):
        rng = np.random.default_rng(5)
        z = rng.uniform(-15, 15, size=500)
        y = rng.integers(0, 2, size=500)
        p = 1.0 / (1.0 + np.exp(-z))
        assert logloss(z, y, input_is_logit=True) == pytest.approx(
            logloss(p, y), abs=1e-9)

    def test_non_finite_raises(self):
        with pytest.raises(NumericError):
            logloss([np.nan], [1])
        with pytest.raises(NumericError):
            logloss([np.inf], [1], input_is_logit=True)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_true_probabilities_minimize_expected_logloss(self, seed):
        # On labels drawn from p_true, no other prediction q can beat p_true
        # in expectation; check the realized gap given generous sampling room.
        rng = np.random.default_rng(seed)
        p_true = rng.uniform(0.2, 0.8, size=2000)
        y = (rng.random(2000) < p_true).astype(int)
        ll_true = logloss(p_true, y)
        q = np.clip(p_true + rng.normal(0, 0.15, size=2000), 0.01, 0.99)
        ll_q = logloss(q, y)
        # the oracle itself is optimal in expectation; tolerate sampling noise
        assert ll_q >= ll_true - 0.02


def test_evaluate_bundles_both_metrics():
    res = evaluate([2.0, -2.0, 1.0, -1.0], [1, 0, 1, 0])
    assert res.sample_count == 4
    assert res.auc == 1.0
    assert res.logloss == pytest.approx(
        logloss([2.0, -2.0, 1.0, -1.0], [1, 0, 1, 0], input_is_logit=True))
