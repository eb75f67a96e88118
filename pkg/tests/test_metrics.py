import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import all_cases, ap_prefix_precision, auc_pairwise, compositions
from tgn.metrics import average_precision, roc_auc


class TestExamples:
    def test_ap_example(self):
        np.testing.assert_allclose(average_precision([0.9, 0.8, 0.1], [1, 0, 1]), (1 + 2 / 3) / 2)

    def test_ap_perfect(self):
        assert average_precision([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0

    def test_auc_example(self):
        assert roc_auc([0.9, 0.4, 0.6, 0.1], [1, 0, 1, 0]) == 1.0

    def test_auc_constant_scores(self):
        assert roc_auc(np.full(6, 0.3), [1, 0, 1, 0, 0, 1]) == 0.5

    def test_auc_perfect_separator(self):
        assert roc_auc([3.0, 2.0, -1.0, -5.0], [1, 1, 0, 0]) == 1.0

    def test_ap_all_tied(self):
        np.testing.assert_allclose(average_precision(np.zeros(4), [1, 0, 0, 1]), 0.5)


class TestErrors:
    def test_no_positive(self):
        with pytest.raises(ValueError, match="positive"):
            average_precision([0.1, 0.2], [0, 0])

    def test_single_class_auc(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="differ"):
            roc_auc([0.1, 0.2], [1])

    def test_non_binary(self):
        with pytest.raises(ValueError, match="0 or 1"):
            average_precision([0.1, 0.2], [1, 2])


class TestExhaustive:
    def test_composition_count(self):
        assert sum(1 for _ in compositions(5)) == 16

    def test_all_short_lists(self):
        n_ap = n_auc = 0
        for scores, labels in all_cases(8):
            if labels.sum():
                assert abs(average_precision(scores, labels) - ap_prefix_precision(scores, labels)) < 1e-12
                n_ap += 1
            if 0 < labels.sum() < len(labels):
                assert abs(roc_auc(scores, labels) - auc_pairwise(scores, labels)) < 1e-12
                n_auc += 1
        assert n_ap > 40000 and n_auc > 40000


class TestRandom:
    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=40))
    @settings(max_examples=200, deadline=None)
    def test_against_oracles_and_range(self, pairs):
        scores = np.array([p[0] for p in pairs], float)
        labels = np.array([p[1] for p in pairs])
        if labels.sum():
            ap = average_precision(scores, labels)
            assert 0.0 <= ap <= 1.0
            np.testing.assert_allclose(ap, ap_prefix_precision(scores, labels), atol=1e-12)
        if 0 < labels.sum() < len(labels):
            auc = roc_auc(scores, labels)
            assert 0.0 <= auc <= 1.0
            np.testing.assert_allclose(auc, auc_pairwise(scores, labels), atol=1e-12)

    @given(st.permutations(range(7)))
    @settings(max_examples=30, deadline=None)
    def test_item_order_irrelevant(self, perm):
        scores = np.array([0.5, 0.5, 0.1, 0.9, 0.3, 0.5, 0.7])
        labels = np.array([1, 0, 0, 1, 1, 0, 1])
        p = np.array(perm)
        assert average_precision(scores[p], labels[p]) == average_precision(scores, labels)
        assert roc_auc(scores[p], labels[p]) == roc_auc(scores, labels)
