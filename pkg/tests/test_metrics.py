"""Metric implementations against independent references (scipy, sklearn)
and frozen hand values."""

import numpy as np
import pytest
import scipy.stats
from sklearn.metrics import balanced_accuracy_score, f1_score

from empersona.metrics import (classification_metrics, distinct_n, pearson,
                               spearman)


class TestHandValues:
    def test_distinct_1_frozen_case(self):
        texts = ["a b c", "a b", "d e f g"]
        # 9 unigram tokens, unique {a,b,c,d,e,f,g} less... pooled: a,b,c,a,b,d,e,f,g
        # -> 7 unique / 9 total
        assert distinct_n(texts, 1) == pytest.approx(7 / 9)

    def test_distinct_2_counts_pooled_bigrams(self):
        texts = ["a b c", "a b"]
        # bigrams: (a,b), (b,c), (a,b) -> 2 unique / 3
        assert distinct_n(texts, 2) == pytest.approx(2 / 3)

    def test_distinct_empty_input(self):
        assert distinct_n([], 1) == 0.0
        assert distinct_n(["", ""], 1) == 0.0

    def test_pearson_perfect_and_sign(self):
        x = [1.0, 2.0, 3.0, 4.0]
        assert pearson(x, [2.0, 4.0, 6.0, 8.0]) == pytest.approx(1.0)
        assert pearson(x, [8.0, 6.0, 4.0, 2.0]) == pytest.approx(-1.0)

    def test_degenerate_inputs_return_none(self):
        assert pearson([1.0], [2.0]) is None
        assert pearson([1.0, 1.0], [2.0, 3.0]) is None
        assert spearman([1.0, 1.0], [2.0, 3.0]) is None

    def test_spearman_is_rank_based(self):
        x = [1.0, 2.0, 3.0, 100.0]
        y = [10.0, 20.0, 30.0, 31.0]  # monotone, not linear
        assert spearman(x, y) == pytest.approx(1.0)
        assert pearson(x, y) < 1.0

    def test_all_zero_binary_classifier(self):
        m = classification_metrics([0, 1, 0, 1], [0, 0, 0, 0], n_classes=2)
        assert m["accuracy"] == pytest.approx(0.5)
        assert m["balanced_accuracy"] == pytest.approx(0.5)
        assert m["f1"] == pytest.approx(1 / 3)

    def test_perfect_classifier(self):
        m = classification_metrics([0, 1, 2], [0, 1, 2], n_classes=3)
        assert m["accuracy"] == 1.0
        assert m["balanced_accuracy"] == 1.0
        assert m["f1"] == 1.0


class TestAgainstReferences:
    def test_pearson_matches_scipy(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(3, 40))
            x = rng.standard_normal(n)
            y = rng.standard_normal(n) + 0.5 * x
            want = scipy.stats.pearsonr(x, y).statistic
            assert pearson(x, y) == pytest.approx(want, abs=1e-9)

    def test_spearman_matches_scipy_with_ties(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(4, 30))
            x = rng.integers(0, 6, size=n).astype(float)  # heavy ties
            y = rng.integers(0, 6, size=n).astype(float)
            want = scipy.stats.spearmanr(x, y).statistic
            got = spearman(x, y)
            if np.isnan(want):
                assert got is None
            else:
                assert got == pytest.approx(want, abs=1e-9)

    def test_classification_matches_sklearn(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(5, 60))
            k = int(rng.integers(2, 6))
            y_true = rng.integers(0, k, size=n)
            y_pred = rng.integers(0, k, size=n)
            m = classification_metrics(y_true, y_pred, n_classes=k)
            assert m["accuracy"] == pytest.approx(np.mean(y_true == y_pred))
            assert m["balanced_accuracy"] == pytest.approx(
                balanced_accuracy_score(y_true, y_pred), abs=1e-12)
            assert m["f1"] == pytest.approx(
                f1_score(y_true, y_pred, labels=range(k), average="macro",
                         zero_division=0), abs=1e-12)

    def test_distinct_matches_set_arithmetic(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            texts = [" ".join(rng.choice(list("abcdef"),
                                         size=rng.integers(1, 8)))
                     for _ in range(rng.integers(1, 6))]
            for n in (1, 2, 3):
                grams = []
                for t in texts:
                    toks = t.split()
                    grams += [tuple(toks[i:i + n])
                              for i in range(len(toks) - n + 1)]
                want = len(set(grams)) / len(grams) if grams else 0.0
                assert distinct_n(texts, n) == pytest.approx(want)
