"""Ranking calibration: margin formula, hinge loss against brute force,
finite-difference gradients, profile-based candidate ordering."""

import numpy as np
import pytest

from empersona import autodiff as ad
from empersona.autodiff import Tensor
from empersona.calibration import (combined_loss, margin_order,
                                   pairwise_margin_loss, personality_margin,
                                   rank_by_profile)


class TestMargin:
    def test_hand_value(self):
        # squared distance over the trait triple: 0.1^2 + 0.2^2 + 0 = 0.05
        got = personality_margin((0.5, 0.5, 0.5), (0.6, 0.3, 0.5))
        assert got == pytest.approx(0.05, abs=1e-12)
        # second pair: three 0.1 gaps, 0.01 * 3
        got = personality_margin((0.3, 0.6, 0.4), (0.2, 0.5, 0.3))
        assert got == pytest.approx(0.03, abs=1e-12)

    def test_zero_for_identical_profiles(self):
        assert personality_margin((0.1, 0.2, 0.3), (0.1, 0.2, 0.3)) == 0.0

    def test_matches_sum_of_squares_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            t = rng.uniform(-1, 1, 3)
            p = rng.uniform(-1, 1, 3)
            assert personality_margin(t, p) == pytest.approx(
                float(((t - p) ** 2).sum()), abs=1e-12)

    def test_dict_profiles_accepted(self):
        t = {"extraversion": 0.3, "introverted": 0.6, "thinking": 0.4}
        p = (0.2, 0.5, 0.3)
        assert personality_margin(t, p) == pytest.approx(0.03, abs=1e-12)


class TestMarginOrder:
    def test_sorts_ascending(self):
        assert margin_order([0.5, 0.1, 0.3]) == [1, 2, 0]

    def test_stable_on_ties(self):
        assert margin_order([0.2, 0.1, 0.2, 0.1]) == [1, 3, 0, 2]


def _brute_force(lps, alpha):
    total = 0.0
    k = len(lps)
    for i in range(k):
        for j in range(i + 1, k):
            total += max(0.0, lps[j] - lps[i] + alpha * (j - i))
    return total


class TestPairwiseLoss:
    def test_correct_order_with_slack_is_zero(self):
        lps = [Tensor(-0.5), Tensor(-1.0), Tensor(-1.5)]
        with ad.no_grad():
            assert pairwise_margin_loss(lps, 0.001).item() == 0.0

    def test_hand_value_one_violation(self):
        # order best-first wanted, but middle outranks first:
        # pairs (0,1): -0.8 - -0.9 + 0.001 = 0.101
        #       (0,2): -1.5 - -0.9 + 0.002 <= 0
        #       (1,2): -1.5 - -0.8 + 0.001 <= 0
        # hmm frozen oracle value 0.201 uses -0.7:
        lps = [Tensor(-0.9), Tensor(-0.7), Tensor(-1.5)]
        with ad.no_grad():
            got = pairwise_margin_loss(lps, 0.001).item()
        assert got == pytest.approx(0.201, abs=1e-6)

    def test_fewer_than_two_candidates_is_zero(self):
        with ad.no_grad():
            assert pairwise_margin_loss([], 0.1).item() == 0.0
            assert pairwise_margin_loss([Tensor(-1.0)], 0.1).item() == 0.0

    def test_matches_brute_force_exactly_randomized(self):
        # same left-fold add order in both routes, so float64 agrees bitwise
        rng = np.random.default_rng(4)
        for _ in range(300):
            k = int(rng.integers(2, 7))
            vals = [float(v) for v in -rng.random(k) * 3]
            alpha = float(rng.choice([0.0, 1e-3, 1e-2, 0.1]))
            with ad.precision("float64"), ad.no_grad():
                got = pairwise_margin_loss([Tensor(v) for v in vals],
                                           alpha).item()
            assert got == _brute_force(vals, alpha)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        with ad.precision("float64"):
            vals = [Tensor(float(v), requires_grad=True)
                    for v in -rng.random(5) * 2]
            err = ad.grad_check(lambda: pairwise_margin_loss(vals, 0.01), vals)
        assert err <= 1e-6

    def test_loss_decreases_when_order_restored(self):
        bad = [Tensor(-2.0), Tensor(-1.0)]
        good = [Tensor(-1.0), Tensor(-2.0)]
        with ad.no_grad():
            assert pairwise_margin_loss(good, 0.001).item() \
                < pairwise_margin_loss(bad, 0.001).item()


class TestCombinedLoss:
    def test_weighted_sum(self):
        with ad.no_grad():
            got = combined_loss(Tensor(2.0), Tensor(0.5), beta=3.0).item()
        assert got == pytest.approx(3.5)

    def test_beta_zero_is_nll_only(self):
        with ad.no_grad():
            got = combined_loss(Tensor(2.0), Tensor(99.0), beta=0.0).item()
        assert got == pytest.approx(2.0)


class _FixedProfileModel:
    """Stub personality reader keyed by first token id."""

    def __init__(self, table):
        self.table = table

    def predict_profile(self, ids):
        return self.table[ids[0]]


class TestRankByProfile:
    def test_orders_by_closeness_to_target(self):
        model = _FixedProfileModel({
            1: (0.9, 0.5, 0.5),   # far
            2: (0.1, 0.5, 0.5),   # close
            3: (-0.9, 0.5, 0.5),  # farther
        })
        order, margins = rank_by_profile([[1], [2], [3]], model, (0.0, 0.5, 0.5))
        assert order == [1, 0, 2]
        assert margins == pytest.approx([0.81, 0.01, 0.81])

    def test_empty_candidate_reads_neutral(self):
        model = _FixedProfileModel({1: (0.0, 0.5, 0.5)})
        order, margins = rank_by_profile([[], [1]], model, (0.0, 0.5, 0.5))
        # both neutral: stable order preserved
        assert order == [0, 1]
        assert margins[0] == margins[1]
