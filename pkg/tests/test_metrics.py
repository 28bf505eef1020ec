import numpy as np
import pytest

from featkit.errors import (
    EmptyClassRow,
    EmptyInput,
    EmptyRelevantSet,
    NoPositives,
    UnknownLabel,
)
from featkit.metrics import (
    average_precision,
    confusion,
    mean_ap,
    mean_diag_accuracy,
    pr_curve,
    recall_at_k,
)
from oracles import ap_prefix_oracle, pr_points_oracle, recall_at_k_oracle


class TestPrCurve:
    def test_hand_case(self):
        points = pr_curve([0.9, 0.8, 0.1], [True, True, False])
        assert points == [(0.5, 1.0), (1.0, 1.0)]

    def test_all_positives_precision_one(self):
        points = pr_curve([0.3, 0.2, 0.9], [True, True, True])
        assert all(p == 1.0 for _, p in points)

    def test_recall_non_decreasing(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 12))
            scores = rng.normal(size=n)
            labels = rng.random(n) < 0.5
            if not labels.any():
                labels[0] = True
            points = pr_curve(scores, labels)
            recalls = [r for r, _ in points]
            assert recalls == sorted(recalls)

    def test_matches_prefix_oracle_with_reversal(self, rng):
        for _ in range(40):
            n = int(rng.integers(1, 11))
            scores = rng.normal(size=n)
            labels = rng.random(n) < 0.4
            if not labels.any():
                labels[int(rng.integers(n))] = True
            assert pr_curve(scores, labels) == pytest.approx(
                pr_points_oracle(list(scores), list(labels))
            )
            assert pr_curve(-scores, labels) == pytest.approx(
                pr_points_oracle(list(-scores), list(labels))
            )

    def test_no_positives_rejected(self):
        with pytest.raises(NoPositives):
            pr_curve([0.1, 0.2], [False, False])


class TestAveragePrecision:
    def test_perfect_ranking_both_modes(self):
        scores = [0.9, 0.8, 0.2, 0.1]
        labels = [True, True, False, False]
        assert average_precision(scores, labels, "all_points") == 1.0
        assert average_precision(scores, labels, "eleven_point") == 1.0

    def test_hand_case(self):
        got = average_precision([0.9, 0.8, 0.1], [False, True, True])
        assert got == pytest.approx((1 / 2 + 2 / 3) / 2, abs=1e-12)

    def test_matches_bruteforce_exactly(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 13))
            scores = rng.normal(size=n)
            labels = rng.random(n) < 0.5
            if not labels.any():
                labels[int(rng.integers(n))] = True
            assert average_precision(scores, labels) == ap_prefix_oracle(
                list(scores), list(labels)
            )

    def test_modes_agree_on_monotone_precision(self):
        # positives first: precision is non-increasing along the ranking
        scores = [5.0, 4.0, 3.0, 2.0, 1.0]
        labels = [True, True, False, False, False]
        a = average_precision(scores, labels, "all_points")
        e = average_precision(scores, labels, "eleven_point")
        assert a == 1.0 and e == 1.0

    def test_rank_only_dependence(self, rng):
        scores = rng.normal(size=10)
        labels = rng.random(10) < 0.5
        labels[0] = True
        base = average_precision(scores, labels)
        for f in (lambda s: 3 * s + 7, np.exp, np.tanh):
            assert average_precision(f(scores), labels) == base

    def test_tie_break_uses_original_order(self):
        # equal scores: the earlier sample ranks first
        got = average_precision([0.5, 0.5], [False, True])
        assert got == 0.5
        got = average_precision([0.5, 0.5], [True, False])
        assert got == 1.0

    def test_joint_permutation_invariance_tie_free(self, rng):
        scores = rng.permutation(np.linspace(-1, 1, 9))
        labels = rng.random(9) < 0.5
        labels[3] = True
        base = average_precision(scores, labels)
        for _ in range(10):
            perm = rng.permutation(9)
            assert average_precision(scores[perm], labels[perm]) == base

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            average_precision([1.0], [True], "twelve_point")


class TestMeanAp:
    def test_values(self):
        assert mean_ap([1.0]) == 1.0
        assert mean_ap([0.5, 1.0]) == 0.75
        assert mean_ap([0.3] * 20) == pytest.approx(0.3)

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            mean_ap([])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            mean_ap([1.5])


class TestConfusion:
    def test_all_correct_is_diagonal(self):
        m = confusion(["a", "b", "a"], ["a", "b", "a"], ["a", "b"])
        assert np.array_equal(m, [[2, 0], [0, 1]])

    def test_single_off_diagonal(self):
        m = confusion(["b"], ["a"], ["a", "b"])
        assert m[0, 1] == 1 and m.sum() == 1

    def test_row_sums_count_conservation(self, rng):
        classes = ["a", "b", "c"]
        truth = [classes[i] for i in rng.integers(0, 3, size=60)]
        preds = [classes[i] for i in rng.integers(0, 3, size=60)]
        m = confusion(preds, truth, classes)
        assert m.sum() == 60
        for ci, cls in enumerate(classes):
            assert m[ci].sum() == truth.count(cls)

    def test_unknown_label(self):
        with pytest.raises(UnknownLabel):
            confusion(["z"], ["a"], ["a", "b"])


class TestMeanDiagAccuracy:
    def test_perfect(self):
        m = confusion(["a", "b"], ["a", "b"], ["a", "b"])
        assert mean_diag_accuracy(m) == 1.0

    def test_class_mean_not_sample_mean(self):
        # class 1: 10/10 correct; class 2: 0/5 -> class-mean 0.5, not 10/15
        m = np.array([[10, 0], [5, 0]])
        assert mean_diag_accuracy(m) == 0.5

    def test_uniform_random_near_one_over_k(self, rng):
        k, n = 4, 8000
        truth = rng.integers(0, k, size=n)
        preds = rng.integers(0, k, size=n)
        m = confusion(list(preds), list(truth), list(range(k)))
        acc = mean_diag_accuracy(m)
        sigma = np.sqrt((1 / k) * (1 - 1 / k) / (n / k))
        assert abs(acc - 1 / k) <= 3 * sigma

    def test_empty_row_rejected(self):
        with pytest.raises(EmptyClassRow):
            mean_diag_accuracy(np.array([[3, 0], [0, 0]]))


class TestRecallAtK:
    def test_hand_values(self):
        ranking = ["r1", "r2", "r3", "r4", "r5"]
        assert recall_at_k(ranking, {"r1", "r2", "r3", "r4"}, 4) == 1.0
        assert recall_at_k(ranking, {"r1", "r2", "r3", "r9"}, 4) == 0.75

    def test_k_at_least_corpus_gives_one(self):
        ranking = ["a", "b", "c"]
        assert recall_at_k(ranking, {"b", "c"}, 10) == 1.0

    def test_non_decreasing_in_k(self, rng):
        corpus = [f"r{i}" for i in range(12)]
        ranking = list(rng.permutation(corpus))
        relevant = set(rng.choice(corpus, size=4, replace=False))
        vals = [recall_at_k(ranking, relevant, k) for k in range(1, 13)]
        assert vals == sorted(vals)
        assert vals == [
            recall_at_k_oracle(ranking, relevant, k) for k in range(1, 13)
        ]

    def test_self_match_excluded_by_default(self):
        ranking = ["q", "a", "b"]
        assert recall_at_k(ranking, {"q", "a"}, 1, query_id="q") == 1.0
        assert (
            recall_at_k(
                ranking, {"q", "a"}, 1, query_id="q", exclude_query=False
            )
            == 0.5
        )

    def test_empty_relevant_rejected(self):
        with pytest.raises(EmptyRelevantSet):
            recall_at_k(["a"], set(), 1)
        with pytest.raises(EmptyRelevantSet):
            recall_at_k(["q"], {"q"}, 1, query_id="q")
