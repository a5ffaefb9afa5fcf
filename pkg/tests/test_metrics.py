import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from _helpers import brute_force_accuracy, dictionary_nmi, pair_counting_ari
from dualdec.errors import ShapeError
from dualdec.metrics import ContingencyTable, accuracy, ari, evaluate_all, f1, nmi

PRED_ACC = [0, 0, 1, 1]
TRUTH_ACC = [0, 1, 1, 1]
PRED_IND = [0, 0, 1, 1]
TRUTH_IND = [0, 1, 0, 1]


def random_labels(rng, n, k):
    return rng.integers(0, k, size=n)


class TestContingency:
    def test_counts_and_marginals(self):
        t = ContingencyTable.from_labels(PRED_ACC, TRUTH_ACC)
        assert t.counts.tolist() == [[1, 1], [0, 2]]
        assert t.row_sums.tolist() == [2, 2]
        assert t.col_sums.tolist() == [1, 3]
        assert t.total == 4

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            ContingencyTable.from_labels([0, 1], [0, 1, 2])


class TestAccuracy:
    def test_perfect(self):
        assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0

    def test_relabel_invariance(self):
        rng = np.random.default_rng(0)
        truth = random_labels(rng, 40, 4)
        relabeled = (truth + 2) % 4
        assert accuracy(relabeled, truth) == 1.0

    def test_hand_example(self):
        # best of the two bijections matches 3 of 4 items
        assert accuracy(PRED_ACC, TRUTH_ACC) == pytest.approx(0.75)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(4, 31))
            kp = int(rng.integers(2, 7))
            kt = int(rng.integers(2, 7))
            pred = random_labels(rng, n, kp)
            truth = random_labels(rng, n, kt)
            assert accuracy(pred, truth) == pytest.approx(
                brute_force_accuracy(pred, truth), abs=1e-12)

    def test_majority_baseline_bound(self):
        rng = np.random.default_rng(2)
        truth = random_labels(rng, 60, 5)
        constant = np.zeros(60, dtype=int)
        assert accuracy(constant, truth) >= 1.0 / 5.0


class TestNmi:
    def test_identical_nontrivial(self):
        assert nmi([0, 0, 1, 2], [0, 0, 1, 2]) == pytest.approx(1.0)

    def test_constant_prediction_is_zero(self):
        assert nmi([1, 1, 1, 1], [0, 1, 0, 1]) == 0.0

    def test_both_constant_is_one(self):
        assert nmi([3, 3, 3], [5, 5, 5]) == 1.0

    def test_independent_partitions_hand_example(self):
        assert nmi(PRED_IND, TRUTH_IND) == pytest.approx(0.0, abs=1e-12)

    def test_matches_independent_oracles(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            n = int(rng.integers(4, 31))
            pred = random_labels(rng, n, int(rng.integers(2, 7)))
            truth = random_labels(rng, n, int(rng.integers(2, 7)))
            ours = nmi(pred, truth)
            assert ours == pytest.approx(dictionary_nmi(pred, truth), abs=1e-12)
            assert ours == pytest.approx(
                normalized_mutual_info_score(truth, pred), abs=1e-9)

    def test_symmetric(self):
        rng = np.random.default_rng(4)
        pred = random_labels(rng, 30, 3)
        truth = random_labels(rng, 30, 4)
        assert nmi(pred, truth) == pytest.approx(nmi(truth, pred), abs=1e-12)


class TestAri:
    def test_identical(self):
        assert ari([0, 1, 1, 2], [0, 1, 1, 2]) == pytest.approx(1.0)

    def test_independent_partitions_negative_hand_value(self):
        # all contingency cells equal 1: index 0, expected 2/3, max 2,
        # so the adjusted value is (0 - 2/3) / (2 - 2/3) = -1/2
        value = ari(PRED_IND, TRUTH_IND)
        assert value < 0
        assert value == pytest.approx(-0.5, abs=1e-12)
        assert value == pytest.approx(pair_counting_ari(PRED_IND, TRUTH_IND), abs=1e-12)
        assert value == pytest.approx(adjusted_rand_score(TRUTH_IND, PRED_IND), abs=1e-12)

    def test_relabel_invariance(self):
        rng = np.random.default_rng(5)
        pred = random_labels(rng, 30, 4)
        truth = random_labels(rng, 30, 3)
        assert ari((pred + 1) % 4, truth) == pytest.approx(ari(pred, truth), abs=1e-12)

    def test_matches_independent_oracles(self):
        rng = np.random.default_rng(6)
        for _ in range(40):
            n = int(rng.integers(4, 31))
            pred = random_labels(rng, n, int(rng.integers(2, 7)))
            truth = random_labels(rng, n, int(rng.integers(2, 7)))
            ours = ari(pred, truth)
            assert ours == pytest.approx(pair_counting_ari(pred, truth), abs=1e-12)
            assert ours == pytest.approx(adjusted_rand_score(truth, pred), abs=1e-9)

    def test_symmetric(self):
        rng = np.random.default_rng(7)
        pred = random_labels(rng, 25, 3)
        truth = random_labels(rng, 25, 5)
        assert ari(pred, truth) == pytest.approx(ari(truth, pred), abs=1e-12)

    def test_trivial_partitions(self):
        assert ari([0, 0, 0], [1, 1, 1]) == 1.0
        assert ari([0, 1, 2], [2, 0, 1]) == 1.0  # both all-singletons


class TestF1:
    def test_perfect(self):
        assert f1([1, 0, 2], [0, 1, 2]) == pytest.approx(1.0)

    def test_macro_hand_example(self):
        # class 0: precision 1/2, recall 1 -> 2/3; class 1: precision 1,
        # recall 2/3 -> 4/5; macro mean = 11/15
        assert f1(PRED_ACC, TRUTH_ACC) == pytest.approx((2 / 3 + 4 / 5) / 2)

    def test_prediction_relabel_invariance(self):
        rng = np.random.default_rng(8)
        pred = random_labels(rng, 30, 4)
        truth = random_labels(rng, 30, 4)
        assert f1((pred + 3) % 4, truth) == pytest.approx(f1(pred, truth), abs=1e-12)

    def test_unmatched_truth_class_scores_zero(self):
        # a single predicted cluster can match only one of the two classes
        value = f1([0, 0, 0, 0], [0, 0, 1, 1])
        assert value == pytest.approx((2 / 3 + 0.0) / 2)

    def test_pairwise_variant(self):
        assert f1([0, 0, 1, 1], [0, 0, 1, 1], pairwise=True) == pytest.approx(1.0)
        assert 0.0 <= f1(PRED_ACC, TRUTH_ACC, pairwise=True) <= 1.0


class TestEvaluateAll:
    def test_identical_partitions_all_one(self):
        out = evaluate_all([0, 1, 1, 2], [0, 1, 1, 2])
        assert all(v == pytest.approx(1.0) for v in out.values())

    def test_ranges(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            pred = random_labels(rng, 25, 4)
            truth = random_labels(rng, 25, 3)
            out = evaluate_all(pred, truth)
            assert 0.0 <= out["acc"] <= 1.0
            assert 0.0 <= out["nmi"] <= 1.0
            assert -1.0 <= out["ari"] <= 1.0
            assert 0.0 <= out["f1"] <= 1.0
