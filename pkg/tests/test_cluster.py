import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import normalized_mutual_info_score

from oracles import brute_force_accuracy, hand_nmi, hand_purity
from thcrl.cluster import MetricReport, accuracy, contingency, evaluate_labels, kmeans, nmi, purity
from thcrl.data import make_synthetic
from thcrl.errors import ConfigError, ContractError

# hand contingency-table value for truth [0,0,1,1], pred [0,1,1,1]
PINNED_NMI_GEOMETRIC = 0.3455920299442113

labels = st.integers(1, 6).flatmap(
    lambda k: st.integers(1, 30).flatmap(
        lambda n: st.tuples(st.lists(st.integers(0, k - 1), min_size=n, max_size=n),
                            st.lists(st.integers(0, k - 1), min_size=n, max_size=n))))


class TestAccuracy:
    def test_relabelled_is_perfect(self):
        assert accuracy([1, 1, 0, 0], [0, 0, 1, 1]) == 1.0

    def test_half(self):
        assert accuracy([0, 1, 0, 1], [0, 0, 1, 1]) == 0.5
        assert brute_force_accuracy([0, 1, 0, 1], [0, 0, 1, 1]) == 0.5

    def test_more_clusters_than_classes(self):
        pred, truth = [0, 1, 2, 2], [0, 0, 1, 1]
        assert accuracy(pred, truth) == brute_force_accuracy(pred, truth) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            accuracy([0, 1], [0, 1, 1])

    @settings(max_examples=60, deadline=None)
    @given(labels)
    def test_matches_permutation_search(self, pair):
        pred, truth = pair
        assert abs(accuracy(pred, truth) - brute_force_accuracy(pred, truth)) <= 1e-12


class TestNmi:
    def test_identical(self):
        assert nmi([0, 0, 1, 2], [2, 2, 0, 1]) == 1.0

    def test_constant_prediction(self):
        assert nmi([0, 0, 0, 0], [0, 0, 1, 1]) == 0.0

    def test_pinned(self):
        assert nmi([0, 1, 1, 1], [0, 0, 1, 1]) == pytest.approx(PINNED_NMI_GEOMETRIC, abs=1e-15)
        assert hand_nmi([0, 1, 1, 1], [0, 0, 1, 1]) == pytest.approx(PINNED_NMI_GEOMETRIC, abs=1e-15)

    @pytest.mark.parametrize("average", ["geometric", "arithmetic"])
    def test_matches_reference_library(self, average):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pred, truth = rng.integers(0, 4, 40), rng.integers(0, 3, 40)
            ref = normalized_mutual_info_score(truth, pred, average_method=average)
            assert abs(nmi(pred, truth, average) - ref) < 1e-12
            assert abs(nmi(pred, truth, average) - hand_nmi(pred, truth, average)) < 1e-12

    def test_unknown_average(self):
        with pytest.raises(ConfigError):
            nmi([0, 1], [1, 0], "max")


class TestPurity:
    def test_identical(self):
        assert purity([1, 1, 0], [0, 0, 1]) == 1.0

    def test_single_cluster(self):
        assert purity([0] * 9, [0, 1, 2] * 3) == pytest.approx(1 / 3)

    @settings(max_examples=40, deadline=None)
    @given(labels)
    def test_matches_counting(self, pair):
        pred, truth = pair
        assert abs(purity(pred, truth) - hand_purity(pred, truth)) <= 1e-12


class TestRelabelInvariance:
    @settings(max_examples=30, deadline=None)
    @given(labels, st.randoms(use_true_random=False))
    def test_all_metrics(self, pair, rnd):
        pred, truth = pair
        pmap = list(range(6))
        tmap = list(range(6))
        rnd.shuffle(pmap)
        rnd.shuffle(tmap)
        p2 = [pmap[x] for x in pred]
        t2 = [tmap[x] for x in truth]
        for fn in (accuracy, nmi, purity):
            assert abs(fn(pred, truth) - fn(p2, t2)) < 1e-12


class TestContingency:
    def test_counts(self):
        np.testing.assert_array_equal(contingency([0, 0, 1], [1, 0, 0]), [[1, 1], [1, 0]])

    def test_report(self):
        rep = evaluate_labels([0, 0, 1, 1], [1, 1, 0, 0])
        assert rep == MetricReport(1.0, 1.0, 1.0)
        assert rep.to_text() == "acc=1.0000 nmi=1.0000 pur=1.0000"
        assert '"acc": 1.0' in rep.to_json()


class TestKmeans:
    def test_two_pairs(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
        res = kmeans(X, 2, seed=0)
        assert res.assignments[0] == res.assignments[1] != res.assignments[2] == res.assignments[3]
        assert res.inertia == pytest.approx(4 * 0.25)

    def test_k_equals_n(self):
        X = np.random.default_rng(0).standard_normal((6, 3))
        assert kmeans(X, 6, seed=1).inertia == pytest.approx(0.0, abs=1e-20)

    def test_too_many_clusters(self):
        with pytest.raises(ConfigError):
            kmeans(np.zeros((3, 2)), 4)

    def test_separable_synthetic(self):
        ds = make_synthetic(600, 3, [3, 3, 3], [0.05] * 3, seed=11, min_gap=1.0)
        res = kmeans(ds.concatenated(), 3, seed=0)
        assert accuracy(res.assignments, ds.labels) >= 0.99

    def test_deterministic_per_seed(self):
        X = np.random.default_rng(2).standard_normal((80, 4))
        a, b = kmeans(X, 4, seed=5), kmeans(X, 4, seed=5)
        np.testing.assert_array_equal(a.assignments, b.assignments)
        assert a.inertia == b.inertia

    def test_best_of_restarts(self):
        X = np.random.default_rng(3).standard_normal((60, 2))
        many = kmeans(X, 5, seed=0, n_restarts=10).inertia
        singles = [kmeans(X, 5, seed=0, n_restarts=r).inertia for r in (1, 2, 5)]
        assert many <= min(singles)

    def test_duplicate_points(self):
        X = np.zeros((5, 2))
        res = kmeans(X, 3, seed=0)
        assert res.inertia == 0.0 and res.assignments.max() < 3

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(2, 40), k=st.integers(1, 6), seed=st.integers(0, 2**16))
    def test_properties(self, n, k, seed):
        k = min(k, n)
        X = np.random.default_rng(seed).standard_normal((n, 3))
        res = kmeans(X, k, seed=seed, n_restarts=2)
        assert res.assignments.shape == (n,)
        assert res.assignments.min() >= 0 and res.assignments.max() < k
        assert res.inertia >= 0 and res.centroids.shape == (k, 3)
        hist = res.inertia_history
        assert all(b <= a + 1e-9 * max(1.0, a) for a, b in zip(hist, hist[1:]))
