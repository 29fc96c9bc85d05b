import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from growthpatterns.errors import DataError, NumericError
from growthpatterns.kmeans import (
    KMeansConfig,
    assign_point,
    kmeans_fit,
    mahalanobis_sq,
    model_from_dict,
    model_to_dict,
    objective,
    squared_euclidean,
)

from conftest import make_matrix
from oracles import gauss_solve


def random_spd(rng, d):
    m = rng.normal(size=(d, d))
    return m @ m.T + d * np.eye(d)


def brute_force_2means(x):
    """Optimal 2-means inertia over every nonempty bipartition."""
    n = x.shape[0]
    best = np.inf
    for mask in range(1, 2 ** (n - 1)):
        side = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        cost = 0.0
        for part in (x[side], x[~side]):
            cost += ((part - part.mean(axis=0)) ** 2).sum()
        best = min(best, cost)
    return best


class TestDistances:
    def test_squared_euclidean_examples(self):
        a = np.arange(12.0)
        assert squared_euclidean(a, a) == 0
        assert squared_euclidean(np.zeros(12), np.ones(12)) == 12
        assert squared_euclidean([1, 2, 3], [4, 6, 3]) == 25

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            squared_euclidean([1, 2], [1, 2, 3])
        with pytest.raises(DataError):
            mahalanobis_sq([1, 2], [1, 2, 3], np.eye(2))

    def test_mahalanobis_identity_and_scaling(self, rng):
        a, b = rng.normal(size=12), rng.normal(size=12)
        assert mahalanobis_sq(a, b, np.eye(12)) == pytest.approx(squared_euclidean(a, b), rel=1e-14)
        assert mahalanobis_sq(a, b, 4 * np.eye(12)) == pytest.approx(squared_euclidean(a, b) / 4, rel=1e-14)

    def test_mahalanobis_matches_elimination_oracle(self, rng):
        for _ in range(20):
            cov = random_spd(rng, 12)
            a, b = rng.normal(size=12), rng.normal(size=12)
            diff = a - b
            expected = float(np.dot(diff, gauss_solve(cov, diff)[0]))
            assert mahalanobis_sq(a, b, cov) == pytest.approx(expected, rel=1e-9)

    def test_mahalanobis_rejects_non_spd(self):
        cov = np.eye(12)
        cov[0, 0] = -1
        with pytest.raises(NumericError):
            mahalanobis_sq(np.zeros(12), np.ones(12), cov)
        asym = np.eye(12)
        asym[0, 1] = 0.5
        with pytest.raises(NumericError):
            mahalanobis_sq(np.zeros(12), np.ones(12), asym)


class TestFit:
    def test_k1_is_column_mean(self, rng):
        x = rng.normal(size=(30, 12))
        model = kmeans_fit(make_matrix(x), KMeansConfig(k=1))
        np.testing.assert_allclose(model.centroids[0], x.mean(axis=0), rtol=1e-12)
        assert set(model.assignments) == {0}

    def test_k_equals_n(self, rng):
        x = rng.normal(size=(7, 12))
        model = kmeans_fit(make_matrix(x), KMeansConfig(k=7))
        assert model.inertia == pytest.approx(0.0, abs=1e-20)
        assert sorted(model.assignments) == list(range(7))

    def test_bad_k(self, rng):
        x = rng.normal(size=(5, 12))
        with pytest.raises(DataError):
            kmeans_fit(make_matrix(x), KMeansConfig(k=6))
        with pytest.raises(DataError):
            KMeansConfig(k=0)

    def test_brute_force_oracle(self, rng):
        hits = 0
        for _ in range(40):
            n = int(rng.integers(3, 9))
            x = rng.normal(size=(n, 12))
            model = kmeans_fit(make_matrix(x), KMeansConfig(k=2, restarts=16, seed=int(rng.integers(1 << 30))))
            hits += abs(model.inertia - brute_force_2means(x)) <= 1e-9 * max(1.0, model.inertia)
        assert hits >= 38

    def test_inertia_matches_objective_and_no_empty_clusters(self, rng):
        x = np.vstack([rng.normal(m, 1, size=(20, 12)) for m in (0, 5, 10)])
        for metric in ("euclidean", "mahalanobis"):
            model = kmeans_fit(make_matrix(x), KMeansConfig(k=3, metric=metric, seed=3))
            assert sorted(set(model.assignments)) == [0, 1, 2]
            assert objective(x, model) == pytest.approx(model.inertia, rel=1e-9)
            assert model.inertia == min(model.restart_inertias)

    def test_history_non_increasing(self, rng):
        for seed in range(10):
            x = rng.normal(size=(60, 12)) + rng.integers(0, 3, size=(60, 1)) * 2.0
            model = kmeans_fit(make_matrix(x), KMeansConfig(k=4, seed=seed, restarts=4))
            assert np.all(np.diff(model.history) <= 1e-9)

    def test_empty_cluster_repair_with_duplicates(self):
        x = np.zeros((6, 12))
        x[5] = 1.0
        model = kmeans_fit(make_matrix(x), KMeansConfig(k=3, restarts=2))
        assert sorted(set(model.assignments)) == [0, 1, 2]

    def test_deterministic(self, rng):
        x = rng.normal(size=(50, 12))
        a = kmeans_fit(make_matrix(x), KMeansConfig(k=3, seed=9))
        b = kmeans_fit(make_matrix(x), KMeansConfig(k=3, seed=9))
        np.testing.assert_array_equal(a.assignments, b.assignments)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_row_permutation_invariance(self, rng):
        x = rng.normal(size=(40, 12)) + rng.integers(0, 4, size=(40, 1)) * 1.5
        ids = tuple(f"child{i}" for i in range(40))
        m1 = make_matrix(x, ids=ids)
        perm = rng.permutation(40)
        m2 = make_matrix(x[perm], ids=tuple(ids[i] for i in perm))
        a = kmeans_fit(m1, KMeansConfig(k=4, seed=5))
        b = kmeans_fit(m2, KMeansConfig(k=4, seed=5))
        np.testing.assert_array_equal(a.assignments[perm], b.assignments)
        np.testing.assert_array_equal(np.sort(a.centroids, axis=0), np.sort(b.centroids, axis=0))
        assert a.inertia == b.inertia


class TestAssignPoint:
    def setup_method(self):
        x = np.vstack([np.full((3, 12), v) for v in (0.0, 2.0, 10.0)])
        self.model = kmeans_fit(make_matrix(x), KMeansConfig(k=3))

    def test_exact_hit(self):
        c = self.model.centroids
        for j in range(3):
            assert assign_point(c[j], self.model) == j

    def test_tie_goes_to_lowest(self):
        c = self.model.centroids
        lo, hi = sorted(range(3), key=lambda j: c[j, 0])[:2]
        mid = (c[lo] + c[hi]) / 2
        assert assign_point(mid, self.model) == min(lo, hi)

    def test_matches_linear_scan(self, rng):
        for _ in range(50):
            p = rng.normal(4, 4, size=12)
            scan = min(range(3), key=lambda j: (sum((p - self.model.centroids[j]) ** 2), j))
            assert assign_point(p, self.model) == scan

    def test_mahalanobis_requires_covariance(self, rng):
        x = rng.normal(size=(30, 12))
        model = kmeans_fit(make_matrix(x), KMeansConfig(k=2, metric="mahalanobis"))
        with pytest.raises(DataError):
            assign_point(x[0], model)
        j = assign_point(x[0], model, model.covariance)
        d = [mahalanobis_sq(x[0], c, model.covariance) for c in model.centroids]
        assert j == int(np.argmin(d))

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            assign_point(np.zeros(5), self.model)


def test_json_round_trip(rng):
    x = rng.normal(size=(20, 12))
    m = make_matrix(x)
    model = kmeans_fit(m, KMeansConfig(k=3, seed=4))
    back = model_from_dict(model_to_dict(model))
    np.testing.assert_array_equal(back.centroids, model.centroids)
    np.testing.assert_array_equal(back.assignments, model.assignments)
    assert back.child_ids == m.child_ids
    assert objective(x, back) == pytest.approx(model.inertia, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_never_worse_than_brute_force(n, seed):
    x = np.random.default_rng(seed).normal(size=(n, 3))
    model = kmeans_fit(x, KMeansConfig(k=2, seed=seed))
    assert model.inertia >= brute_force_2means(x) - 1e-9
