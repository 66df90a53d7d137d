import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discset import hdbscan as dh


def brute_core_distances(points, k):
    d = np.linalg.norm(points[:, None] - points[None], axis=-1)
    return np.sort(d, axis=1)[:, k]


def brute_mst_weights(points, cores):
    """Dense Prim over the full mutual reachability matrix; returns the sorted edge weights."""
    diff = points[:, None, :] - points[None, :, :]
    reach = np.maximum(np.sqrt((diff**2).sum(-1)), np.maximum(cores[:, None], cores[None, :]))
    n = points.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = reach[0].copy()
    weights = []
    for _ in range(n - 1):
        j = int(np.argmin(np.where(in_tree, np.inf, best)))
        weights.append(best[j])
        in_tree[j] = True
        best = np.minimum(best, reach[j])
    return np.sort(np.array(weights))


def blobs(sizes, centres, spread=0.02, seed=0):
    rng = np.random.default_rng(seed)
    return np.concatenate([rng.normal(c, spread, size=(s, 2)) for s, c in zip(sizes, centres, strict=True)])


class TestCoreDistances:
    def test_matches_brute_force(self):
        points = np.random.default_rng(0).uniform(-1, 1, size=(200, 2))
        for k in (1, 5, 15):
            assert np.allclose(dh.core_distances(points, k), brute_core_distances(points, k), rtol=1e-12)

    def test_duplicates_give_zero(self):
        points = np.vstack([np.zeros((6, 2)), np.ones((6, 2))])
        assert np.array_equal(dh.core_distances(points, 5), np.zeros(12))

    def test_needs_more_points_than_k(self):
        with pytest.raises(ValueError):
            dh.core_distances(np.zeros((5, 2)), 5)
        with pytest.raises(ValueError):
            dh.core_distances(np.zeros((5, 2)), 0)

    def test_mutual_reachability(self):
        cores = np.array([0.5, 0.1, 2.0])
        assert dh.mutual_reachability(0, 1, 0.3, cores) == 0.5
        assert dh.mutual_reachability(0, 2, 0.3, cores) == 2.0
        assert dh.mutual_reachability(0, 1, 0.9, cores) == 0.9


class TestSpanningTree:
    @pytest.mark.parametrize("seed", range(50))
    def test_weight_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 301))
        points = rng.uniform(-1, 1, size=(n, 2))
        k = int(min(rng.integers(1, 16), n - 1))
        cores = dh.core_distances(points, k)
        mst = dh.build_mst(points, cores)
        expected = brute_mst_weights(points, cores)
        assert mst.shape == (n - 1, 3)
        assert np.array_equal(np.sort(mst[:, 2]), expected), f"Edge weights differ for seed {seed}"
        assert mst[:, 2].sum() == expected.sum()

    @pytest.mark.parametrize("seed", range(10))
    def test_boruvka_equals_prim(self, seed):
        rng = np.random.default_rng(100 + seed)
        points = rng.uniform(-1, 1, size=(250, 2))
        cores = dh.core_distances(points, 8)
        boruvka = dh.build_mst(points, cores, "boruvka")
        prim = dh.build_mst(points, cores, "prim")
        assert np.array_equal(boruvka, prim)

    def test_ties_and_duplicates(self):
        """Grid with repeated points: many equal weights, still one tree for both builders."""
        grid = np.stack(np.meshgrid(np.arange(8.0), np.arange(8.0)), axis=-1).reshape(-1, 2)
        points = np.vstack([grid, grid[:10]])
        cores = dh.core_distances(points, 3)
        boruvka = dh.build_mst(points, cores, "boruvka")
        prim = dh.build_mst(points, cores, "prim")
        assert np.array_equal(boruvka, prim)
        assert np.array_equal(np.sort(boruvka[:, 2]), brute_mst_weights(points, cores))

    def test_edges_sorted_and_spanning(self):
        points = np.random.default_rng(5).uniform(size=(120, 2))
        mst = dh.build_mst(points, dh.core_distances(points, 4))
        keys = list(zip(mst[:, 2], mst[:, 0], mst[:, 1], strict=True))
        assert keys == sorted(keys)
        assert np.all(mst[:, 0] < mst[:, 1])
        hierarchy = dh.build_hierarchy(mst)
        assert (size := hierarchy[-1, 3]) == 120, f"Expected the last merge to hold every point, got {size}"

    def test_unknown_algorithm(self):
        points = np.zeros((3, 2))
        with pytest.raises(ValueError, match="MST algorithm"):
            dh.build_mst(points, np.zeros(3), "kruskal")


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=2, max_value=120), st.integers(min_value=1, max_value=10), st.integers(0, 2**16))
def test_spanning_tree_property(n, k, seed):
    k = min(k, n - 1)
    points = np.round(np.random.default_rng(seed).uniform(0, 1, size=(n, 2)), 2)
    cores = dh.core_distances(points, k)
    assert np.array_equal(np.sort(dh.build_mst(points, cores)[:, 2]), brute_mst_weights(points, cores))


class TestHierarchy:
    def test_merge_ids_and_sizes(self):
        mst = np.array([[0, 1, 1.0], [2, 3, 1.0], [1, 2, 5.0]])
        hierarchy = dh.build_hierarchy(mst)
        expected = np.array([[0, 1, 1.0, 2], [2, 3, 1.0, 2], [4, 5, 5.0, 4]])
        assert np.array_equal(hierarchy, expected), f"Expected {expected}, got {hierarchy}"

    def test_condensed_two_clusters(self):
        mst = np.array([[0, 1, 1.0], [1, 2, 1.0], [3, 4, 1.0], [4, 5, 1.0], [2, 3, 4.0]])
        tree = dh.condense_tree(dh.build_hierarchy(mst), min_cluster_size=3)
        clusters = tree.clusters()
        assert (ids := sorted(clusters["cluster"].tolist())) == [6, 7, 8], f"Expected root 6 and two children, got {ids}"
        assert dh.select_clusters(tree) == [7, 8]
        labels = dh.extract_clusters(tree)
        assert labels.tolist() == [0, 0, 0, 1, 1, 1]

    def test_stability_matches_row_sum(self):
        points = blobs([60, 40], [(0, 0), (1, 1)], seed=3)
        hierarchy = dh.build_hierarchy(dh.build_mst(points, dh.core_distances(points, 5)))
        tree = dh.condense_tree(hierarchy, 10)
        births = tree.birth_lambdas()
        stabilities = tree.stabilities()
        for cluster in tree.cluster_ids().tolist():
            rows = tree.parent == cluster
            expected = float(((tree.lambda_val[rows] - births[cluster]) * tree.child_size[rows]).sum())
            assert stabilities[cluster] == pytest.approx(expected)

    def test_min_cluster_size_checked(self):
        with pytest.raises(ValueError):
            dh.condense_tree(np.zeros((1, 4)), 1)

    def test_condensed_to_dict(self):
        points = blobs([30, 30], [(0, 0), (1, 0)])
        result = dh.fit_hdbscan(points, 10, 5)
        tree = result.condensed_tree.to_dict()
        assert set(tree) == {"n_points", "root", "clusters", "parent", "child", "lambda_val", "child_size"}
        assert tree["n_points"] == 60


class TestFitHdbscan:
    def test_separated_blobs(self):
        points = blobs([300, 200, 100], [(0, 0), (1, 0), (0, 1)])
        result = dh.fit_hdbscan(points, min_cluster_size=50, min_samples=10)
        assert (k := result.n_clusters) == 3, f"Expected 3 clusters, got {k}"
        # renumbered by size: the 300-point blob is cluster 0
        assert np.all(result.labels[:300] == 0)
        assert np.all(result.labels[300:500] == 1)
        assert np.all(result.labels[500:] == 2)

    @pytest.mark.parametrize("seed", range(3))
    def test_input_order_does_not_change_partition(self, seed):
        points = blobs([300, 200, 100], [(0, 0), (1, 0), (0, 1)], seed=seed)
        labels = dh.hdbscan(points, min_cluster_size=50, min_samples=10)
        order = np.random.default_rng(seed + 10).permutation(points.shape[0])
        shuffled = dh.hdbscan(points[order], min_cluster_size=50, min_samples=10)
        assert np.array_equal(shuffled, labels[order]), f"Partition changed after shuffling (seed {seed})"

    def test_larger_min_cluster_size_never_adds_clusters(self):
        points = blobs([300, 200, 100], [(0, 0), (1, 0), (0, 1)])
        sizes = (50, 120, 180, 250, 400)
        counts = [dh.fit_hdbscan(points, min_cluster_size=m, min_samples=10).n_clusters for m in sizes]
        print(f"\nClusters per min_cluster_size: {counts}")
        assert counts == sorted(counts, reverse=True), f"Cluster counts {counts} increase somewhere"
        assert counts[0] == 3
        assert counts[-1] == 0

    def test_uniform_noise_with_large_min_cluster_size(self):
        points = np.random.default_rng(8).uniform(0, 1, size=(200, 2))
        result = dh.fit_hdbscan(points, min_cluster_size=150, min_samples=5)
        assert np.all(result.labels == dh.NOISE)
        assert result.n_clusters == 0

    def test_far_points_are_noise(self):
        points = np.vstack([blobs([100, 100], [(0, 0), (1, 1)]), [[5.0, 5.0], [-5.0, 5.0], [5.0, -5.0]]])
        labels = dh.hdbscan(points, min_cluster_size=20, min_samples=5)
        assert np.all(labels[-3:] == dh.NOISE)
        assert set(labels[:200].tolist()) == {0, 1}

    def test_identical_points_are_one_cluster(self):
        result = dh.fit_hdbscan(np.zeros((50, 2)), min_cluster_size=10, min_samples=5)
        assert np.array_equal(result.labels, np.zeros(50))

    def test_leaf_selection(self):
        # two tight pairs of blobs: eom may keep the pairs, leaf always returns the four blobs
        points = blobs([80, 80, 80, 80], [(0, 0), (0.3, 0), (3, 0), (3.3, 0)], spread=0.01)
        labels = dh.hdbscan(points, min_cluster_size=30, min_samples=5, selection="leaf")
        assert len(set(labels.tolist()) - {dh.NOISE}) == 4

    def test_prim_and_boruvka_same_labels(self):
        points = blobs([150, 120], [(0, 0), (0.5, 0.5)], spread=0.05, seed=9)
        a = dh.fit_hdbscan(points, 40, 10, mst_algorithm="boruvka")
        b = dh.fit_hdbscan(points, 40, 10, mst_algorithm="prim")
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.mst, b.mst)

    def test_too_few_points(self):
        with pytest.raises(ValueError, match="min_samples"):
            dh.fit_hdbscan(np.zeros((5, 2)), 2, 5)

    def test_unknown_selection(self):
        points = blobs([30, 30], [(0, 0), (1, 0)])
        tree = dh.fit_hdbscan(points, 10, 5).condensed_tree
        with pytest.raises(ValueError, match="selection"):
            dh.select_clusters(tree, "best")


def test_renumber_by_size_breaks_ties_on_first_index():
    labels = np.array([7, 3, 3, 7, -1, 5, 5, 5])
    assert dh.renumber_by_size(labels).tolist() == [1, 2, 2, 1, -1, 0, 0, 0]
