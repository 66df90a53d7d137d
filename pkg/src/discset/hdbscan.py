"""
Hierarchical density based clustering of the 2D transformed poles, written out stage by stage:

core distances -> mutual reachability -> minimum spanning tree -> single linkage hierarchy -> condensed tree ->
stability based cluster selection.

Every stage is deterministic. MST edges are ordered by the key (weight, lower endpoint, higher endpoint), which makes
the spanning tree unique, so the Boruvka and Prim builders return the same edges.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

NOISE = -1
LAMBDA_FLOOR_DISTANCE = 1e-12
SELECTIONS = ("eom", "leaf")
MST_ALGORITHMS = ("boruvka", "prim")

# Relative slack on KD-tree distances so tree rounding never prunes a true candidate.
SLACK = 1e-9
BORUVKA_NEIGHBOURS = 32


##################
# Core distances #
##################


def core_distances(points: np.ndarray, k: int) -> np.ndarray:
    """
    Distance from each point to its k-th nearest neighbour, the point itself not counted.

    :param points: (n, d) coordinates.
    :param k: min_samples.
    :return: (n,) core distances.
    """
    points = _as_points(points)
    n = points.shape[0]
    if k < 1:
        raise ValueError("min_samples must be at least 1.")
    if n <= k:
        raise ValueError(f"Need more than {k} points for core distances, got {n}.")
    distances, _ = cKDTree(points).query(points, k=k + 1, workers=-1)
    # Self sits at distance 0, so column k is the k-th other point even with duplicates.
    return distances[:, k]


def mutual_reachability(a: int, b: int, d_ab: float, cores: np.ndarray) -> float:
    """max(d(a, b), core(a), core(b))"""
    return float(max(d_ab, cores[a], cores[b]))


def _as_points(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points.reshape(-1, 1) if points.ndim == 1 else points


def _mreach(points: np.ndarray, cores: np.ndarray, a, b) -> np.ndarray:
    """Mutual reachability for index arrays a, b (broadcast). Both MST builders use this exact expression."""
    diff = points[a] - points[b]
    distance = np.sqrt((diff**2).sum(axis=-1))
    return np.maximum(distance, np.maximum(cores[a], cores[b]))


#################
# Spanning tree #
#################


def _sort_edges(lo: np.ndarray, hi: np.ndarray, weight: np.ndarray) -> np.ndarray:
    order = np.lexsort((hi, lo, weight))
    return np.column_stack([lo[order], hi[order], weight[order]])


def _min_key(weight: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> int:
    """Position of the smallest (weight, lo, hi) key."""
    return int(np.lexsort((hi, lo, weight))[0])


def _prim_mst(points: np.ndarray, cores: np.ndarray) -> np.ndarray:
    """Dense Prim over on-the-fly mutual reachability. O(n^2) time, O(n) memory."""
    n = points.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best_weight = np.full(n, np.inf)
    best_from = np.full(n, -1, dtype=np.intp)
    all_points = np.arange(n)
    lo_out, hi_out, weight_out = [], [], []

    current = 0
    in_tree[0] = True
    for _ in range(n - 1):
        weight = _mreach(points, cores, current, all_points)
        new_lo = np.minimum(current, all_points)
        new_hi = np.maximum(current, all_points)
        old_lo = np.minimum(best_from, all_points)
        old_hi = np.maximum(best_from, all_points)
        better = (weight < best_weight) | (
            (weight == best_weight) & ((new_lo < old_lo) | ((new_lo == old_lo) & (new_hi < old_hi)))
        )
        better &= ~in_tree
        best_weight[better] = weight[better]
        best_from[better] = current

        outside = np.flatnonzero(~in_tree)
        lo = np.minimum(best_from[outside], outside)
        hi = np.maximum(best_from[outside], outside)
        pick = _min_key(best_weight[outside], lo, hi)
        current = outside[pick]
        lo_out.append(lo[pick])
        hi_out.append(hi[pick])
        weight_out.append(best_weight[current])
        in_tree[current] = True

    return _sort_edges(np.array(lo_out, dtype=np.intp), np.array(hi_out, dtype=np.intp), np.array(weight_out))


class _BoruvkaSearch:
    """
    Exact Boruvka over mutual reachability using KD-trees.

    Each round, every component picks its cheapest outgoing edge. A global k-nearest-neighbour table answers most
    components at once; a component is only searched exhaustively (against a tree of the points outside it) when the
    table cannot prove its candidate is the cheapest.
    """

    def __init__(self, points: np.ndarray, cores: np.ndarray, neighbours: int = BORUVKA_NEIGHBOURS):
        self.points = points
        self.cores = cores
        self.n = points.shape[0]
        k = min(neighbours, self.n - 1)

        distances, self.knn = cKDTree(points).query(points, k=k + 1, workers=-1)
        rows = np.arange(self.n)[:, None]
        self.knn_weight = _mreach(points, cores, rows, self.knn)
        self.knn_lo = np.minimum(rows, self.knn)
        self.knn_hi = np.maximum(rows, self.knn)
        if k + 1 < self.n:
            self.unseen_bound = np.maximum(distances[:, -1] * (1.0 - SLACK), cores)
        else:
            self.unseen_bound = np.full(self.n, np.inf)

        self.x_order = np.argsort(points[:, 0], kind="stable")
        self.x_sorted = points[self.x_order, 0]

    def run(self) -> np.ndarray:
        lo_edges, hi_edges, weight_edges = [], [], []
        labels = np.arange(self.n)
        n_components = self.n
        rounds = 0
        while n_components > 1:
            rounds += 1
            lo, hi, weight = self._round(labels, n_components)
            lo_edges.append(lo)
            hi_edges.append(hi)
            weight_edges.append(weight)

            all_lo = np.concatenate(lo_edges)
            all_hi = np.concatenate(hi_edges)
            graph = coo_matrix((np.ones(all_lo.size), (all_lo, all_hi)), shape=(self.n, self.n))
            n_components, labels = connected_components(graph, directed=False)
            logging.debug("Boruvka round %s: %s components left.", rounds, n_components)

        if not lo_edges:
            return np.empty((0, 3))
        return _sort_edges(np.concatenate(lo_edges), np.concatenate(hi_edges), np.concatenate(weight_edges))

    def _round(self, labels: np.ndarray, n_components: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # Cheapest foreign edge per point among its table neighbours.
        foreign = labels[self.knn] != labels[:, None]
        weight = np.where(foreign, self.knn_weight, np.inf)
        row_min = weight.min(axis=1)
        tie = foreign & (weight == row_min[:, None])
        pair_key = np.where(tie, self.knn_lo * self.n + self.knn_hi, np.iinfo(np.int64).max)
        col = pair_key.argmin(axis=1)
        rows = np.arange(self.n)
        point_lo = self.knn_lo[rows, col]
        point_hi = self.knn_hi[rows, col]

        # Cheapest per component.
        order = np.lexsort((point_hi, point_lo, row_min, labels))
        first = order[np.unique(labels[order], return_index=True)[1]]
        comp_weight = row_min[first]
        comp_lo = point_lo[first]
        comp_hi = point_hi[first]

        comp_bound = np.full(n_components, np.inf)
        np.minimum.at(comp_bound, labels, self.unseen_bound)
        unresolved = np.flatnonzero(~(comp_bound > comp_weight))

        if unresolved.size:
            members_by_label = np.split(np.argsort(labels, kind="stable"), np.cumsum(np.bincount(labels))[:-1])
            for c in unresolved:
                comp_weight[c], comp_lo[c], comp_hi[c] = self._exact_edge(
                    members_by_label[c], labels, c, (comp_weight[c], comp_lo[c], comp_hi[c])
                )

        # Two components can pick the same edge.
        edges = np.unique(np.column_stack([comp_lo, comp_hi]), axis=0, return_index=True)[1]
        return comp_lo[edges], comp_hi[edges], comp_weight[edges]

    def _exact_edge(self, members: np.ndarray, labels: np.ndarray, label: int, best: tuple) -> tuple:
        best_weight, best_lo, best_hi = best
        if np.isfinite(best_weight):
            reach = best_weight * (1.0 + SLACK)
            start = np.searchsorted(self.x_sorted, self.points[members, 0].min() - reach, side="left")
            stop = np.searchsorted(self.x_sorted, self.points[members, 0].max() + reach, side="right")
            window = self.x_order[start:stop]
            candidates = np.sort(window[labels[window] != label])
        else:
            candidates = np.flatnonzero(labels != label)

        tree = cKDTree(self.points[candidates])
        active = members
        k = 8
        while active.size:
            k = min(k, candidates.size)
            distances, found = tree.query(self.points[active], k=k)
            distances = distances.reshape(active.size, k)
            others = candidates[found.reshape(active.size, k)]
            owners = np.broadcast_to(active[:, None], others.shape)

            weight = _mreach(self.points, self.cores, owners, others).ravel()
            lo = np.minimum(owners, others).ravel()
            hi = np.maximum(owners, others).ravel()
            pick = _min_key(weight, lo, hi)
            if (weight[pick], lo[pick], hi[pick]) < (best_weight, best_lo, best_hi):
                best_weight, best_lo, best_hi = weight[pick], lo[pick], hi[pick]

            if k == candidates.size:
                break
            bound = np.maximum(distances[:, -1] * (1.0 - SLACK), self.cores[active])
            active = active[bound <= best_weight]
            k *= 2

        return best_weight, best_lo, best_hi


def build_mst(points: np.ndarray, cores: np.ndarray, algorithm: str = "boruvka") -> np.ndarray:
    """
    Minimum spanning tree of the mutual reachability graph.

    :param points: (n, d) coordinates, n >= 2.
    :param cores: core distances of `points`.
    :param algorithm: 'boruvka' (KD-tree accelerated) or 'prim' (dense reference). Both return identical edges.
    :return: (n - 1, 3) array of (lower endpoint, higher endpoint, weight), sorted by that key.
    """
    points = _as_points(points)
    cores = np.asarray(cores, dtype=np.float64)
    if points.shape[0] < 2:
        raise ValueError("A spanning tree needs at least 2 points.")
    if algorithm == "prim":
        return _prim_mst(points, cores)
    if algorithm == "boruvka":
        return _BoruvkaSearch(points, cores).run()
    raise ValueError(f"Unknown MST algorithm '{algorithm}', expected one of {MST_ALGORITHMS}.")


#############
# Hierarchy #
#############


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(2 * n - 1)
        self.size = np.concatenate([np.ones(n, dtype=np.intp), np.zeros(n - 1, dtype=np.intp)])
        self.next_label = n

    def union(self, m: int, n: int) -> None:
        self.size[self.next_label] = self.size[m] + self.size[n]
        self.parent[m] = self.next_label
        self.parent[n] = self.next_label
        self.next_label += 1

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root


def build_hierarchy(mst: np.ndarray) -> np.ndarray:
    """
    Single linkage dendrogram from the MST, in scipy linkage layout.

    :param mst: sorted edges from build_mst.
    :return: (n - 1, 4) array, row i = (left id, right id, weight, merged size); merge i creates id n + i.
    """
    mst = np.asarray(mst, dtype=np.float64).reshape(-1, 3)
    n = mst.shape[0] + 1
    order = np.lexsort((mst[:, 1], mst[:, 0], mst[:, 2]))
    union_find = _UnionFind(n)
    hierarchy = np.zeros((n - 1, 4))
    for row, (a, b, weight) in enumerate(mst[order]):
        left = union_find.find(int(a))
        right = union_find.find(int(b))
        left, right = min(left, right), max(left, right)
        union_find.union(left, right)
        hierarchy[row] = (left, right, weight, union_find.size[n + row])
    return hierarchy


##################
# Condensed tree #
##################


@dataclass
class CondensedTree:
    """
    Hierarchy after pruning by minimum cluster size.

    Rows (parent, child, lambda_val, child_size): a child < n_points is a point falling out of its parent cluster at
    lambda_val; a child >= n_points is a new cluster born at lambda_val. The root cluster is n_points.
    """

    parent: np.ndarray
    child: np.ndarray
    lambda_val: np.ndarray
    child_size: np.ndarray
    n_points: int

    @property
    def root(self) -> int:
        return self.n_points

    @property
    def cluster_rows(self) -> np.ndarray:
        return self.child >= self.n_points

    def cluster_ids(self) -> np.ndarray:
        return np.unique(np.concatenate([[self.root], self.child[self.cluster_rows]]))

    def birth_lambdas(self) -> dict[int, float]:
        births = {self.root: 0.0}
        rows = self.cluster_rows
        births.update(zip(self.child[rows].tolist(), self.lambda_val[rows].tolist(), strict=True))
        return births

    def stabilities(self) -> dict[int, float]:
        """Sum over rows of a cluster of (lambda_val - lambda_birth) * child_size."""
        clusters = self.cluster_ids()
        births = self.birth_lambdas()
        offset = self.root
        birth = np.array([births[c] for c in clusters])
        lookup = np.full(clusters.max() - offset + 1, -1, dtype=np.intp)
        lookup[clusters - offset] = np.arange(clusters.size)
        position = lookup[self.parent - offset]
        totals = np.zeros(clusters.size)
        np.add.at(totals, position, (self.lambda_val - birth[position]) * self.child_size)
        return dict(zip(clusters.tolist(), totals.tolist(), strict=True))

    def children_map(self) -> dict[int, list[int]]:
        tree = {c: [] for c in self.cluster_ids().tolist()}
        rows = self.cluster_rows
        for parent, child in zip(self.parent[rows].tolist(), self.child[rows].tolist(), strict=True):
            tree[parent].append(child)
        return tree

    def parents(self) -> dict[int, int]:
        rows = self.cluster_rows
        return dict(zip(self.child[rows].tolist(), self.parent[rows].tolist(), strict=True))

    def clusters(self) -> pd.DataFrame:
        """One row per cluster: cluster, parent, lambda_birth, lambda_death, size, stability."""
        ids = self.cluster_ids()
        births = self.birth_lambdas()
        parents = self.parents()
        stabilities = self.stabilities()
        records = []
        for c in ids.tolist():
            rows = self.parent == c
            records.append(
                {
                    "cluster": c,
                    "parent": parents.get(c, NOISE),
                    "lambda_birth": births[c],
                    "lambda_death": float(self.lambda_val[rows].max()) if rows.any() else births[c],
                    "size": int(self.child_size[rows].sum()),
                    "stability": stabilities[c],
                }
            )
        return pd.DataFrame.from_records(records)

    def to_dict(self) -> dict:
        return {
            "n_points": self.n_points,
            "root": self.root,
            "clusters": self.clusters().to_dict(orient="records"),
            "parent": self.parent.tolist(),
            "child": self.child.tolist(),
            "lambda_val": self.lambda_val.tolist(),
            "child_size": self.child_size.tolist(),
        }


def _bfs_from_hierarchy(hierarchy: np.ndarray, root: int, n: int) -> list[int]:
    result = []
    to_process = [root]
    while to_process:
        result.extend(to_process)
        internal = [x - n for x in to_process if x >= n]
        to_process = hierarchy[internal, :2].astype(np.intp).ravel().tolist() if internal else []
    return result


def _lambda(weight: float) -> float:
    return 1.0 / max(weight, LAMBDA_FLOOR_DISTANCE)


def condense_tree(hierarchy: np.ndarray, min_cluster_size: int) -> CondensedTree:
    """
    Walk the dendrogram top-down. A split where both sides hold at least min_cluster_size points makes two new
    clusters; otherwise the points of each undersized side fall out of the parent at lambda = 1 / weight.

    :param hierarchy: output of build_hierarchy.
    :param min_cluster_size: at least 2.
    :return: CondensedTree.
    """
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be at least 2.")
    hierarchy = np.asarray(hierarchy, dtype=np.float64).reshape(-1, 4)
    n = hierarchy.shape[0] + 1
    root = 2 * n - 2

    if n == 1:
        return CondensedTree(np.array([1]), np.array([0]), np.array([0.0]), np.array([1]), 1)

    relabel = np.zeros(root + 1, dtype=np.intp)
    relabel[root] = n
    next_label = n + 1
    ignore = np.zeros(root + 1, dtype=bool)
    rows: list[tuple[int, int, float, int]] = []

    def size_of(node: int) -> int:
        return 1 if node < n else int(hierarchy[node - n, 3])

    def fall_out(subtree_root: int, parent_label: int, lam: float) -> None:
        for sub in _bfs_from_hierarchy(hierarchy, subtree_root, n):
            if sub < n:
                rows.append((parent_label, sub, lam, 1))
            ignore[sub] = True

    for node in _bfs_from_hierarchy(hierarchy, root, n):
        if node < n or ignore[node]:
            continue
        left, right, weight, _ = hierarchy[node - n]
        left, right = int(left), int(right)
        lam = _lambda(weight)
        left_count, right_count = size_of(left), size_of(right)
        parent_label = int(relabel[node])

        if left_count >= min_cluster_size and right_count >= min_cluster_size:
            for side, count in ((left, left_count), (right, right_count)):
                relabel[side] = next_label
                rows.append((parent_label, next_label, lam, count))
                next_label += 1
        elif left_count < min_cluster_size and right_count < min_cluster_size:
            fall_out(left, parent_label, lam)
            fall_out(right, parent_label, lam)
        elif left_count < min_cluster_size:
            relabel[right] = parent_label
            fall_out(left, parent_label, lam)
        else:
            relabel[left] = parent_label
            fall_out(right, parent_label, lam)

    table = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return CondensedTree(
        parent=table[:, 0].astype(np.intp),
        child=table[:, 1].astype(np.intp),
        lambda_val=table[:, 2],
        child_size=table[:, 3].astype(np.intp),
        n_points=n,
    )


#####################
# Cluster selection #
#####################


def select_clusters(condensed: CondensedTree, selection: str = "eom") -> list[int]:
    """
    Pick the clusters to report. 'eom' keeps a cluster only when its stability beats the summed stability of its
    selected descendants (ties go to the descendants); 'leaf' keeps the leaves. The root is never selected.
    """
    if selection not in SELECTIONS:
        raise ValueError(f"Unknown cluster selection '{selection}', expected one of {SELECTIONS}.")
    clusters = [c for c in condensed.cluster_ids().tolist() if c != condensed.root]
    if not clusters:
        return []

    children = condensed.children_map()
    if selection == "leaf":
        return sorted(c for c in clusters if not children[c])

    stability = condensed.stabilities()
    is_selected = dict.fromkeys(clusters, True)
    # Children always carry larger ids than their parent.
    for cluster in sorted(clusters, reverse=True):
        subtree = sum(stability[child] for child in children[cluster])
        if stability[cluster] > subtree:
            for descendant in _descendants(children, cluster):
                is_selected[descendant] = False
        else:
            is_selected[cluster] = False
            stability[cluster] = subtree
    return sorted(c for c, selected in is_selected.items() if selected)


def _descendants(children: dict[int, list[int]], cluster: int) -> list[int]:
    found = []
    to_visit = list(children[cluster])
    while to_visit:
        current = to_visit.pop()
        found.append(current)
        to_visit.extend(children[current])
    return found


def _labels_from_selection(condensed: CondensedTree, selected: list[int]) -> np.ndarray:
    parents = condensed.parents()
    owner: dict[int, int] = {}
    chosen = set(selected)
    for cluster in condensed.cluster_ids().tolist():
        if cluster in chosen:
            owner[cluster] = cluster
        else:
            owner[cluster] = owner.get(parents.get(cluster, NOISE), NOISE)

    labels = np.full(condensed.n_points, NOISE, dtype=np.intp)
    point_rows = ~condensed.cluster_rows
    labels[condensed.child[point_rows]] = [owner[p] for p in condensed.parent[point_rows].tolist()]
    return labels


def renumber_by_size(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters 0..k-1 by descending size; ties go to the cluster holding the lower point index."""
    labels = np.asarray(labels)
    out = np.full(labels.shape, NOISE, dtype=np.intp)
    found = np.unique(labels[labels != NOISE])
    if found.size == 0:
        return out
    sizes = np.array([(labels == c).sum() for c in found])
    first = np.array([np.flatnonzero(labels == c)[0] for c in found])
    for new, position in enumerate(np.lexsort((first, -sizes))):
        out[labels == found[position]] = new
    return out


def extract_clusters(condensed: CondensedTree, selection: str = "eom") -> np.ndarray:
    """
    Per-point labels from the condensed tree: cluster ids renumbered 0..k-1 by size, NOISE (-1) for the rest.
    """
    selected = select_clusters(condensed, selection)
    return renumber_by_size(_labels_from_selection(condensed, selected))


##########
# Driver #
##########


@dataclass
class HdbscanResult:
    """
    Everything one clustering run produces.

    Attributes:
    labels - per-point cluster id (0..k-1, largest first) or NOISE.
    core_distances - per-point core distance.
    mst - sorted spanning tree edges (lo, hi, weight).
    condensed_tree - CondensedTree.
    selected - condensed tree ids of the selected clusters.
    stabilities - stability of every condensed tree cluster.
    """

    labels: np.ndarray
    core_distances: np.ndarray
    mst: np.ndarray
    condensed_tree: CondensedTree
    selected: list[int] = field(default_factory=list)
    stabilities: dict[int, float] = field(default_factory=dict)

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


def fit_hdbscan(
    points: np.ndarray,
    min_cluster_size: int,
    min_samples: int,
    selection: str = "eom",
    mst_algorithm: str = "boruvka",
) -> HdbscanResult:
    """
    Run every clustering stage on `points` and keep the intermediate products.

    :param points: (n, d) coordinates (the transformed poles).
    :param min_cluster_size: smallest reportable cluster.
    :param min_samples: k of the core distance.
    :param selection: 'eom' or 'leaf'.
    :param mst_algorithm: 'boruvka' or 'prim'.
    :return: HdbscanResult.
    """
    points = _as_points(points)
    n = points.shape[0]
    if n < min_samples + 1:
        raise ValueError(f"Clustering needs at least min_samples + 1 = {min_samples + 1} points, got {n}.")

    cores = core_distances(points, min_samples)
    mst = build_mst(points, cores, mst_algorithm)
    hierarchy = build_hierarchy(mst)
    condensed = condense_tree(hierarchy, min_cluster_size)
    selected = select_clusters(condensed, selection)
    labels = renumber_by_size(_labels_from_selection(condensed, selected))

    if not selected and mst.size and np.all(mst[:, 2] == mst[0, 2]) and n >= min_cluster_size:
        # Every point at the same density level (e.g. all identical): one cluster, not all noise.
        logging.info("Flat hierarchy with no persistent split, reporting all %s points as one cluster.", n)
        labels = np.zeros(n, dtype=np.intp)

    result = HdbscanResult(labels, cores, mst, condensed, selected, condensed.stabilities())
    logging.info(
        "HDBSCAN found %s clusters in %s points (%s noise).", result.n_clusters, n, int((labels == NOISE).sum())
    )
    return result


def hdbscan(
    points: np.ndarray,
    min_cluster_size: int,
    min_samples: int,
    selection: str = "eom",
    mst_algorithm: str = "boruvka",
) -> np.ndarray:
    """Cluster labels only; see fit_hdbscan."""
    return fit_hdbscan(points, min_cluster_size, min_samples, selection, mst_algorithm).labels
