"""Threshold linking, transitive closure and constrained single linkage."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .core import Clustering, DataValidationError, Tracklet, relabel_first_appearance
from .rank1 import PairScoreTable


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n
        self.n_sets = n

    def find(self, a: int) -> int:
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.n_sets -= 1
        return True

    def labels(self) -> np.ndarray:
        return relabel_first_appearance([self.find(i) for i in range(len(self.parent))])


@dataclass(frozen=True)
class MergeTrace:
    """Merges in order; each step is ``(kept_cluster, absorbed_cluster, dissimilarity)``.

    Cluster ids are the smallest original item index in the cluster.
    """

    steps: tuple = ()

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    @property
    def dissimilarities(self) -> np.ndarray:
        return np.array([d for _, _, d in self.steps])


class DissimilarityMatrix:
    """Symmetric ``n x n`` dissimilarities; ``inf`` marks a do-not-link pair."""

    def __init__(self, d, constraints: Iterable = ()):
        d = np.array(d, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise DataValidationError(f"dissimilarity matrix must be square, got {d.shape}")
        if not np.allclose(d, d.T, rtol=0, atol=0, equal_nan=False):
            raise DataValidationError("dissimilarity matrix must be symmetric")
        if np.isnan(d).any() or (d < 0).any():
            raise DataValidationError("dissimilarities must be non-negative numbers")
        cons = normalize_constraints(constraints, d.shape[0])
        for i, j in cons:
            d[i, j] = d[j, i] = np.inf
        np.fill_diagonal(d, 0.0)
        d.setflags(write=False)
        self.d = d
        self.constraints = cons

    @property
    def n_items(self) -> int:
        return self.d.shape[0]


def normalize_constraints(pairs: Iterable, n: Optional[int] = None) -> frozenset:
    out = set()
    for p in pairs:
        i, j = (int(v) for v in p)
        if i == j:
            raise DataValidationError(f"constraint ({i}, {j}) links an item to itself")
        if n is not None and not (0 <= i < n and 0 <= j < n):
            raise DataValidationError(f"constraint ({i}, {j}) out of range for {n} items")
        out.add((min(i, j), max(i, j)))
    return frozenset(out)


def scores_to_dissimilarity(table: PairScoreTable, f: float, constraints: Iterable = ()) -> DissimilarityMatrix:
    """``d = f - score``; constrained pairs become ``inf``."""
    if table.scores.size and (table.scores.min() < 0 or table.scores.max() > f):
        raise DataValidationError(f"scores must lie in [0, {f}]")
    sq = table.square(diagonal=f)
    return DissimilarityMatrix(f - sq, constraints)


def constraints_from_tracklets(tracklets: Sequence[Tracklet]) -> frozenset:
    """Pairs of tracklet positions whose frame ranges intersect."""
    starts = np.array([t.start for t in tracklets])
    ends = np.array([t.end for t in tracklets])
    overlap = (starts[:, None] <= ends[None, :]) & (starts[None, :] <= ends[:, None])
    ii, jj = np.nonzero(np.triu(overlap, k=1))
    return frozenset(zip(ii.tolist(), jj.tolist()))


def constraints_from_frames(frames: Sequence[int]) -> frozenset:
    """Do-not-link pairs for per-image inputs: items sharing a frame id."""
    by_frame: dict = {}
    for i, f in enumerate(frames):
        by_frame.setdefault(f, []).append(i)
    out = set()
    for members in by_frame.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                out.add((members[a], members[b]))
    return frozenset(out)


def _merge_rows(d: np.ndarray, i: int, j: int) -> None:
    """Fold cluster ``j`` into ``i`` under the constraint-preserving min rule."""
    a, b = d[i], d[j]
    merged = np.where(np.isinf(a) | np.isinf(b), np.inf, np.minimum(a, b))
    d[i, :] = merged
    d[:, i] = merged
    d[j, :] = np.inf
    d[:, j] = np.inf
    d[i, i] = np.inf


def _linkage_naive(d: np.ndarray, threshold: float):
    n = d.shape[0]
    labels = np.arange(n)
    steps = []
    iu = np.triu_indices(n, k=1)
    while True:
        flat = d[iu]
        k = int(np.argmin(flat)) if flat.size else 0
        if not flat.size or not flat[k] < threshold:
            break
        i, j = int(iu[0][k]), int(iu[1][k])
        steps.append((i, j, float(flat[k])))
        labels[labels == j] = i
        _merge_rows(d, i, j)
    return labels, steps


def _linkage_fast(d: np.ndarray, threshold: float):
    # cached per-row nearest neighbour; rows are refreshed only when stale
    n = d.shape[0]
    labels = np.arange(n)
    steps = []
    nn = np.argmin(d, axis=1)
    nn_d = d[np.arange(n), nn]
    while n > 1:
        i = int(np.argmin(nn_d))
        dist = nn_d[i]
        if not dist < threshold:
            break
        j = int(nn[i])
        if j < i:
            i, j = j, i
        steps.append((i, j, float(dist)))
        labels[labels == j] = i
        _merge_rows(d, i, j)
        nn_d[j] = np.inf
        nn[i] = int(np.argmin(d[i]))
        nn_d[i] = d[i, nn[i]]
        col = d[:, i]
        stale = (nn == i) | (nn == j)
        stale[i] = stale[j] = False
        closer = (col < nn_d) | ((col == nn_d) & (i < nn))
        closer[i] = closer[j] = False
        upd = closer & ~stale
        nn[upd] = i
        nn_d[upd] = col[upd]
        for k in np.nonzero(stale)[0]:
            nn[k] = int(np.argmin(d[k]))
            nn_d[k] = d[k, nn[k]]
    return labels, steps


def constrained_single_linkage(dis: DissimilarityMatrix, join_threshold: float,
                               method: str = "fast"):
    """Single-linkage agglomeration honoring do-not-link constraints.

    Repeatedly merges the closest pair of clusters with dissimilarity below
    ``join_threshold``; ties go to the lexicographically smallest
    ``(i, j)``. After folding ``j`` into ``i``,
    ``d(i, k) = min(d(i, k), d(j, k))`` unless either side is ``inf``, in
    which case the merged row keeps ``inf``.

    ``method='naive'`` rescans the full matrix every step (O(n^3)) and is
    kept as a reference for ``'fast'``, which caches each row's nearest
    neighbour.

    Returns
    -------
    clustering : Clustering
    trace : MergeTrace
    """
    if not np.isfinite(join_threshold):
        raise ValueError("join_threshold must be finite")
    d = np.array(dis.d, dtype=np.float64)
    np.fill_diagonal(d, np.inf)
    if method == "naive":
        labels, steps = _linkage_naive(d, join_threshold)
    elif method == "fast":
        labels, steps = _linkage_fast(d, join_threshold)
    else:
        raise ValueError(f"unknown linkage method {method!r}")
    clustering = Clustering(relabel_first_appearance(labels), dis.constraints)
    return clustering, MergeTrace(tuple(steps))


def transitive_closure(table: PairScoreTable, link_threshold: float) -> Clustering:
    """Connected components of the graph linking pairs with ``score > link_threshold``."""
    uf = UnionFind(table.n_items)
    ii, jj = table.pairs()
    for k in np.nonzero(table.scores > link_threshold)[0]:
        uf.union(int(ii[k]), int(jj[k]))
    return Clustering(uf.labels())


def read_constraints(path) -> frozenset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames)[:2] != ["i", "j"]:
            raise DataValidationError(f"{path}: expected header i,j")
        try:
            return normalize_constraints((int(r["i"]), int(r["j"])) for r in reader)
        except (TypeError, ValueError):
            raise DataValidationError(f"{path}: malformed constraint row") from None


def write_constraints(path, constraints) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("i,j\n")
        for i, j in sorted(constraints):
            fh.write(f"{i},{j}\n")


def write_clusters(path, labels) -> None:
    labels = relabel_first_appearance(labels)
    with open(path, "w", newline="") as fh:
        fh.write("item_index,cluster_id\n")
        for i, c in enumerate(labels):
            fh.write(f"{i},{c}\n")


def read_clusters(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames)[:2] != ["item_index", "cluster_id"]:
            raise DataValidationError(f"{path}: expected header item_index,cluster_id")
        try:
            return {int(r["item_index"]): int(r["cluster_id"]) for r in reader}
        except (TypeError, ValueError):
            raise DataValidationError(f"{path}: malformed cluster row") from None


# --------------------------------------------------------------------------


class ERClustering(ClusterMixin, BaseEstimator):
    """Link pairs whose score exceeds a threshold and close under transitivity,
    without ever joining a do-not-link pair.

    Parameters
    ----------
    threshold : float or 'auto'
        Link rule is ``score > threshold``. ``'auto'`` calibrates it with
        :class:`erclust.ThresholdCalibrator` against ``reference``.
    reference : CountHistogram, optional
        Mismatched-pair reference, required for ``threshold='auto'``.
    target_fpr : float
    bin_width : float
    n_dims : float, optional
        Maximal score ``F``; defaults to the table's ``n_dims`` or the
        largest score seen.
    method : {'fast', 'naive'}

    Attributes
    ----------
    labels_ : ndarray of shape (n_items,)
    threshold_ : float
    merge_trace_ : MergeTrace
    clustering_ : Clustering
    calibrator_ : ThresholdCalibrator or None
    """

    def __init__(self, threshold="auto", reference=None, target_fpr=1e-6, bin_width=1.0,
                 n_dims=None, method="fast"):
        self.threshold = threshold
        self.reference = reference
        self.target_fpr = target_fpr
        self.bin_width = bin_width
        self.n_dims = n_dims
        self.method = method

    def fit(self, X, y=None, constraints=()):
        """``X`` is a :class:`PairScoreTable` or a square score matrix."""
        if isinstance(X, PairScoreTable):
            table = X
        else:
            X = np.asarray(X, dtype=np.float64)
            if X.ndim != 2 or X.shape[0] != X.shape[1]:
                raise DataValidationError("expected a square score matrix")
            if not np.allclose(X, X.T):
                raise DataValidationError("score matrix must be symmetric")
            table = PairScoreTable.from_square(X)
        F = self.n_dims if self.n_dims is not None else table.n_dims
        if F is None:
            F = float(np.max(X)) if not isinstance(X, PairScoreTable) else float(table.scores.max())
        self.calibrator_ = None
        if isinstance(self.threshold, str):
            if self.threshold != "auto":
                raise ValueError(f"threshold must be a number or 'auto', got {self.threshold!r}")
            from .calibration import ThresholdCalibrator

            self.calibrator_ = ThresholdCalibrator(
                self.reference, self.target_fpr, self.bin_width, F
            ).fit(table)
            self.threshold_ = self.calibrator_.threshold_
        else:
            self.threshold_ = float(self.threshold)
        dis = scores_to_dissimilarity(table, F, constraints)
        self.clustering_, self.merge_trace_ = constrained_single_linkage(
            dis, F - self.threshold_, self.method
        )
        self.labels_ = np.asarray(self.clustering_.labels)
        self.n_features_in_ = table.n_items
        return self

    def fit_predict(self, X, y=None, constraints=()):
        return self.fit(X, constraints=constraints).labels_

    @property
    def n_clusters_(self) -> int:
        check_is_fitted(self, "labels_")
        return int(self.labels_.max()) + 1
