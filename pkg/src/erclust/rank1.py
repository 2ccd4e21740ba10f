"""Rank-1 counts similarity against a reference gallery.

For a pair of items ``(a, b)`` and feature dimension ``i``, dimension ``i``
is *rank-1* when ``|a_i - b_i|`` is strictly smaller than the distance from
``a_i`` to every gallery value in that dimension. The rank-1 count is the
number of such dimensions. It is directed (anchored at ``a``); the
symmetric score is the max of both directions.

The gallery-averaged variant replaces each indicator by the probability
that a random size-``g_sim`` gallery drawn with replacement from the
super-gallery contains none of the ``K`` super-gallery values closer to
``a_i`` than ``b_i`` is: ``(1 - K / G_super) ** g_sim``.

Two computation paths are provided. The ``*_naive`` functions evaluate the
definition directly and serve as the reference. :func:`rank1_all_pairs_fast`
sorts each dimension once and uses binary search, and must agree with the
naive path exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import (
    DataValidationError,
    FeatureMatrix,
    GallerySet,
    RngSpec,
    Tracklet,
    as_features,
    as_rng,
)

EXACT = "exact_fixed_gallery"
AVERAGED = "averaged_gallery"
_MODE_ALIASES = {"exact": EXACT, EXACT: EXACT, "averaged": AVERAGED, AVERAGED: AVERAGED}

# max number of credited (anchor, target) pairs buffered before a bincount
_CREDIT_CHUNK = 4_000_000


def _mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[mode]
    except KeyError:
        raise ValueError(f"unknown similarity mode {mode!r}") from None


@dataclass(frozen=True)
class SimilarityScore:
    value: float
    mode: str = EXACT

    def __float__(self):
        return float(self.value)

    def __eq__(self, other):
        if isinstance(other, SimilarityScore):
            return self.value == other.value and self.mode == other.mode
        return self.value == other

    def __hash__(self):
        return hash((self.value, self.mode))


class PairScoreTable:
    """Symmetric pair scores in condensed (upper-triangular, row-major) form.

    Pair ``(i, j)`` with ``i < j`` lives at the same offset as in
    :func:`scipy.spatial.distance.squareform`.
    """

    def __init__(self, n_items: int, scores, n_dims: Optional[int] = None, mode: str = EXACT):
        scores = np.asarray(scores, dtype=np.float64).copy()
        if scores.shape != (n_items * (n_items - 1) // 2,):
            raise DataValidationError(
                f"expected {n_items * (n_items - 1) // 2} pair scores for {n_items} items, "
                f"got shape {scores.shape}"
            )
        scores.setflags(write=False)
        self.n_items = int(n_items)
        self.scores = scores
        self.n_dims = n_dims
        self.mode = _mode(mode)

    @classmethod
    def from_square(cls, m, n_dims=None, mode=EXACT) -> "PairScoreTable":
        m = np.asarray(m, dtype=np.float64)
        n = m.shape[0]
        iu = np.triu_indices(n, k=1)
        return cls(n, m[iu], n_dims=n_dims, mode=mode)

    def square(self, diagonal: Optional[float] = None) -> np.ndarray:
        n = self.n_items
        m = np.zeros((n, n))
        iu = np.triu_indices(n, k=1)
        m[iu] = self.scores
        m = m + m.T
        if diagonal is None:
            diagonal = self.n_dims if self.n_dims is not None else 0.0
        np.fill_diagonal(m, diagonal)
        return m

    def pairs(self):
        return np.triu_indices(self.n_items, k=1)

    def _offset(self, i: int, j: int) -> int:
        if i == j:
            raise KeyError("self-pairs are not stored")
        if i > j:
            i, j = j, i
        n = self.n_items
        return n * i - i * (i + 1) // 2 + (j - i - 1)

    def __getitem__(self, ij) -> float:
        return float(self.scores[self._offset(*ij)])

    def __len__(self):
        return len(self.scores)

    def __eq__(self, other):
        return (
            isinstance(other, PairScoreTable)
            and self.n_items == other.n_items
            and np.array_equal(self.scores, other.scores)
        )

    def __repr__(self):
        return f"PairScoreTable(n_items={self.n_items}, n_dims={self.n_dims}, mode={self.mode!r})"

    def to_csv(self, path) -> None:
        ii, jj = self.pairs()
        with open(path, "w", newline="") as fh:
            fh.write("i,j,score\n")
            for i, j, s in zip(ii, jj, self.scores):
                fh.write(f"{i},{j},{s:.17g}\n")

    @classmethod
    def read_csv(cls, path, n_dims=None, mode=EXACT) -> "PairScoreTable":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no such file: {path}")
        entries = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or list(reader.fieldnames)[:3] != ["i", "j", "score"]:
                raise DataValidationError(f"{path}: expected header i,j,score")
            for lineno, row in enumerate(reader, start=2):
                try:
                    i, j, s = int(row["i"]), int(row["j"]), float(row["score"])
                except (TypeError, ValueError):
                    raise DataValidationError(f"{path}: line {lineno}: malformed row") from None
                if i >= j or i < 0:
                    raise DataValidationError(f"{path}: line {lineno}: need 0 <= i < j")
                if not np.isfinite(s):
                    raise DataValidationError(f"{path}: line {lineno}: non-finite score")
                entries[(i, j)] = s
        if not entries:
            raise DataValidationError(f"{path}: empty score table")
        n = max(j for _, j in entries) + 1
        if len(entries) != n * (n - 1) // 2:
            raise DataValidationError(
                f"{path}: {len(entries)} pairs present, a full table for {n} items needs "
                f"{n * (n - 1) // 2}"
            )
        iu = np.triu_indices(n, k=1)
        scores = np.array([entries[(i, j)] for i, j in zip(*iu)])
        return cls(n, scores, n_dims=n_dims, mode=mode)


# --------------------------------------------------------------------------
# naive reference path
# --------------------------------------------------------------------------


def _check_pair(a_idx, b_idx, feats, gal):
    feats = as_features(feats)
    gal.check_compatible(feats)
    for k in (a_idx, b_idx):
        if not 0 <= k < feats.n_items:
            raise IndexError(f"item index {k} out of range for {feats.n_items} items")
    if a_idx == b_idx:
        raise ValueError("a_idx and b_idx must differ")
    return feats


def _directed_exact(a, b, gallery) -> int:
    return int(np.count_nonzero(np.abs(a - b) < np.min(np.abs(a - gallery), axis=0)))


def _directed_averaged(a, b, super_gallery, g_sim) -> float:
    k = np.count_nonzero(np.abs(a - super_gallery) < np.abs(a - b), axis=0)
    return float(np.sum((1.0 - k / super_gallery.shape[0]) ** g_sim))


def rank1_count_naive(a_idx, b_idx, feats, gal: GallerySet) -> SimilarityScore:
    """Directed rank-1 count of ``b`` with respect to anchor ``a``. Ties fail."""
    feats = _check_pair(a_idx, b_idx, feats, gal)
    v = _directed_exact(feats.values[a_idx], feats.values[b_idx], gal.gallery.values)
    return SimilarityScore(float(v), EXACT)


def rank1_count_symmetric(a_idx, b_idx, feats, gal: GallerySet) -> SimilarityScore:
    ab = rank1_count_naive(a_idx, b_idx, feats, gal).value
    ba = rank1_count_naive(b_idx, a_idx, feats, gal).value
    return SimilarityScore(max(ab, ba), EXACT)


def expected_count(f: int, g: int) -> float:
    """Expected directed count for unrelated items: each dimension is rank-1
    with probability ``1 / (g + 1)``."""
    if f < 1 or g < 1:
        raise ValueError(f"need f >= 1 and g >= 1, got f={f}, g={g}")
    return f / (g + 1)


def rank1_prob_averaged(a_idx, b_idx, feats, gal: GallerySet, symmetric: bool = False) -> SimilarityScore:
    """Gallery-averaged rank-1 score, summed over dimensions.

    Anchored at ``a`` unless ``symmetric``, in which case the larger of the
    two directions is returned.
    """
    if gal.super_gallery is None:
        raise DataValidationError("averaged mode requires a super-gallery")
    feats = _check_pair(a_idx, b_idx, feats, gal)
    sg = gal.super_gallery.values
    a, b = feats.values[a_idx], feats.values[b_idx]
    v = _directed_averaged(a, b, sg, gal.g_sim)
    if symmetric:
        v = max(v, _directed_averaged(b, a, sg, gal.g_sim))
    return SimilarityScore(v, AVERAGED)


def rank1_all_pairs_naive(feats, gal: GallerySet, mode: str = "exact") -> PairScoreTable:
    """Double loop over all unordered pairs; the oracle for the fast path."""
    feats = as_features(feats)
    mode = _mode(mode)
    n = feats.n_items
    iu = np.triu_indices(n, k=1)
    if mode == EXACT:
        fn = lambda i, j: rank1_count_symmetric(i, j, feats, gal).value  # noqa: E731
    else:
        fn = lambda i, j: rank1_prob_averaged(i, j, feats, gal, symmetric=True).value  # noqa: E731
    scores = [fn(int(i), int(j)) for i, j in zip(*iu)]
    return PairScoreTable(n, scores, n_dims=feats.n_dims, mode=mode)


# --------------------------------------------------------------------------
# sorted fast path
# --------------------------------------------------------------------------


def _strict_window(sorted_vals, centers, pos, radius):
    """Bounds ``[lo, hi)`` of ``{k : |centers - sorted_vals[k]| < radius}``.

    ``pos`` is ``searchsorted(sorted_vals, centers)``. The window is
    contiguous because rounded ``|c - v|`` is monotone in ``v`` on each side
    of ``c``. Bounds from a plain searchsorted on ``c +/- radius`` can be off
    by rounding, so they are nudged until the exact predicate agrees.
    """
    m = len(sorted_vals)

    def inside(k):
        kk = np.clip(k, 0, m - 1)
        return np.abs(centers - sorted_vals[kk]) < radius

    hi = np.maximum(np.searchsorted(sorted_vals, centers + radius, side="left"), pos)
    while True:
        grow = (hi < m) & inside(hi)
        if not grow.any():
            break
        hi = hi + grow
    while True:
        shrink = (hi > pos) & ~inside(hi - 1)
        if not shrink.any():
            break
        hi = hi - shrink

    lo = np.minimum(np.searchsorted(sorted_vals, centers - radius, side="right"), pos)
    while True:
        grow = (lo > 0) & inside(lo - 1)
        if not grow.any():
            break
        lo = lo - grow
    while True:
        shrink = (lo < pos) & ~inside(lo)
        if not shrink.any():
            break
        lo = lo + shrink
    return lo, hi


def _nearest_gallery_distance(x, sorted_gallery):
    g = len(sorted_gallery)
    p = np.searchsorted(sorted_gallery, x)
    left = sorted_gallery[np.clip(p - 1, 0, g - 1)]
    right = sorted_gallery[np.clip(p, 0, g - 1)]
    return np.minimum(np.abs(x - left), np.abs(x - right))


def _directed_exact_matrix(X: np.ndarray, R: np.ndarray) -> np.ndarray:
    n, f = X.shape
    flat = np.zeros(n * n, dtype=np.int64)
    anchors = np.arange(n)
    buffered, buf_len = [], 0
    for i in range(f):
        x = X[:, i]
        radius = _nearest_gallery_distance(x, np.sort(R[:, i]))
        order = np.argsort(x, kind="stable")
        xs = x[order]
        pos = np.searchsorted(xs, x)
        lo, hi = _strict_window(xs, x, pos, radius)
        lengths = hi - lo
        total = int(lengths.sum())
        if total == 0:
            continue
        starts = np.repeat(lo - np.cumsum(lengths) + lengths, lengths)
        cols = order[starts + np.arange(total)]
        buffered.append(np.repeat(anchors, lengths) * n + cols)
        buf_len += total
        if buf_len >= _CREDIT_CHUNK:
            flat += np.bincount(np.concatenate(buffered), minlength=n * n)
            buffered, buf_len = [], 0
    if buffered:
        flat += np.bincount(np.concatenate(buffered), minlength=n * n)
    m = flat.reshape(n, n)
    np.fill_diagonal(m, 0)
    return m.astype(np.float64)


def _directed_averaged_matrix(X: np.ndarray, S: np.ndarray, g_sim: int) -> np.ndarray:
    n, f = X.shape
    gs = S.shape[0]
    acc = np.zeros((n, n))
    for i in range(f):
        x = X[:, i]
        sg = np.sort(S[:, i])
        centers = np.broadcast_to(x[:, None], (n, n))
        radius = np.abs(x[:, None] - x[None, :])
        pos = np.broadcast_to(np.searchsorted(sg, x)[:, None], (n, n))
        lo, hi = _strict_window(sg, centers, pos, radius)
        acc += (1.0 - (hi - lo) / gs) ** g_sim
    np.fill_diagonal(acc, 0.0)
    return acc


def rank1_directed_matrix(feats, gal: GallerySet, mode: str = "exact") -> np.ndarray:
    """``M[a, b]`` = directed score anchored at ``a``; diagonal is zero."""
    feats = as_features(feats)
    gal.check_compatible(feats)
    mode = _mode(mode)
    if mode == EXACT:
        return _directed_exact_matrix(feats.values, gal.gallery.values)
    if gal.super_gallery is None:
        raise DataValidationError("averaged mode requires a super-gallery")
    return _directed_averaged_matrix(feats.values, gal.super_gallery.values, gal.g_sim)


def rank1_all_pairs_fast(feats, gal: GallerySet, mode: str = "exact") -> PairScoreTable:
    """All symmetric pair scores via per-dimension sorting."""
    feats = as_features(feats)
    if feats.n_items < 2:
        raise DataValidationError("need at least 2 items to score pairs")
    m = rank1_directed_matrix(feats, gal, mode)
    return PairScoreTable.from_square(np.maximum(m, m.T), n_dims=feats.n_dims, mode=mode)


# --------------------------------------------------------------------------
# tracklets
# --------------------------------------------------------------------------


def sample_members(tracklet: Tracklet, sample_size: int, rng: RngSpec) -> np.ndarray:
    """Feature indices drawn without replacement, seeded per tracklet id."""
    members = np.asarray(tracklet.feature_indices, dtype=np.int64)
    if len(members) == 0:
        raise DataValidationError(f"tracklet {tracklet.id} has no feature-bearing members")
    if len(members) <= sample_size:
        return members
    gen = rng.derive(tracklet.id).generator()
    return np.sort(gen.choice(members, size=sample_size, replace=False))


def tracklet_similarity(t1: Tracklet, t2: Tracklet, feats, gal: GallerySet,
                        sample_size: int = 10, rng=None, mode: str = "exact") -> SimilarityScore:
    """Max directed score over all ordered cross pairs of sampled members."""
    feats = as_features(feats)
    gal.check_compatible(feats)
    rng = as_rng(rng)
    mode = _mode(mode)
    s1 = sample_members(t1, sample_size, rng)
    s2 = sample_members(t2, sample_size, rng)
    X = feats.values
    best = 0.0
    for a in s1:
        for b in s2:
            for p, q in ((a, b), (b, a)):
                if mode == EXACT:
                    v = _directed_exact(X[p], X[q], gal.gallery.values)
                else:
                    if gal.super_gallery is None:
                        raise DataValidationError("averaged mode requires a super-gallery")
                    v = _directed_averaged(X[p], X[q], gal.super_gallery.values, gal.g_sim)
                best = max(best, float(v))
    return SimilarityScore(best, mode)


def tracklet_score_table(tracklets: Sequence[Tracklet], feats, gal: GallerySet,
                         sample_size: int = 10, rng=None, mode: str = "exact") -> PairScoreTable:
    """Pair table over tracklets (in list order); entry ``(i, j)`` equals
    ``tracklet_similarity(tracklets[i], tracklets[j], ...)``."""
    feats = as_features(feats)
    rng = as_rng(rng)
    mode = _mode(mode)
    samples = [sample_members(t, sample_size, rng) for t in tracklets]
    universe = np.unique(np.concatenate(samples))
    where = {int(v): k for k, v in enumerate(universe)}
    directed = rank1_directed_matrix(FeatureMatrix(feats.values[universe]), gal, mode)
    if mode == EXACT:
        # the fast kernel zeroes the diagonal; identical members count in full
        R = gal.gallery.values
        for k, v in enumerate(universe):
            directed[k, k] = _directed_exact(feats.values[v], feats.values[v], R)
    else:
        np.fill_diagonal(directed, float(feats.n_dims))
    sym = np.maximum(directed, directed.T)
    rows = [np.array([where[int(v)] for v in s]) for s in samples]
    n = len(tracklets)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = sym[np.ix_(rows[i], rows[j])].max()
    return PairScoreTable.from_square(out + out.T, n_dims=feats.n_dims, mode=mode)


# --------------------------------------------------------------------------
# estimator
# --------------------------------------------------------------------------


class Rank1Similarity(TransformerMixin, BaseEstimator):
    """Transform feature vectors into a square matrix of rank-1 scores.

    Parameters
    ----------
    gallery : array-like of shape (G, n_features)
        Reference gallery. Required for ``mode='exact'``.
    super_gallery : array-like of shape (G_super, n_features), optional
        Pool the averaged mode draws simulated galleries from.
    mode : {'exact', 'averaged'}
    g_sim : int
        Simulated gallery size for the averaged mode.

    Attributes
    ----------
    gallery_ : GallerySet
    n_features_in_ : int

    Notes
    -----
    ``transform`` returns an ``(n, n)`` symmetric matrix whose diagonal is
    ``n_features``, the maximal score, so it can feed
    :class:`erclust.ERClustering` directly.
    """

    def __init__(self, gallery=None, super_gallery=None, mode="exact", g_sim=50):
        self.gallery = gallery
        self.super_gallery = super_gallery
        self.mode = mode
        self.g_sim = g_sim

    def fit(self, X, y=None):
        X = as_features(X)
        _mode(self.mode)
        gallery = self.gallery if self.gallery is not None else self.super_gallery
        if gallery is None:
            raise ValueError("a gallery is required")
        self.gallery_ = GallerySet(gallery, self.super_gallery, self.g_sim)
        self.gallery_.check_compatible(X)
        self.n_features_in_ = X.n_dims
        return self

    def score_table(self, X) -> PairScoreTable:
        check_is_fitted(self, "gallery_")
        return rank1_all_pairs_fast(X, self.gallery_, self.mode)

    def transform(self, X):
        return self.score_table(X).square()
