import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erclust.core import BoxObservation, DataValidationError, FeatureMatrix, GallerySet, RngSpec, Tracklet
from erclust.rank1 import (
    AVERAGED,
    PairScoreTable,
    expected_count,
    rank1_all_pairs_fast,
    rank1_all_pairs_naive,
    rank1_count_naive,
    rank1_count_symmetric,
    rank1_directed_matrix,
    rank1_prob_averaged,
    tracklet_score_table,
    tracklet_similarity,
)


def brute_directed(a, b, gallery):
    # element-by-element loop, no vectorization
    count = 0
    for i in range(len(a)):
        nearest = min(abs(a[i] - g[i]) for g in gallery)
        if abs(a[i] - b[i]) < nearest:
            count += 1
    return count


def test_hand_example():
    X = np.array([[0, 0, 0], [1, 2, 3]], dtype=float)
    gal = GallerySet(np.array([[2, 1, 5], [-3, 4, 1]], dtype=float))
    assert brute_directed(X[0], X[1], gal.gallery.values) == 1
    assert rank1_count_naive(0, 1, X, gal).value == 1


def test_gallery_copy_of_anchor_gives_zero():
    X = np.array([[0.1, 0.2, 0.3], [0.1, 0.2, 0.3]])
    gal = GallerySet(np.array([[0.1, 0.2, 0.3], [5, 5, 5]]))
    assert rank1_count_naive(0, 1, X, gal).value == 0


def test_identical_items_separated_gallery_score_f():
    X = np.array([[0.1, 0.2, 0.3, 0.4], [0.1, 0.2, 0.3, 0.4]])
    gal = GallerySet(np.full((3, 4), 9.0))
    assert rank1_count_naive(0, 1, X, gal).value == 4
    assert rank1_count_symmetric(0, 1, X, gal).value == 4


def test_symmetric_is_max_of_directions(small_gallery):
    X, gal = small_gallery
    for a, b in [(0, 1), (3, 7), (11, 2)]:
        ab = rank1_count_naive(a, b, X, gal).value
        ba = rank1_count_naive(b, a, X, gal).value
        assert rank1_count_symmetric(a, b, X, gal).value == max(ab, ba)
        assert rank1_count_symmetric(a, b, X, gal) == rank1_count_symmetric(b, a, X, gal)


def test_naive_errors(small_gallery):
    X, gal = small_gallery
    with pytest.raises(ValueError):
        rank1_count_naive(1, 1, X, gal)
    with pytest.raises(DataValidationError, match="dimension mismatch"):
        rank1_count_naive(0, 1, X[:, :5], gal)


def test_expected_count():
    assert expected_count(4096, 50) == pytest.approx(80.3137, abs=1e-4)
    assert round(expected_count(4096, 50)) == 80
    assert expected_count(100, 1) == 50
    with pytest.raises(ValueError):
        expected_count(100, 0)


def test_null_mean_matches_expectation():
    # Monte-Carlo oracle: naive directed counts on i.i.d. uniform pairs
    rng = np.random.default_rng(11)
    F, G, pairs = 512, 50, 10_000
    A = rng.random((pairs, F))
    B = rng.random((pairs, F))
    R = rng.random((G, F))
    X = np.empty((2, F))
    gal = GallerySet(R)
    counts = []
    for a, b in zip(A, B):
        X[0], X[1] = a, b
        counts.append(rank1_count_naive(0, 1, X, gal).value)
    assert np.mean(counts) == pytest.approx(F / (G + 1), rel=0.03)


def test_averaged_formula_paper_example():
    exact = mpmath.power(mpmath.mpf(997) / 1000, 50)
    # build one dimension with K=3 closer super-gallery values out of 1000
    a, b = 0.0, 1.0
    sg = np.concatenate([[0.5, -0.5, 0.9], np.full(997, 5.0)])[:, None]
    X = np.array([[a], [b]])
    gal = GallerySet(sg, sg, g_sim=50)
    v = rank1_prob_averaged(0, 1, X, gal).value
    assert abs(v - float(exact)) < 1e-12
    assert float(exact) == pytest.approx(0.8606, abs=1e-4)


def test_averaged_extremes():
    X = np.array([[0.0, 0.0], [0.1, 3.0]])
    sg = np.array([[5.0, 1.0], [6.0, -1.0]])
    gal = GallerySet(sg, sg, g_sim=2)
    # dim 0: K=0 -> 1; dim 1: both gallery values closer than 3.0 -> 0
    assert rank1_prob_averaged(0, 1, X, gal).value == 1.0
    assert rank1_prob_averaged(0, 1, X, gal).mode == AVERAGED


def test_averaged_requires_super_gallery(small_gallery):
    X, gal = small_gallery
    with pytest.raises(DataValidationError):
        rank1_prob_averaged(0, 1, X, GallerySet(gal.gallery))


def test_averaged_consistency_with_fixed_gallery(rng):
    X = rng.random((6, 20))
    G = rng.random((8, 20))
    gal = GallerySet(G, G, g_sim=8)
    s = rank1_all_pairs_fast(X, gal, "averaged").scores
    assert np.all(s <= 20)
    m = rank1_directed_matrix(X, gal, "averaged")
    allowed = {(1 - k / 8) ** 8 for k in range(9)}
    # per-dimension terms can only take values (1 - K/G)^G
    for d in range(20):
        one = rank1_directed_matrix(X[:, [d]], GallerySet(G[:, [d]], G[:, [d]], 8), "averaged")
        off = one[~np.eye(6, dtype=bool)]
        assert all(any(abs(v - a) < 1e-15 for a in allowed) for v in off)
    assert m.max() <= 20


@pytest.mark.parametrize("quantize", [False, True])
def test_fast_matches_naive(quantize):
    rng = np.random.default_rng(5)
    X = rng.random((50, 64))
    G = rng.random((16, 64))
    if quantize:
        X, G = np.round(X * 4) / 4, np.round(G * 4) / 4
    gal = GallerySet(G, np.vstack([G, rng.random((9, 64))]), g_sim=10)
    naive = rank1_all_pairs_naive(X, gal, "exact")
    fast = rank1_all_pairs_fast(X, gal, "exact")
    np.testing.assert_array_equal(fast.scores, naive.scores)
    # spot-check the naive table against the loop oracle
    assert naive[0, 1] == max(brute_directed(X[0], X[1], G), brute_directed(X[1], X[0], G))
    na = rank1_all_pairs_naive(X[:20], gal, "averaged")
    fa = rank1_all_pairs_fast(X[:20], gal, "averaged")
    np.testing.assert_allclose(fa.scores, na.scores, atol=1e-9, rtol=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(1, 10), st.integers(1, 6), st.integers(0, 2**32 - 1), st.booleans())
def test_fast_equals_naive_property(n, f, g, seed, coarse):
    rng = np.random.default_rng(seed)
    X = rng.random((n, f))
    G = rng.random((g, f))
    if coarse:
        X, G = np.round(X * 3) / 3, np.round(G * 3) / 3
    gal = GallerySet(G, G, g_sim=g)
    fast = rank1_all_pairs_fast(X, gal)
    assert np.array_equal(fast.scores, rank1_all_pairs_naive(X, gal).scores)
    assert np.all((fast.scores >= 0) & (fast.scores <= f))
    fa = rank1_all_pairs_fast(X, gal, "averaged").scores
    na = rank1_all_pairs_naive(X, gal, "averaged").scores
    assert np.allclose(fa, na, atol=1e-9, rtol=0)


def test_two_items_reduces_to_symmetric(small_gallery):
    X, gal = small_gallery
    t = rank1_all_pairs_fast(X[:2], gal)
    assert len(t) == 1
    assert t[0, 1] == rank1_count_symmetric(0, 1, X, gal).value


def test_duplicates_score_f():
    X = np.array([[0.2, 0.4, 0.6], [0.2, 0.4, 0.6], [0.9, 0.1, 0.3]])
    gal = GallerySet(np.full((2, 3), 50.0))
    assert rank1_all_pairs_fast(X, gal)[0, 1] == 3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gallery_growth_never_increases_directed_count(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((5, 8))
    G = rng.random((3, 8))
    small = rank1_directed_matrix(X, GallerySet(G))
    big = rank1_directed_matrix(X, GallerySet(np.vstack([G, rng.random((1, 8))])))
    assert np.all(big <= small)


def _tracklet(tid, frames_and_feats):
    obs = tuple(BoxObservation(f, 0, 0, 5, 5, "detector", k) for f, k in frames_and_feats)
    return Tracklet(tid, obs, 0)


def test_tracklet_similarity_length_one(small_gallery):
    X, gal = small_gallery
    t1 = _tracklet(0, [(0, 3)])
    t2 = _tracklet(1, [(5, 8)])
    assert tracklet_similarity(t1, t2, X, gal).value == rank1_count_symmetric(3, 8, X, gal).value


def test_tracklet_similarity_self_is_f():
    X = np.random.default_rng(0).random((4, 6))
    gal = GallerySet(np.full((2, 6), 40.0))
    t = _tracklet(0, [(0, 0), (1, 1), (2, 2)])
    assert tracklet_similarity(t, t, X, gal).value == 6


def test_tracklet_similarity_deterministic_and_max(rng):
    X = rng.random((40, 10))
    gal = GallerySet(rng.random((4, 10)))
    t1 = _tracklet(0, [(f, f) for f in range(20)])
    t2 = _tracklet(1, [(f + 30, f + 20) for f in range(20)])
    v1 = tracklet_similarity(t1, t2, X, gal, rng=RngSpec(9)).value
    v2 = tracklet_similarity(t1, t2, X, gal, rng=RngSpec(9)).value
    assert v1 == v2
    full = max(
        rank1_count_symmetric(a, b, X, gal).value for a in range(20) for b in range(20, 40)
    )
    assert v1 <= full


def test_tracklet_table_matches_pairwise(rng):
    X = rng.random((30, 12))
    gal = GallerySet(rng.random((4, 12)), rng.random((20, 12)), g_sim=5)
    ts = [
        _tracklet(0, [(f, f) for f in range(12)]),
        _tracklet(1, [(f, f) for f in range(12, 15)]),
        _tracklet(2, [(f, f) for f in range(15, 30)]),
    ]
    for mode in ("exact", "averaged"):
        table = tracklet_score_table(ts, X, gal, 5, RngSpec(4), mode)
        for i in range(3):
            for j in range(i + 1, 3):
                v = tracklet_similarity(ts[i], ts[j], X, gal, 5, RngSpec(4), mode).value
                assert table[i, j] == pytest.approx(v, abs=1e-9)


def test_tracklet_without_features(small_gallery):
    X, gal = small_gallery
    empty = Tracklet(0, (BoxObservation(0, 0, 0, 5, 5),), 0)
    with pytest.raises(DataValidationError):
        tracklet_similarity(empty, _tracklet(1, [(0, 1)]), X, gal)


def test_table_csv_round_trip(tmp_path, small_gallery):
    X, gal = small_gallery
    t = rank1_all_pairs_fast(X, gal)
    p = tmp_path / "s.csv"
    t.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "i,j,score"
    assert lines[1].startswith("0,1,")
    pairs = [tuple(map(int, line.split(",")[:2])) for line in lines[1:]]
    assert pairs == sorted(pairs)
    assert PairScoreTable.read_csv(p) == t


def test_table_indexing():
    t = PairScoreTable.from_square(np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]]))
    assert (t[0, 1], t[0, 2], t[1, 2], t[2, 1]) == (1, 2, 3, 3)
    with pytest.raises(KeyError):
        t[1, 1]
