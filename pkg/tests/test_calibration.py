import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erclust.calibration import (
    CountHistogram,
    LeftHalfFit,
    ThresholdCalibrator,
    UnattainableTargetWarning,
    all_pairs_histogram,
    fit_left_half,
    mismatched_histogram,
    tail_fraction,
    threshold_for_fpr,
    transform_histogram,
)
from erclust.core import DataValidationError
from erclust.rank1 import PairScoreTable


def table_of(scores, n_dims=100):
    n = int((1 + np.sqrt(1 + 8 * len(scores))) / 2)
    return PairScoreTable(n, scores, n_dims=n_dims)


def test_histogram_counting():
    h = all_pairs_histogram(table_of([10, 10, 80]))
    assert h.as_dict() == {10.0: 2.0, 80.0: 1.0}
    assert h.total == 3


def test_histogram_empty_table():
    with pytest.raises(DataValidationError):
        all_pairs_histogram(PairScoreTable(1, []))


def test_binning_rule():
    h = CountHistogram.from_scores([12.0], bin_width=5)
    assert h.bin_of(12.0) == 2
    assert h.as_dict() == {10.0: 1.0}


def test_histogram_spans_zero_to_f():
    h = all_pairs_histogram(table_of([3.0], n_dims=20))
    assert h.left_edges[0] == 0 and h.edges[-1] > 20


def test_histogram_csv_round_trip(tmp_path):
    h = CountHistogram.from_scores([1, 1, 2, 7.5], bin_width=0.5)
    p = tmp_path / "h.csv"
    h.to_csv(p)
    assert p.read_text().splitlines()[0] == "bin_left_edge,count"
    back = CountHistogram.read_csv(p)
    assert back.bin_width == 0.5
    np.testing.assert_array_equal(back.counts, h.counts)


def test_mismatched_histogram_counts_only_mismatched():
    t = PairScoreTable.from_square(np.array([[0, 5, 1, 1], [5, 0, 1, 2], [1, 1, 0, 6], [1, 2, 6, 0]]))
    h = mismatched_histogram(t, ["a", "a", "b", "b"])
    assert h.total == 4
    assert h.as_dict() == {1.0: 3.0, 2.0: 1.0}


def _samples(seed, mean, sd, n):
    x = np.random.default_rng(seed).normal(mean, sd, n)
    return x[x >= 0]


def test_self_fit():
    x = _samples(0, 60, 12, 200_000)
    h = CountHistogram.from_scores(x, upper=400)
    fit = fit_left_half(h, h)
    assert abs(fit.scale - 1.0) <= 0.01 + 1e-12
    assert abs(fit.location) <= 1.0
    assert fit.residual == pytest.approx(0.0, abs=1e-15)


def test_shift_recovered():
    x = _samples(1, 60, 12, 400_000)
    ref = CountHistogram.from_scores(x, upper=400)
    test = CountHistogram.from_scores(x + 10, upper=400)
    fit = fit_left_half(test, ref)
    assert fit.location == pytest.approx(10, abs=1.0)
    assert fit.scale == pytest.approx(1.0, abs=0.01)


def test_scale_recovered():
    x = _samples(2, 60, 12, 400_000)
    ref = CountHistogram.from_scores(x, upper=400)
    test = CountHistogram.from_scores(1.5 * x, upper=400)
    fit = fit_left_half(test, ref)
    assert fit.scale == pytest.approx(1.5, abs=0.01 + 1e-12)
    assert fit.location == pytest.approx(0, abs=1.0)


def test_degenerate_histograms():
    one_bin = CountHistogram.from_scores([5, 5, 5])
    with pytest.raises(DataValidationError, match="degenerate"):
        fit_left_half(one_bin, one_bin)
    mode_first = CountHistogram.from_scores([0, 0, 0, 3])
    with pytest.raises(DataValidationError, match="degenerate"):
        fit_left_half(mode_first, mode_first)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(-30, 30), st.integers(0, 1000))
def test_transform_conserves_mass(s, t, seed):
    x = np.random.default_rng(seed).gamma(4.0, 5.0, 500)
    ref = CountHistogram.from_scores(x)
    lo = min(0.0, np.floor(s * ref.origin + t) - 1)
    hi = s * ref.edges[-1] + t + 1
    n = int(np.ceil(hi - lo))
    mass = transform_histogram(ref, s, t, lo, n, 1.0)
    assert mass.sum() == pytest.approx(ref.total, rel=1e-12)


def _fit_on(counts, origin=0.0, n_dims=200.0):
    h = CountHistogram(np.asarray(counts, dtype=float), 1.0, origin, n_dims)
    return LeftHalfFit(1.0, 0.0, 0.0, h, h.total, 0.0, n_dims)


def test_threshold_support_bound():
    counts = np.zeros(150)
    counts[40:100] = 1.0
    tau = threshold_for_fpr(_fit_on(counts), 1000, 1e-6)
    assert tau <= 100
    assert tail_fraction(_fit_on(counts).histogram, tau) <= 1e-6


def test_threshold_vacuous_target():
    counts = np.zeros(150)
    counts[40:100] = 1.0
    fit = _fit_on(counts, origin=-3.0)
    assert threshold_for_fpr(fit, 1000, 1.0) == -3.0


def test_threshold_unattainable_links_nothing():
    counts = np.ones(30)
    fit = _fit_on(counts, n_dims=20.0)
    with pytest.warns(UnattainableTargetWarning):
        assert threshold_for_fpr(fit, 100, 1e-6) == 20.0


def test_threshold_rejects_bad_target():
    with pytest.raises(ValueError):
        threshold_for_fpr(_fit_on(np.ones(5)), 10, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1e-9, 1.0), min_size=2, max_size=8), st.integers(0, 1000))
def test_threshold_monotone_in_target(targets, seed):
    counts = np.random.default_rng(seed).gamma(2.0, 1.0, 120)
    fit = _fit_on(counts, n_dims=1000.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnattainableTargetWarning)
        taus = [threshold_for_fpr(fit, 100, t) for t in sorted(targets, reverse=True)]
    assert all(b >= a for a, b in zip(taus, taus[1:]))


def test_mixture_fpr_within_order_of_magnitude():
    rng = np.random.default_rng(8)
    ref = rng.normal(80, 20, 1_000_000)
    mis = rng.normal(80, 20, 1_000_000)
    mat = rng.normal(300, 20, 30_000)
    test = np.concatenate([mis, mat])
    R = CountHistogram.from_scores(ref[ref >= 0], upper=4096)
    T = CountHistogram.from_scores(test[test >= 0], upper=4096)
    fit = fit_left_half(T, R)
    tau = threshold_for_fpr(fit, len(test), 1e-4)
    realized = np.mean(mis > tau)
    assert 1e-5 <= realized <= 1e-3


def test_calibrator_estimator():
    rng = np.random.default_rng(3)
    ref = CountHistogram.from_scores(np.abs(rng.normal(20, 4, 50_000)), upper=100)
    scores = np.concatenate([np.abs(rng.normal(20, 4, 4000)), rng.normal(80, 3, 100)])
    n = 91
    scores = np.resize(scores, n * (n - 1) // 2)
    cal = ThresholdCalibrator(reference=ref, target_fpr=1e-3).fit(PairScoreTable(n, scores, n_dims=100))
    assert 20 < cal.threshold_ < 60
    links = cal.predict(PairScoreTable(n, scores, n_dims=100))
    assert links.sum() == np.sum(scores > cal.threshold_)
    assert set(cal.report_) >= {"scale", "location", "residual", "threshold", "target_fpr"}
