"""Automatic linking threshold from the left half of the score distribution.

The pair-score histogram of an unlabeled test set is dominated by
mismatched pairs left of its mode. A mismatched-pair histogram from a
labeled reference set is mapped onto it with ``x -> scale * x + location``
by grid search, matching only the bins strictly left of the test mode.
The right tail of the mapped reference then sets the threshold for a
target false-positive rate.

Histogram mass is treated as uniform within each bin, so transforming a
histogram is exact re-binning of a piecewise-linear CDF.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import DataValidationError
from .rank1 import PairScoreTable

DEFAULT_TARGET_FPR = 1e-6
OBJECTIVE = "least_squares_left_of_mode"


class UnattainableTargetWarning(UserWarning):
    """The fitted tail never drops to the requested FPR inside ``[0, F]``."""


@dataclass(frozen=True, eq=False)
class CountHistogram:
    """Counts on a regular grid; bin ``k`` covers
    ``[origin + k * bin_width, origin + (k + 1) * bin_width)``."""

    counts: np.ndarray
    bin_width: float = 1.0
    origin: float = 0.0
    upper: Optional[float] = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.float64).copy()
        if counts.ndim != 1 or len(counts) == 0:
            raise DataValidationError("histogram needs at least one bin")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise DataValidationError("histogram counts must be finite and non-negative")
        if not self.bin_width > 0:
            raise DataValidationError(f"bin_width must be positive, got {self.bin_width}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_scores(cls, scores, bin_width: float = 1.0, upper: Optional[float] = None) -> "CountHistogram":
        scores = np.asarray(scores, dtype=np.float64).ravel()
        if len(scores) == 0:
            raise DataValidationError("cannot histogram an empty score set")
        if np.any(scores < 0):
            raise DataValidationError("scores must be non-negative")
        idx = np.floor(scores / bin_width).astype(np.int64)
        top = idx.max()
        if upper is not None:
            top = max(top, int(math.floor(upper / bin_width)))
        counts = np.bincount(idx, minlength=top + 1)
        return cls(counts, bin_width, 0.0, upper)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def left_edges(self) -> np.ndarray:
        return self.origin + self.bin_width * np.arange(len(self.counts))

    @property
    def edges(self) -> np.ndarray:
        return self.origin + self.bin_width * np.arange(len(self.counts) + 1)

    def normalized(self) -> np.ndarray:
        return self.counts / self.total

    def bin_of(self, score: float) -> int:
        return int(math.floor((score - self.origin) / self.bin_width))

    def as_dict(self) -> dict:
        return {float(e): float(c) for e, c in zip(self.left_edges, self.counts) if c}

    def mode_index(self) -> int:
        return int(np.argmax(self.counts))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("bin_left_edge,count\n")
            for e, c in zip(self.left_edges, self.counts):
                fh.write(f"{e:.17g},{c:.17g}\n")

    @classmethod
    def read_csv(cls, path, bin_width: Optional[float] = None, upper: Optional[float] = None) -> "CountHistogram":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no such file: {path}")
        edges, counts = [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["bin_left_edge", "count"]:
                raise DataValidationError(f"{path}: expected header bin_left_edge,count")
            for lineno, row in enumerate(reader, start=2):
                try:
                    edges.append(float(row["bin_left_edge"]))
                    counts.append(float(row["count"]))
                except (TypeError, ValueError):
                    raise DataValidationError(f"{path}: line {lineno}: malformed row") from None
        if not edges:
            raise DataValidationError(f"{path}: empty histogram")
        edges = np.array(edges)
        if bin_width is None:
            bin_width = float(edges[1] - edges[0]) if len(edges) > 1 else 1.0
        steps = np.diff(edges)
        if len(steps) and not np.allclose(steps, bin_width):
            raise DataValidationError(f"{path}: bins are not contiguous at width {bin_width}")
        return cls(np.array(counts), bin_width, float(edges[0]), upper)


@dataclass(frozen=True, eq=False)
class LeftHalfFit:
    scale: float
    location: float
    residual: float
    histogram: CountHistogram
    mismatched_mass: float
    mode_edge: float
    n_dims: float
    objective: str = OBJECTIVE


# --------------------------------------------------------------------------


def all_pairs_histogram(table: PairScoreTable, bin_width: float = 1.0) -> CountHistogram:
    if len(table) == 0:
        raise DataValidationError("empty score table")
    return CountHistogram.from_scores(table.scores, bin_width, table.n_dims)


def mismatched_histogram(table: PairScoreTable, labels, bin_width: float = 1.0) -> CountHistogram:
    """Histogram of scores for pairs whose labels differ."""
    labels = np.asarray(labels)
    if len(labels) != table.n_items:
        raise DataValidationError(
            f"{len(labels)} labels for a table over {table.n_items} items"
        )
    ii, jj = table.pairs()
    mask = labels[ii] != labels[jj]
    if not mask.any():
        raise DataValidationError("no mismatched pairs in the labeled set")
    return CountHistogram.from_scores(table.scores[mask], bin_width, table.n_dims)


def _cdf_points(h: CountHistogram):
    return h.edges, np.concatenate([[0.0], np.cumsum(h.counts)])


def transform_histogram(reference: CountHistogram, scale: float, location: float,
                        origin: float, n_bins: int, bin_width: float) -> np.ndarray:
    """Mass of ``scale * X + location`` (X ~ reference) in each target bin."""
    xp, fp = _cdf_points(reference)
    edges = origin + bin_width * np.arange(n_bins + 1)
    return np.diff(np.interp((edges - location) / scale, xp, fp))


def _support_grid(reference, scale, location, origin, upper, w):
    lo = scale * reference.origin + location
    hi = scale * reference.edges[-1] + location
    start = min(origin, origin + w * math.floor((lo - origin) / w))
    stop = max(upper + w, hi + w)
    return start, int(math.ceil((stop - start) / w))


def fit_left_half(test: CountHistogram, reference: CountHistogram,
                  scale_range=(0.5, 2.0, 0.01), location_bound: Optional[float] = None,
                  n_dims: Optional[float] = None) -> LeftHalfFit:
    """Grid-search ``(scale, location)`` mapping ``reference`` onto ``test``.

    Scales run over ``scale_range`` (inclusive), locations over
    ``[-F/8, F/8]`` in steps of ``test.bin_width``. The objective is the sum
    of squared differences of unit-normalized masses over test bins strictly
    left of the test mode. Ties go to the smallest scale, then smallest
    location.
    """
    if test.total <= 0 or reference.total <= 0:
        raise DataValidationError("histograms must be nonempty")
    if np.count_nonzero(test.counts) < 2:
        raise DataValidationError("degenerate test histogram: cannot locate mode")
    mode = test.mode_index()
    if mode == 0:
        raise DataValidationError("degenerate test histogram: no bins left of the mode")
    w = test.bin_width
    F = n_dims if n_dims is not None else (test.upper if test.upper is not None else test.edges[-1])
    if location_bound is None:
        location_bound = F / 8.0
    k = math.floor(location_bound / w + 1e-9)
    locations = w * np.arange(-k, k + 1)
    lo_s, hi_s, step = scale_range
    n_s = int(round((hi_s - lo_s) / step)) + 1
    scales = np.round(lo_s + step * np.arange(n_s), 10)

    target = test.counts[:mode] / test.counts[:mode].sum()
    left_edges = test.origin + w * np.arange(mode + 1)
    xp, fp = _cdf_points(reference)

    best = (np.inf, None, None)
    for s in scales:
        y = (left_edges[:, None] - locations[None, :]) / s
        masses = np.diff(np.interp(y, xp, fp), axis=0)
        sums = masses.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            resid = np.sum((masses / sums - target[:, None]) ** 2, axis=0)
        resid[sums <= 0] = np.inf
        j = int(np.argmin(resid))
        if resid[j] < best[0]:
            best = (float(resid[j]), float(s), float(locations[j]))
    residual, s, t = best
    if s is None:
        raise DataValidationError("reference histogram has no mass over the fitted region")

    origin, n_bins = _support_grid(reference, s, t, test.origin, F, w)
    mass = transform_histogram(reference, s, t, origin, n_bins, w)
    left_lo, left_hi = test.origin, test.origin + w * mode
    left_frac = (np.interp((left_hi - t) / s, xp, fp) - np.interp((left_lo - t) / s, xp, fp)) / reference.total
    mismatched = test.counts[:mode].sum() / left_frac
    fitted = CountHistogram(mass * (mismatched / reference.total), w, origin, F)
    return LeftHalfFit(s, t, residual, fitted, float(mismatched), float(left_hi), float(F))


def tail_fraction(hist: CountHistogram, tau: float) -> float:
    """Fraction of mass strictly above ``tau`` (uniform within bins)."""
    xp, fp = _cdf_points(hist)
    return float((fp[-1] - np.interp(tau, xp, fp)) / fp[-1])


def threshold_for_fpr(fit: LeftHalfFit, n_pairs: int, target_fpr: float = DEFAULT_TARGET_FPR) -> float:
    """Smallest bin edge ``tau`` whose fitted mismatched tail above it is at
    most ``target_fpr`` of the fitted mass. Links are ``score > tau``.

    Falls back to ``tau = F`` (link nothing) with an
    :class:`UnattainableTargetWarning` when no edge inside ``[0, F]`` works.
    """
    if not 0 < target_fpr <= 1:
        raise ValueError(f"target_fpr must be in (0, 1], got {target_fpr}")
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    h = fit.histogram
    edges = h.edges
    tail = np.concatenate([np.cumsum(h.counts[::-1])[::-1], [0.0]]) / h.total
    ok = np.nonzero(tail <= target_fpr)[0]
    tau = float(edges[ok[0]])
    if tau > fit.n_dims:
        warnings.warn(
            f"target FPR {target_fpr:g} unattainable within [0, {fit.n_dims:g}]; linking nothing",
            UnattainableTargetWarning,
            stacklevel=2,
        )
        tau = float(fit.n_dims)
    return tau


def fit_report(fit: LeftHalfFit, tau: float, target_fpr: float, n_pairs: int) -> dict:
    frac = tail_fraction(fit.histogram, tau)
    return {
        "scale": fit.scale,
        "location": fit.location,
        "residual": fit.residual,
        "threshold": tau,
        "target_fpr": target_fpr,
        "objective": fit.objective,
        "mode_edge": fit.mode_edge,
        "mismatched_mass": fit.mismatched_mass,
        "n_pairs": n_pairs,
        "fitted_fpr": frac,
        "expected_false_links": frac * fit.mismatched_mass,
    }


def format_report(report: dict) -> str:
    def fmt(v):
        return f"{v:.17g}" if isinstance(v, float) else str(v)
    return "".join(f"{k}={fmt(v)}\n" for k, v in report.items())


# --------------------------------------------------------------------------


def _scores_of(X):
    if isinstance(X, PairScoreTable):
        return X.scores, X.n_dims
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        if X.shape[0] != X.shape[1]:
            raise DataValidationError("a 2-D score input must be a square matrix")
        return X[np.triu_indices(X.shape[0], k=1)], None
    return X.ravel(), None


class ThresholdCalibrator(BaseEstimator):
    """Estimate the linking threshold of an unlabeled score set.

    Parameters
    ----------
    reference : CountHistogram
        Mismatched-pair histogram from a labeled calibration set.
    target_fpr : float
    bin_width : float
    n_dims : float, optional
        Maximal score ``F``. Taken from the score table when omitted.

    Attributes
    ----------
    histogram_ : CountHistogram
    fit_ : LeftHalfFit
    threshold_ : float
    report_ : dict
    """

    def __init__(self, reference=None, target_fpr=DEFAULT_TARGET_FPR, bin_width=1.0, n_dims=None):
        self.reference = reference
        self.target_fpr = target_fpr
        self.bin_width = bin_width
        self.n_dims = n_dims

    def fit(self, X, y=None):
        if self.reference is None:
            raise ValueError("a reference histogram is required")
        scores, table_dims = _scores_of(X)
        F = self.n_dims if self.n_dims is not None else table_dims
        if F is None:
            F = float(np.ceil(scores.max()))
        self.histogram_ = CountHistogram.from_scores(scores, self.bin_width, F)
        self.fit_ = fit_left_half(self.histogram_, self.reference, n_dims=F)
        self.threshold_ = threshold_for_fpr(self.fit_, len(scores), self.target_fpr)
        self.report_ = fit_report(self.fit_, self.threshold_, self.target_fpr, len(scores))
        return self

    def predict(self, X):
        """Link decisions (``score > threshold_``) for each pair."""
        check_is_fitted(self, "threshold_")
        scores, _ = _scores_of(X)
        return scores > self.threshold_
