"""Rank-1 counts verification and Erdős-Rényi clustering."""

__version__ = "0.1.0"

from .calibration import CountHistogram, LeftHalfFit, ThresholdCalibrator  # noqa: E402
from .clustering import ERClustering, MergeTrace  # noqa: E402
from .core import (  # noqa: E402
    BoxObservation,
    Clustering,
    DataValidationError,
    FeatureMatrix,
    GallerySet,
    RngSpec,
    Tracklet,
)
from .rank1 import PairScoreTable, Rank1Similarity, SimilarityScore  # noqa: E402

__all__ = [
    "BoxObservation",
    "Clustering",
    "CountHistogram",
    "DataValidationError",
    "ERClustering",
    "FeatureMatrix",
    "GallerySet",
    "LeftHalfFit",
    "MergeTrace",
    "PairScoreTable",
    "Rank1Similarity",
    "RngSpec",
    "SimilarityScore",
    "ThresholdCalibrator",
    "Tracklet",
]
