"""Glue between fusion, similarity, calibration, clustering and evaluation."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .calibration import CountHistogram, mismatched_histogram
from .clustering import ERClustering, constraints_from_tracklets
from .core import Tracklet
from .fusion import ConstantVelocityTracker, FusionConfig, fuse
from .metrics import evaluate
from .rank1 import PairScoreTable, tracklet_score_table


@dataclass
class PipelineResult:
    tracklets: list
    table: PairScoreTable
    labels: np.ndarray
    threshold: float
    constraints: frozenset
    metrics: Optional[dict] = None
    calibration: dict = field(default_factory=dict)


def tracklet_labels(tracklets: Sequence[Tracklet], feature_identity: Sequence) -> list:
    """Majority true identity per tracklet; tracklets of false positives get
    a unique ``fp<id>`` label."""
    out = []
    for t in tracklets:
        ids = [feature_identity[i] for i in t.feature_indices]
        ids = [i for i in ids if i is not None]
        out.append(Counter(ids).most_common(1)[0][0] if ids else f"fp{t.id}")
    return out


def reference_from_scene(scene, tracker=None, cfg: FusionConfig = FusionConfig(),
                         sample_size: int = 10, rng=None, mode: str = "exact",
                         bin_width: float = 1.0) -> CountHistogram:
    """Mismatched tracklet-pair histogram of a labeled scene."""
    tracklets = fuse(scene.detections, tracker or ConstantVelocityTracker(), cfg)
    table = tracklet_score_table(tracklets, scene.features, scene.gallery, sample_size, rng, mode)
    return mismatched_histogram(table, tracklet_labels(tracklets, scene.feature_identity), bin_width)


def boxes_with_clusters(tracklets: Sequence[Tracklet], labels):
    """Flatten tracklets into (boxes, cluster id per box)."""
    boxes, cids = [], []
    for t, c in zip(tracklets, labels):
        for o in t.observations:
            boxes.append(o)
            cids.append(int(c))
    return boxes, cids


def run_scene(scene, reference: Optional[CountHistogram] = None, threshold="auto",
              tracker=None, cfg: FusionConfig = FusionConfig(), target_fpr: float = 1e-6,
              sample_size: int = 10, rng=None, mode: str = "exact", bin_width: float = 1.0,
              alphas=(0.5,)) -> PipelineResult:
    """detections -> tracklets -> pair scores -> threshold -> clusters -> metrics."""
    tracklets = fuse(scene.detections, tracker or ConstantVelocityTracker(), cfg)
    table = tracklet_score_table(tracklets, scene.features, scene.gallery, sample_size, rng, mode)
    constraints = constraints_from_tracklets(tracklets)
    est = ERClustering(threshold=threshold, reference=reference, target_fpr=target_fpr,
                       bin_width=bin_width, n_dims=scene.features.n_dims)
    labels = est.fit_predict(table, constraints=constraints)
    boxes, cids = boxes_with_clusters(tracklets, labels)
    metrics = None
    if scene.annotations:
        metrics = evaluate(boxes, scene.annotations, cids, alphas)
    calib = est.calibrator_.report_ if est.calibrator_ is not None else {}
    return PipelineResult(tracklets, table, labels, est.threshold_, constraints, metrics, calib)
