"""Synthetic videos with planted identities, for desk-scale end-to-end runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BoxObservation, FeatureMatrix, GallerySet, as_rng

BOX = 40.0
_LANE = 100.0
_FP_X0 = 2000.0


@dataclass
class SyntheticScene:
    features: FeatureMatrix
    gallery: GallerySet
    detections: list
    annotations: list
    # true identity per feature row; None for false positives
    feature_identity: list


def make_scene(n_identities: int = 5, n_dims: int = 256, gallery_size: int = 20,
               segments_per_identity: int = 6, segment_length=(20, 40), n_frames: int = 600,
               fp_rate: float = 0.05, fn_rate: float = 0.05, noise: float = 0.05,
               super_gallery_size: int = 0, g_sim: int = 20, rng=None,
               prefix: str = "id") -> SyntheticScene:
    """Generate a scene.

    Identity ``k`` lives in its own horizontal lane, so faces of different
    identities never overlap spatially. Each appearance is a linear motion
    segment; segments of the same identity never overlap in time. Features
    are ``center_k + noise * N(0, I)`` with centers drawn from ``N(0, I)``.
    A fraction ``fn_rate`` of annotated faces get no detection; false
    positives (``fp_rate`` relative to true detections) appear far from the
    lanes with features of unrelated people.
    """
    gen = as_rng(rng).generator()
    centers = gen.standard_normal((n_identities, n_dims))
    rows, row_ident = [], []
    detections, annotations = [], []
    lo, hi = segment_length
    for k in range(n_identities):
        name = f"{prefix}{k}"
        t = int(gen.integers(0, 20))
        for _ in range(segments_per_identity):
            length = int(gen.integers(lo, hi + 1))
            if t + length > n_frames:
                break
            x0 = float(gen.uniform(0, 800))
            vx = float(gen.uniform(-2, 2))
            y = 20.0 + _LANE * k
            for s in range(length):
                box = BoxObservation(t + s, x0 + vx * s, y, BOX, BOX, "detector", None, name)
                annotations.append(box)
                if gen.random() < fn_rate:
                    continue
                rows.append(centers[k] + noise * gen.standard_normal(n_dims))
                row_ident.append(name)
                detections.append(BoxObservation(box.frame, box.x, box.y, BOX, BOX, "detector", len(rows) - 1))
            t += length + int(gen.integers(15, 40))
    n_fp = int(round(fp_rate * len(detections)))
    last_frame = max(a.frame for a in annotations)
    for _ in range(n_fp):
        f = int(gen.integers(0, last_frame + 1))
        x = _FP_X0 + float(gen.uniform(0, 50_000))
        y = float(gen.uniform(0, 50_000))
        rows.append(gen.standard_normal(n_dims) + noise * gen.standard_normal(n_dims))
        row_ident.append(None)
        detections.append(BoxObservation(f, x, y, BOX, BOX, "detector", len(rows) - 1))
    detections.sort(key=lambda d: (d.frame, d.y, d.x))
    annotations.sort(key=lambda a: (a.frame, a.y, a.x))

    gallery = gen.standard_normal((gallery_size, n_dims)) + noise * gen.standard_normal((gallery_size, n_dims))
    sg = None
    if super_gallery_size:
        sg = gen.standard_normal((super_gallery_size, n_dims)) + noise * gen.standard_normal((super_gallery_size, n_dims))
    return SyntheticScene(FeatureMatrix(np.array(rows)), GallerySet(gallery, sg, g_sim),
                          detections, annotations, row_ident)


def make_blobs(n_identities: int = 3, per_identity: int = 20, n_dims: int = 64,
               gallery_size: int = 20, noise: float = 0.05, rng=None):
    """Well-separated Gaussian identities as a flat item set.

    Returns ``(features, gallery, labels)``.
    """
    gen = as_rng(rng).generator()
    centers = gen.standard_normal((n_identities, n_dims))
    labels = np.repeat(np.arange(n_identities), per_identity)
    X = centers[labels] + noise * gen.standard_normal((len(labels), n_dims))
    G = gen.standard_normal((gallery_size, n_dims))
    return FeatureMatrix(X), GallerySet(G), labels
