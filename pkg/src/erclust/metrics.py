"""Unified pairwise precision and recall over detections and annotations.

Every detection and annotation becomes one tuple: a false positive
(detection without annotation), a valid detection (detection matched to an
annotation) or a false negative (annotation without detection). All
unordered pairs of distinct tuples are categorized, plus one self-pair
for each false positive and each false negative:

========  ==============================================================
white     both valid, same identity, same cluster
magenta   both valid, same identity, different clusters
cyan      both valid, different identities, same cluster
blue      both valid, different identities, different clusters; and
          every mixed pair that is neither green nor red
green     contains a false positive and both share a cluster; or a
          false-positive self-pair
red       contains a false negative and both share an identity; or a
          false-negative self-pair
========  ==============================================================

``UPP = white / (white + cyan + green)`` and
``UPR = white / (white + magenta + red)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import BoxObservation, DataValidationError
from .fusion import hungarian_match, iou_matrix

FALSE_POSITIVE = "false_positive"
VALID = "valid"
FALSE_NEGATIVE = "false_negative"

CATEGORIES = ("white", "magenta", "cyan", "blue", "green", "red")
COLORS = {
    "white": (255, 255, 255),
    "magenta": (255, 0, 255),
    "cyan": (0, 255, 255),
    "blue": (0, 0, 255),
    "green": (0, 255, 0),
    "red": (255, 0, 0),
}
_WHITE, _MAGENTA, _CYAN, _BLUE, _GREEN, _RED = range(6)


@dataclass(frozen=True)
class EvalTuple:
    kind: str
    detection: Optional[int] = None
    annotation: Optional[int] = None
    identity: Optional[str] = None
    cluster_id: Optional[int] = None

    def __post_init__(self):
        if self.kind == FALSE_POSITIVE:
            ok = self.detection is not None and self.annotation is None
        elif self.kind == VALID:
            ok = self.detection is not None and self.annotation is not None and self.identity is not None
        elif self.kind == FALSE_NEGATIVE:
            ok = self.detection is None and self.annotation is not None and self.identity is not None
        else:
            raise DataValidationError(f"unknown tuple kind {self.kind!r}")
        if not ok:
            raise DataValidationError(f"inconsistent fields for a {self.kind} tuple: {self}")


@dataclass(frozen=True)
class PairCategoryCounts:
    white: int = 0
    magenta: int = 0
    cyan: int = 0
    blue: int = 0
    green: int = 0
    red: int = 0

    @property
    def total(self) -> int:
        return self.white + self.magenta + self.cyan + self.blue + self.green + self.red

    def as_dict(self) -> dict:
        return {c: getattr(self, c) for c in CATEGORIES}


def match_detections(detections: Sequence[BoxObservation], annotations: Sequence[BoxObservation],
                     match_iou: float = 0.5, cluster_ids: Optional[Sequence] = None) -> list:
    """Per-frame gated maximum-IoU matching of detections to annotations.

    Tuples reference detections and annotations by their position in the
    input lists. ``cluster_ids[k]`` is attached to detection ``k``.
    """
    det_frames: dict = {}
    ann_frames: dict = {}
    for k, d in enumerate(detections):
        det_frames.setdefault(d.frame, []).append(k)
    for k, a in enumerate(annotations):
        if a.identity is None:
            raise DataValidationError(f"annotation {k} has no identity")
        ann_frames.setdefault(a.frame, []).append(k)

    def cid(k):
        return None if cluster_ids is None else cluster_ids[k]

    out = []
    for frame in sorted(set(det_frames) | set(ann_frames)):
        ds = det_frames.get(frame, [])
        As = ann_frames.get(frame, [])
        w = iou_matrix([detections[k] for k in ds], [annotations[k] for k in As])
        pairs = hungarian_match(w, match_iou)
        used_d = {r for r, _ in pairs}
        used_a = {c for _, c in pairs}
        for r, c in pairs:
            a = As[c]
            out.append(EvalTuple(VALID, ds[r], a, annotations[a].identity, cid(ds[r])))
        for r, k in enumerate(ds):
            if r not in used_d:
                out.append(EvalTuple(FALSE_POSITIVE, k, None, None, cid(k)))
        for c, a in enumerate(As):
            if c not in used_a:
                out.append(EvalTuple(FALSE_NEGATIVE, None, a, annotations[a].identity, None))
    return out


def _encode(tuples: Sequence[EvalTuple]):
    kinds = np.array([{FALSE_POSITIVE: 0, VALID: 1, FALSE_NEGATIVE: 2}[t.kind] for t in tuples], dtype=np.int8)
    ids: dict = {}
    ident = np.array([-1 if t.identity is None else ids.setdefault(t.identity, len(ids)) for t in tuples])
    clus = []
    for t in tuples:
        if t.kind != FALSE_NEGATIVE and t.cluster_id is None:
            raise DataValidationError(f"tuple {t} has no cluster id")
        clus.append(-1 if t.kind == FALSE_NEGATIVE else t.cluster_id)
    cl_ids: dict = {}
    clus = np.array([-1 if c == -1 else cl_ids.setdefault(c, len(cl_ids)) for c in clus])
    return kinds, ident, clus


def _category_block(kinds, ident, clus, rows: slice) -> np.ndarray:
    k1, k2 = kinds[rows, None], kinds[None, :]
    same_id = (ident[rows, None] == ident[None, :]) & (ident[rows, None] >= 0)
    same_cl = (clus[rows, None] == clus[None, :]) & (clus[rows, None] >= 0)
    both_valid = (k1 == 1) & (k2 == 1)
    has_fp = (k1 == 0) | (k2 == 0)
    has_fn = (k1 == 2) | (k2 == 2)
    cat = np.full(same_id.shape, _BLUE, dtype=np.int8)
    cat[both_valid & same_id & same_cl] = _WHITE
    cat[both_valid & same_id & ~same_cl] = _MAGENTA
    cat[both_valid & ~same_id & same_cl] = _CYAN
    cat[has_fp & same_cl] = _GREEN
    cat[has_fn & same_id] = _RED
    return cat


def pair_category_matrix(tuples: Sequence[EvalTuple]) -> np.ndarray:
    """``T x T`` category codes (index into ``CATEGORIES``). The diagonal
    holds self-pair categories; valid tuples show white there."""
    kinds, ident, clus = _encode(tuples)
    n = len(tuples)
    cat = _category_block(kinds, ident, clus, slice(0, n))
    diag = np.where(kinds == 0, _GREEN, np.where(kinds == 2, _RED, _WHITE))
    cat[np.arange(n), np.arange(n)] = diag
    return cat


def categorize_pairs(tuples: Sequence[EvalTuple], block: int = 2048) -> PairCategoryCounts:
    kinds, ident, clus = _encode(tuples)
    n = len(tuples)
    counts = np.zeros(6, dtype=np.int64)
    for start in range(0, n, block):
        stop = min(n, start + block)
        cat = _category_block(kinds, ident, clus, slice(start, stop))
        upper = np.arange(n)[None, :] > np.arange(start, stop)[:, None]
        counts += np.bincount(cat[upper], minlength=6)
    counts[_GREEN] += int(np.sum(kinds == 0))
    counts[_RED] += int(np.sum(kinds == 2))
    return PairCategoryCounts(*(int(c) for c in counts))


def upp_upr(counts: PairCategoryCounts):
    p_den = counts.white + counts.cyan + counts.green
    r_den = counts.white + counts.magenta + counts.red
    if p_den == 0:
        raise ZeroDivisionError("UPP undefined: no clustered pairs")
    if r_den == 0:
        raise ZeroDivisionError("UPR undefined: no same-identity pairs")
    return counts.white / p_den, counts.white / r_den


def f_alpha(upp: float, upr: float, alpha: float = 0.5) -> float:
    """Weighted harmonic mean ``1 / (alpha / UPP + (1 - alpha) / UPR)``.

    Zero precision or recall gives 0 by convention.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if upp <= 0 or upr <= 0:
        return 0.0
    return 1.0 / (alpha / upp + (1.0 - alpha) / upr)


def display_order(tuples: Sequence[EvalTuple]) -> list:
    """False positives, then valid tuples grouped by identity, then false
    negatives grouped by identity; input order within groups."""
    fp = [k for k, t in enumerate(tuples) if t.kind == FALSE_POSITIVE]
    valid = sorted((k for k, t in enumerate(tuples) if t.kind == VALID), key=lambda k: str(tuples[k].identity))
    fn = sorted((k for k, t in enumerate(tuples) if t.kind == FALSE_NEGATIVE), key=lambda k: str(tuples[k].identity))
    return fp + valid + fn


def export_matrix(tuples: Sequence[EvalTuple], path, counts: Optional[PairCategoryCounts] = None) -> np.ndarray:
    """Write the pair-category matrix as a binary PPM; returns the RGB array."""
    order = display_order(tuples)
    cat = pair_category_matrix([tuples[k] for k in order])
    if counts is not None:
        tally = np.bincount(cat[np.triu_indices(len(order), k=1)], minlength=6)
        tally[_GREEN] += sum(t.kind == FALSE_POSITIVE for t in tuples)
        tally[_RED] += sum(t.kind == FALSE_NEGATIVE for t in tuples)
        if tuple(tally) != tuple(counts.as_dict().values()):
            raise DataValidationError("counts do not match the tuples being exported")
    palette = np.array([COLORS[c] for c in CATEGORIES], dtype=np.uint8)
    rgb = palette[cat]
    n = len(order)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{n} {n}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
    return rgb


def read_ppm(path) -> np.ndarray:
    raw = open(path, "rb").read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6":
        raise DataValidationError(f"{path}: not a binary PPM")
    w, h, depth = int(parts[1]), int(parts[2]), int(parts[3])
    if depth != 255:
        raise DataValidationError(f"{path}: unsupported max value {depth}")
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


def evaluate(detections, annotations, cluster_ids, alphas=(0.5,), match_iou: float = 0.5) -> dict:
    """Match, categorize and score in one call."""
    tuples = match_detections(detections, annotations, match_iou, cluster_ids)
    counts = categorize_pairs(tuples)
    upp, upr = upp_upr(counts)
    report = {
        "n_valid": sum(t.kind == VALID for t in tuples),
        "n_false_positive": sum(t.kind == FALSE_POSITIVE for t in tuples),
        "n_false_negative": sum(t.kind == FALSE_NEGATIVE for t in tuples),
        **counts.as_dict(),
        "upp": upp,
        "upr": upr,
    }
    for a in alphas:
        report[f"f_{a:g}"] = f_alpha(upp, upr, a)
    return {"tuples": tuples, "counts": counts, "report": report}
