"""Fuse per-frame detections with forward tracker proposals into tracklets.

Each frame, every open tracklet asks its tracker for a box in that frame.
Proposals and detections are paired by maximum-total-IoU assignment, gated
at ``iou_threshold``. A matched detection extends its tracklet and clears
the tracklet's provisional tail. An unmatched detection opens a new
tracklet. An unmatched proposal is appended provisionally; once more than
``patience_alpha`` consecutive provisional boxes pile up, the tracklet is
closed and those boxes are dropped. Tracklets still open at the end of the
stream lose their provisional tails too.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Mapping, Optional, Protocol, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import BoxObservation, DataValidationError, Tracklet, read_boxes, write_boxes


@dataclass(frozen=True)
class FusionConfig:
    iou_threshold: float = 0.3
    patience_alpha: int = 10

    def __post_init__(self):
        if not 0 < self.iou_threshold <= 1:
            raise ValueError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        if self.patience_alpha < 0:
            raise ValueError("patience_alpha must be >= 0")


def iou(b1: BoxObservation, b2: BoxObservation) -> float:
    ix = min(b1.x + b1.w, b2.x + b2.w) - max(b1.x, b2.x)
    iy = min(b1.y + b1.h, b2.y + b2.h) - max(b1.y, b2.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (b1.w * b1.h + b2.w * b2.h - inter)


def iou_matrix(rows: Sequence[BoxObservation], cols: Sequence[BoxObservation]) -> np.ndarray:
    m = np.zeros((len(rows), len(cols)))
    for r, a in enumerate(rows):
        for c, b in enumerate(cols):
            m[r, c] = iou(a, b)
    return m


def hungarian_match(weights, min_weight: Optional[float] = None) -> list:
    """Maximum-total-weight one-to-one assignment of rows to columns.

    Unequal sides are fine; the surplus stays unassigned. Pairs whose
    weight is below ``min_weight`` are dropped after the assignment.
    Returns ``(row, col)`` pairs sorted by row.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("weights must be a 2-D matrix")
    if w.size == 0:
        return []
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    rows, cols = linear_sum_assignment(w, maximize=True)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols)]
    if min_weight is not None:
        pairs = [(r, c) for r, c in pairs if w[r, c] >= min_weight]
    return sorted(pairs)


# --------------------------------------------------------------------------
# trackers
# --------------------------------------------------------------------------


class TrackerAdapter(Protocol):
    def propose(self, confirmed: Sequence[BoxObservation], frame: int) -> Optional[BoxObservation]:
        """Box for ``frame`` given the tracklet's confirmed boxes so far
        (the last one is the anchor), or ``None`` if the target is lost."""


class ConstantPositionTracker:
    def propose(self, confirmed, frame):
        return confirmed[-1].at_frame(frame)


class ConstantVelocityTracker:
    """Extrapolates the displacement between the last two confirmed boxes."""

    def propose(self, confirmed, frame):
        last = confirmed[-1]
        if len(confirmed) < 2:
            return last.at_frame(frame)
        prev = confirmed[-2]
        dt = last.frame - prev.frame
        k = (frame - last.frame) / dt
        return BoxObservation(
            frame,
            last.x + k * (last.x - prev.x),
            last.y + k * (last.y - prev.y),
            last.w, last.h, "tracker",
        )


class ScriptedTracker:
    """Replays pre-recorded tracks.

    ``tracks`` maps a track key to ``{frame: box}``. The tracklet is
    attributed to the track whose box at the anchor's frame overlaps the
    anchor best (IoU >= ``min_iou``); its box at the requested frame is
    returned.
    """

    def __init__(self, tracks: Mapping, min_iou: float = 0.5):
        self.tracks = {k: dict(v) for k, v in tracks.items()}
        self.min_iou = min_iou

    @classmethod
    def from_boxes(cls, boxes: Iterable[BoxObservation], min_iou: float = 0.5) -> "ScriptedTracker":
        tracks: dict = {}
        for b in boxes:
            if b.identity is None:
                raise DataValidationError("scripted tracker boxes need an identity (track key)")
            tracks.setdefault(b.identity, {})[b.frame] = b
        return cls(tracks, min_iou)

    @classmethod
    def from_csv(cls, path, min_iou: float = 0.5) -> "ScriptedTracker":
        boxes, _ = read_boxes(path)
        return cls.from_boxes(boxes, min_iou)

    def propose(self, confirmed, frame):
        anchor = confirmed[-1]
        best, best_iou = None, self.min_iou
        for key in sorted(self.tracks, key=str):
            box = self.tracks[key].get(anchor.frame)
            if box is not None:
                v = iou(anchor, box)
                if v >= best_iou and (best is None or v > best_iou):
                    best, best_iou = key, v
        if best is None:
            return None
        box = self.tracks[best].get(frame)
        return None if box is None else box.at_frame(frame)


def make_tracker(spec: str) -> TrackerAdapter:
    """``constant-position``, ``constant-velocity`` or ``scripted:<boxes.csv>``."""
    if spec == "constant-position":
        return ConstantPositionTracker()
    if spec == "constant-velocity":
        return ConstantVelocityTracker()
    if spec.startswith("scripted:"):
        return ScriptedTracker.from_csv(spec.split(":", 1)[1])
    raise ValueError(f"unknown tracker spec {spec!r}")


# --------------------------------------------------------------------------
# fusion
# --------------------------------------------------------------------------


class _OpenTracklet:
    __slots__ = ("id", "obs", "confirmed", "tail")

    def __init__(self, tid: int, det: BoxObservation):
        self.id = tid
        self.obs = [det]
        self.confirmed = [det]
        self.tail = 0

    def confirm(self, det):
        self.obs.append(det)
        self.confirmed.append(det)
        self.tail = 0

    def extend_provisionally(self, box):
        self.obs.append(box)
        self.tail += 1

    def close(self) -> Tracklet:
        keep = self.obs[: len(self.obs) - self.tail]
        return Tracklet(self.id, tuple(keep), 0)


def fuse(detections: Iterable[BoxObservation], tracker: TrackerAdapter,
         cfg: FusionConfig = FusionConfig()) -> List[Tracklet]:
    """Build tracklets from a frame-ordered detection stream.

    Frames without detections between the first and last detection are
    still stepped through. Returns tracklets sorted by id; ids are dense in
    creation order.
    """
    by_frame: dict = {}
    last = -1
    for d in detections:
        if d.frame < last:
            raise DataValidationError(f"out-of-order frames: {d.frame} after {last}")
        if d.source != "detector":
            raise DataValidationError("fuse expects detector boxes only")
        last = d.frame
        by_frame.setdefault(d.frame, []).append(d)
    if not by_frame:
        return []

    open_: List[_OpenTracklet] = []
    done: List[Tracklet] = []
    next_id = 0
    for frame in range(min(by_frame), max(by_frame) + 1):
        dets = by_frame.get(frame, [])
        live, proposals = [], []
        for t in open_:
            p = tracker.propose(t.confirmed, frame)
            if p is None:
                done.append(t.close())
            else:
                live.append(t)
                proposals.append(p)
        matches = hungarian_match(iou_matrix(proposals, dets), cfg.iou_threshold)
        matched_rows = {r for r, _ in matches}
        matched_cols = {c for _, c in matches}
        open_ = []
        for r, t in enumerate(live):
            if r in matched_rows:
                continue
            t.extend_provisionally(proposals[r])
            if t.tail > cfg.patience_alpha:
                done.append(t.close())
            else:
                open_.append(t)
        for r, c in matches:
            live[r].confirm(dets[c])
            open_.append(live[r])
        for c, d in enumerate(dets):
            if c not in matched_cols:
                open_.append(_OpenTracklet(next_id, d))
                next_id += 1
        open_.sort(key=lambda t: t.id)
    done.extend(t.close() for t in open_)
    return sorted(done, key=lambda t: t.id)


def write_tracklets(path, tracklets: Sequence[Tracklet]) -> None:
    boxes, extra = [], []
    for t in tracklets:
        for o in t.observations:
            boxes.append(o)
            extra.append({"tracklet_id": t.id, "confirmed": int(o.confirmed)})
    write_boxes(path, boxes, extra)
