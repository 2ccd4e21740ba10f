"""Shared domain types, file formats and seeded randomness."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

RNG_ALGORITHM = "PCG64"

_MAGIC = b"FEAT"
_VERSION = 1
_HEADER = struct.Struct("<4sIII")

BOX_COLUMNS = ("frame", "x", "y", "w", "h", "source", "feature_index", "identity")
SOURCES = ("detector", "tracker")


class DataValidationError(ValueError):
    """Input data violates a documented format or invariant."""


# --------------------------------------------------------------------------
# randomness
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RngSpec:
    """A 64-bit seed plus the name of the bit generator it drives."""

    seed: int = 0
    algorithm: str = RNG_ALGORITHM

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.algorithm != RNG_ALGORITHM:
            raise ValueError(f"unsupported rng algorithm {self.algorithm!r}")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(int(self.seed)))

    def derive(self, index: int) -> "RngSpec":
        """Seed for the ``index``-th independent sub-task (seed XOR index)."""
        return RngSpec(int(self.seed) ^ int(index), self.algorithm)


def as_rng(rng) -> RngSpec:
    if rng is None:
        return RngSpec(0)
    if isinstance(rng, RngSpec):
        return rng
    return RngSpec(int(rng))


# --------------------------------------------------------------------------
# feature matrices
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Read-only ``n_items x n_dims`` float64 matrix with finite entries."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise DataValidationError(f"feature matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataValidationError("empty matrix")
        bad = np.argwhere(~np.isfinite(arr))
        if len(bad):
            r, c = bad[0]
            raise DataValidationError(
                f"non-finite value {arr[r, c]!r} at row {r + 1}, col {c + 1}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n_items(self) -> int:
        return self.values.shape[0]

    @property
    def n_dims(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)

    def __len__(self):
        return self.n_items

    def __getitem__(self, key):
        return self.values[key]


def as_features(x) -> FeatureMatrix:
    return x if isinstance(x, FeatureMatrix) else FeatureMatrix(x)


@dataclass(frozen=True, eq=False)
class GallerySet:
    """Reference gallery, plus the optional super-gallery used for averaging.

    ``g_sim`` is the simulated gallery size drawn from the super-gallery.
    """

    gallery: FeatureMatrix
    super_gallery: Optional[FeatureMatrix] = None
    g_sim: int = 50

    def __post_init__(self):
        object.__setattr__(self, "gallery", as_features(self.gallery))
        if self.super_gallery is not None:
            sg = as_features(self.super_gallery)
            object.__setattr__(self, "super_gallery", sg)
            if sg.n_dims != self.gallery.n_dims:
                raise DataValidationError(
                    f"super-gallery has {sg.n_dims} dims, gallery has {self.gallery.n_dims}"
                )
            if not 1 <= self.g_sim <= sg.n_items:
                raise DataValidationError(
                    f"g_sim must lie in [1, {sg.n_items}], got {self.g_sim}"
                )

    @property
    def n_dims(self) -> int:
        return self.gallery.n_dims

    def check_compatible(self, feats: FeatureMatrix) -> None:
        if feats.n_dims != self.n_dims:
            raise DataValidationError(
                f"dimension mismatch: features have {feats.n_dims} dims, "
                f"gallery has {self.n_dims}"
            )


def synth_features(n: int, f: int, rng=None, distribution: str = "uniform01") -> FeatureMatrix:
    """I.i.d. features from ``uniform01`` ([0, 1)) or ``gaussian`` (standard normal)."""
    if n < 1 or f < 1:
        raise ValueError(f"n and f must be >= 1, got n={n}, f={f}")
    gen = as_rng(rng).generator()
    if distribution == "uniform01":
        vals = gen.random((n, f))
    elif distribution == "gaussian":
        vals = gen.standard_normal((n, f))
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    return FeatureMatrix(vals)


def load_features(path, format: Optional[str] = None, expect_dims: Optional[int] = None) -> FeatureMatrix:
    """Load a feature matrix from the binary ``FEAT`` format or headerless CSV.

    ``format`` defaults to ``binary`` for ``.feat``/``.bin`` suffixes and
    ``csv`` otherwise.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    if format is None:
        format = "binary" if path.suffix in (".feat", ".bin") else "csv"
    if format == "binary":
        fm = _load_binary(path)
    elif format == "csv":
        fm = _load_csv(path)
    else:
        raise ValueError(f"unknown feature format {format!r}")
    if expect_dims is not None and fm.n_dims != expect_dims:
        raise DataValidationError(
            f"{path}: expected {expect_dims} dims, file has {fm.n_dims}"
        )
    return fm


def _load_binary(path: Path) -> FeatureMatrix:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataValidationError(f"{path}: malformed header (file too short)")
    magic, version, n, f = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise DataValidationError(f"{path}: malformed header (bad magic {magic!r})")
    if version != _VERSION:
        raise DataValidationError(f"{path}: unsupported version {version}")
    if n == 0 or f == 0:
        raise DataValidationError(f"{path}: empty matrix")
    expected = _HEADER.size + 4 * n * f
    if len(raw) < expected:
        raise DataValidationError(
            f"{path}: truncated payload ({len(raw)} bytes, expected {expected})"
        )
    if len(raw) > expected:
        raise DataValidationError(f"{path}: {len(raw) - expected} trailing bytes")
    vals = np.frombuffer(raw, dtype="<f4", count=n * f, offset=_HEADER.size)
    return FeatureMatrix(vals.astype(np.float64).reshape(n, f))


def _load_csv(path: Path) -> FeatureMatrix:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise DataValidationError(f"{path}: row {lineno}: {exc}") from None
            if rows and len(vals) != len(rows[0]):
                raise DataValidationError(
                    f"{path}: row {lineno} has {len(vals)} columns, expected {len(rows[0])}"
                )
            rows.append(vals)
    if not rows:
        raise DataValidationError(f"{path}: empty matrix")
    return FeatureMatrix(np.array(rows))


def save_features(feats, path, format: Optional[str] = None) -> None:
    feats = as_features(feats)
    path = Path(path)
    if format is None:
        format = "binary" if path.suffix in (".feat", ".bin") else "csv"
    if format == "binary":
        header = _HEADER.pack(_MAGIC, _VERSION, feats.n_items, feats.n_dims)
        path.write_bytes(header + feats.values.astype("<f4").tobytes())
    elif format == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in feats.values:
                w.writerow([repr(float(v)) for v in row])
    else:
        raise ValueError(f"unknown feature format {format!r}")


# --------------------------------------------------------------------------
# boxes and tracklets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxObservation:
    frame: int
    x: float
    y: float
    w: float
    h: float
    source: str = "detector"
    feature_index: Optional[int] = None
    identity: Optional[str] = None

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise DataValidationError(f"box must have positive size, got w={self.w}, h={self.h}")
        if self.frame < 0:
            raise DataValidationError(f"frame must be >= 0, got {self.frame}")
        if self.source not in SOURCES:
            raise DataValidationError(f"unknown box source {self.source!r}")

    @property
    def confirmed(self) -> bool:
        return self.source == "detector"

    def at_frame(self, frame: int, source: str = "tracker") -> "BoxObservation":
        return BoxObservation(frame, self.x, self.y, self.w, self.h, source)


@dataclass(frozen=True)
class Tracklet:
    id: int
    observations: tuple
    provisional_tail: int = 0

    def __post_init__(self):
        obs = tuple(self.observations)
        object.__setattr__(self, "observations", obs)
        if not obs:
            raise DataValidationError(f"tracklet {self.id} is empty")
        frames = [o.frame for o in obs]
        if any(b != a + 1 for a, b in zip(frames, frames[1:])):
            raise DataValidationError(f"tracklet {self.id} frames are not consecutive")
        tail = 0
        for o in reversed(obs):
            if o.confirmed:
                break
            tail += 1
        if tail != self.provisional_tail:
            raise DataValidationError(
                f"tracklet {self.id}: provisional_tail={self.provisional_tail} "
                f"but {tail} trailing tracker-only boxes"
            )

    @property
    def start(self) -> int:
        return self.observations[0].frame

    @property
    def end(self) -> int:
        return self.observations[-1].frame

    @property
    def frames(self) -> range:
        return range(self.start, self.end + 1)

    @property
    def feature_indices(self) -> list:
        return [o.feature_index for o in self.observations if o.feature_index is not None]

    def __len__(self):
        return len(self.observations)


def _opt_int(s: str) -> Optional[int]:
    s = s.strip()
    return int(s) if s else None


def _opt_str(s: str) -> Optional[str]:
    s = s.strip()
    return s if s else None


def read_boxes(path) -> list:
    """Read a boxes CSV. Extra columns (e.g. ``tracklet_id``) are returned in a
    parallel list of dicts as the second element."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    boxes, extras = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in BOX_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataValidationError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                boxes.append(BoxObservation(
                    frame=int(row["frame"]),
                    x=float(row["x"]), y=float(row["y"]),
                    w=float(row["w"]), h=float(row["h"]),
                    source=row["source"].strip() or "detector",
                    feature_index=_opt_int(row["feature_index"]),
                    identity=_opt_str(row["identity"]),
                ))
            except (ValueError, DataValidationError) as exc:
                raise DataValidationError(f"{path}: line {lineno}: {exc}") from None
            extras.append({k: v for k, v in row.items() if k not in BOX_COLUMNS})
    return boxes, extras


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_boxes(path, boxes: Iterable[BoxObservation], extra: Optional[Sequence[dict]] = None) -> None:
    boxes = list(boxes)
    extra_cols = list(extra[0].keys()) if extra else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(BOX_COLUMNS) + extra_cols)
        for k, b in enumerate(boxes):
            row = [b.frame, b.x, b.y, b.w, b.h, b.source, b.feature_index, b.identity]
            if extra_cols:
                row += [extra[k][c] for c in extra_cols]
            w.writerow([_fmt(v) for v in row])


def tracklets_from_rows(boxes: Sequence[BoxObservation], tracklet_ids: Sequence[int]) -> list:
    """Regroup boxes read from a tracklets CSV into ``Tracklet`` objects."""
    groups: dict = {}
    for b, tid in zip(boxes, tracklet_ids):
        groups.setdefault(int(tid), []).append(b)
    out = []
    for tid in sorted(groups):
        obs = sorted(groups[tid], key=lambda o: o.frame)
        tail = 0
        for o in reversed(obs):
            if o.confirmed:
                break
            tail += 1
        out.append(Tracklet(tid, tuple(obs), tail))
    return out


@dataclass(frozen=True)
class Clustering:
    """Partition of item indices; ``labels[i]`` is the cluster id of item ``i``."""

    labels: np.ndarray
    constraints: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        cons = frozenset(tuple(sorted(p)) for p in self.constraints)
        object.__setattr__(self, "constraints", cons)
        for i, j in cons:
            if labels[i] == labels[j]:
                raise DataValidationError(f"constrained pair ({i}, {j}) shares cluster {labels[i]}")

    @property
    def n_items(self) -> int:
        return len(self.labels)

    @property
    def n_clusters(self) -> int:
        return len(np.unique(self.labels))

    def clusters(self) -> list:
        groups: dict = {}
        for i, c in enumerate(self.labels):
            groups.setdefault(int(c), []).append(i)
        return [groups[c] for c in sorted(groups)]


def relabel_first_appearance(labels) -> np.ndarray:
    """Renumber cluster ids densely in order of first appearance."""
    mapping: dict = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, c in enumerate(labels):
        out[i] = mapping.setdefault(c, len(mapping))
    return out
