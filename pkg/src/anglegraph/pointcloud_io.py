"""Reading Velodyne scans, JSON-lines labels and detection files."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FileUnreadable, FileUnwritable, MalformedRecordLength, ParseError, RangeError

RECORD_BYTES = 16
MIN_RANGE = 1e-6

CATEGORIES = ("Car", "Pedestrian", "Cyclist", "DontCare")
DIFFICULTIES = ("Easy", "Moderate", "Hard")

_VELODYNE_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class PointCloud:
    """Ordered LiDAR returns.

    ``xyz`` is (N, 3) float64 in the sensor frame, ``reflectance`` is (N,)
    in [0, 1]. Point order is exactly the order read from disk.
    """

    xyz: np.ndarray
    reflectance: np.ndarray
    frame_id: str = ""

    def __post_init__(self):
        xyz = np.ascontiguousarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        refl = np.ascontiguousarray(self.reflectance, dtype=np.float64).reshape(-1)
        if len(refl) != len(xyz):
            raise ValueError("xyz and reflectance lengths differ")
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "reflectance", refl)

    def __len__(self):
        return len(self.xyz)

    @classmethod
    def from_points(cls, points, frame_id=""):
        """Build from an iterable of ``(x, y, z, reflectance)`` tuples."""
        arr = np.asarray(list(points), dtype=np.float64).reshape(-1, 4)
        return cls(arr[:, :3], arr[:, 3], frame_id)


@dataclass(frozen=True)
class GroundTruthBox:
    category: str
    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float
    difficulty: str | None = None

    @property
    def is_dontcare(self):
        return self.category == "DontCare"


@dataclass(frozen=True)
class Box7DoF:
    category: str
    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float
    score: float = 1.0

    def values(self):
        return (self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw)


def wrap_yaw(yaw):
    """Wrap an angle into (-pi, pi]."""
    y = math.remainder(yaw, 2 * math.pi)
    return math.pi if y == -math.pi else y


def clean_points(xyz, reflectance):
    """Drop non-finite and near-origin returns, clamp reflectance to [0, 1]."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    reflectance = np.asarray(reflectance, dtype=np.float64).reshape(-1)
    finite = np.isfinite(xyz).all(axis=1) & np.isfinite(reflectance)
    keep = finite.copy()
    keep[finite] = np.linalg.norm(xyz[finite], axis=1) >= MIN_RANGE
    return xyz[keep], np.clip(reflectance[keep], 0.0, 1.0)


def read_velodyne_bin(path):
    """Decode a KITTI Velodyne scan: headerless little-endian float32 (x, y, z, r) records."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    if len(raw) % RECORD_BYTES:
        raise MalformedRecordLength(
            f"{path}: {len(raw)} bytes is not a multiple of {RECORD_BYTES}"
        )
    records = np.frombuffer(raw, dtype=_VELODYNE_DTYPE).reshape(-1, 4).astype(np.float64)
    xyz, refl = clean_points(records[:, :3], records[:, 3])
    return PointCloud(xyz, refl, frame_id=path.stem)


def write_velodyne_bin(path, cloud):
    records = np.column_stack([cloud.xyz, cloud.reflectance]).astype(_VELODYNE_DTYPE)
    atomic_write_bytes(path, records.tobytes())


_LABEL_KEYS = ("category", "cx", "cy", "cz", "l", "w", "h", "yaw", "difficulty")


def _parse_box(obj, lineno):
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", lineno)
    missing = [k for k in _LABEL_KEYS[:8] if k not in obj]
    if missing:
        raise ParseError(f"missing keys {missing}", lineno)
    category = obj["category"]
    if category not in CATEGORIES:
        raise ParseError(f"unknown category {category!r}", lineno)
    try:
        vals = [float(obj[k]) for k in ("cx", "cy", "cz", "l", "w", "h", "yaw")]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"non-numeric box field: {exc}", lineno) from exc
    if not all(math.isfinite(v) for v in vals):
        raise RangeError(f"line {lineno}: non-finite box field")
    cx, cy, cz, l, w, h, yaw = vals
    if min(l, w, h) <= 0:
        raise RangeError(f"line {lineno}: box dimensions must be positive, got {(l, w, h)}")
    difficulty = obj.get("difficulty")
    if category != "DontCare" and difficulty not in DIFFICULTIES:
        raise ParseError(f"difficulty must be one of {DIFFICULTIES}, got {difficulty!r}", lineno)
    return GroundTruthBox(category, cx, cy, cz, l, w, h, wrap_yaw(yaw), difficulty)


def read_jsonl(path):
    """Yield ``(line_number, object)`` for each non-blank line of a JSON Lines file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), lineno) from exc


def read_labels(path):
    """Read ground-truth boxes (LiDAR frame) from a JSON Lines file, in file order."""
    return [_parse_box(obj, lineno) for lineno, obj in read_jsonl(path)]


def write_labels(path, boxes):
    lines = []
    for b in boxes:
        rec = {"category": b.category, "cx": b.cx, "cy": b.cy, "cz": b.cz,
               "l": b.l, "w": b.w, "h": b.h, "yaw": b.yaw}
        if b.difficulty is not None:
            rec["difficulty"] = b.difficulty
        lines.append(json.dumps(rec))
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def detection_to_json(det):
    return json.dumps({
        "category": det.category,
        "cx": det.cx, "cy": det.cy, "cz": det.cz,
        "l": det.l, "w": det.w, "h": det.h,
        "yaw": det.yaw,
        "score": det.score,
    })


def write_detections(path, detections):
    """One detection per line with a fixed key order; floats use repr so they round-trip."""
    text = "".join(detection_to_json(d) + "\n" for d in detections)
    atomic_write_text(path, text)


def read_detections(path):
    dets = []
    for lineno, obj in read_jsonl(path):
        try:
            dets.append(Box7DoF(
                obj["category"], *(float(obj[k]) for k in ("cx", "cy", "cz", "l", "w", "h", "yaw")),
                score=float(obj["score"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad detection record: {exc}", lineno) from exc
    return dets


def atomic_write_bytes(path, data):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise FileUnwritable(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))
