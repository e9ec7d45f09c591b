"""KITTI-style average precision on bird's-eye-view IoU.

Difficulty tiers are nested: evaluating at tier D counts ground truth of
tier D and easier, while harder boxes of the same category are "don't
care" for that tier (a detection on them is neither a hit nor a false
alarm). Detections overlapping a DontCare region by IoU > 0.5 are ignored
as well. AP uses the classic 11-point interpolated recall grid and is
reported on a 0-100 scale.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .detection import iou_matrix
from .errors import UnsortedDetections
from .pointcloud_io import DIFFICULTIES

TP, FP, IGNORED = 1, 0, -1
DONTCARE_IOU = 0.5
RECALL_GRID = np.linspace(0.0, 1.0, 11)
TABLE_CATEGORIES = ("Car", "Cyclist", "Pedestrian")


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: dict = field(default_factory=lambda: {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5})
    categories: tuple = TABLE_CATEGORIES


@dataclass(frozen=True)
class ApResult:
    category: str
    difficulty: str
    ap: float
    tp: int
    fp: int
    fn: int
    num_gt: int


def _tier(d):
    return DIFFICULTIES.index(d)


def match_detections(dets, gts, iou_threshold, difficulty, category=None):
    """Greedy one-to-one matching of score-sorted detections.

    Returns ``(flags, num_gt)`` with one of TP / FP / IGNORED per detection.
    """
    scores = [d.score for d in dets]
    if any(b > a for a, b in zip(scores, scores[1:])):
        raise UnsortedDetections("detections must be sorted by descending score")
    if category is None:
        category = dets[0].category if dets else None
    tier = _tier(difficulty)
    care = [g for g in gts if g.category == category and _tier(g.difficulty) <= tier]
    harder = [g for g in gts if g.category == category and _tier(g.difficulty) > tier]
    dontcare = [g for g in gts if g.is_dontcare]
    iou_care = iou_matrix(dets, care)
    iou_harder = iou_matrix(dets, harder)
    iou_dc = iou_matrix(dets, dontcare)
    matched = np.zeros(len(care), dtype=bool)
    flags = []
    for n in range(len(dets)):
        row = np.where(matched, -1.0, iou_care[n])
        best_k = int(np.argmax(row)) if len(row) else -1
        if best_k >= 0 and row[best_k] >= iou_threshold:
            matched[best_k] = True
            flags.append(TP)
        elif (iou_harder[n] >= iou_threshold).any():
            flags.append(IGNORED)
        elif (iou_dc[n] > DONTCARE_IOU).any():
            flags.append(IGNORED)
        else:
            flags.append(FP)
    return flags, len(care)


def average_precision(flags, num_gt):
    """11-point interpolated AP (0-100) of a ranked TP/FP stream; IGNORED entries are skipped."""
    f = np.array([x for x in flags if x != IGNORED], dtype=np.int64)
    if num_gt == 0:
        return 0.0 if len(f) else 100.0
    if len(f) == 0:
        return 0.0
    tp = np.cumsum(f == TP)
    fp = np.cumsum(f == FP)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    total = 0.0
    for r in RECALL_GRID:
        hit = precision[recall >= r - 1e-12]
        total += hit.max() if len(hit) else 0.0
    return float(100.0 * total / len(RECALL_GRID))


def evaluate(frames, category, difficulty, iou_threshold):
    """AP over many frames: ``frames`` is a sequence of ``(detections, gts)``."""
    ranked = []
    num_gt = 0
    for fidx, (dets, gts) in enumerate(frames):
        dets = sorted((d for d in dets if d.category == category), key=lambda d: -d.score)
        flags, n = match_detections(dets, gts, iou_threshold, difficulty, category)
        num_gt += n
        ranked.extend((-d.score, fidx, k, fl) for k, (d, fl) in enumerate(zip(dets, flags)))
    ranked.sort()
    flags = [r[3] for r in ranked]
    tp = sum(1 for x in flags if x == TP)
    fp = sum(1 for x in flags if x == FP)
    return ApResult(category, difficulty, average_precision(flags, num_gt), tp, fp, num_gt - tp, num_gt)


def map_table(frames, cfg=EvalConfig()):
    """AP for every (category, difficulty) cell."""
    frames = list(frames)
    return [evaluate(frames, c, d, cfg.iou_thresholds[c]) for c in cfg.categories for d in DIFFICULTIES]


def results_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "difficulty", "AP", "TP", "FP", "FN", "GT"])
    for r in results:
        w.writerow([r.category, r.difficulty, f"{r.ap:.2f}", r.tp, r.fp, r.fn, r.num_gt])
    return buf.getvalue()


def results_markdown(rows, categories=TABLE_CATEGORIES):
    """Markdown table with one row per run and E/M/H columns per category.

    ``rows`` maps a row label (e.g. the encoder) to either a list of
    :class:`ApResult` or a dict ``{(category, difficulty): ap}``.
    """
    head = "| Feature encoding | " + " | ".join(f"{c} {d[0]}" for c in categories for d in DIFFICULTIES) + " |"
    sep = "|---|" + "---:|" * (3 * len(categories))
    lines = [head, sep]
    for label, cells in rows.items():
        if not isinstance(cells, dict):
            cells = {(r.category, r.difficulty): r.ap for r in cells}
        vals = []
        for c in categories:
            for d in DIFFICULTIES:
                v = cells.get((c, d))
                vals.append("-" if v is None else f"{v:.2f}")
        lines.append(f"| {label} | " + " | ".join(vals) + " |")
    return "\n".join(lines) + "\n"
