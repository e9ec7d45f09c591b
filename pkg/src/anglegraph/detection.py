"""Box decoding, rotated bird's-eye-view IoU and duplicate merging."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonForegroundCategory
from .gnn.targets import BIN_CENTER, MEDIANS, VIEWS
from .pointcloud_io import Box7DoF, wrap_yaw


@dataclass(frozen=True)
class MergeConfig:
    iou_threshold: float = 0.5
    score_floor: float = 0.3


def _split_category(category):
    if isinstance(category, tuple):
        return category
    if ":" in category:
        name, view = category.split(":", 1)
        return name, view
    raise NonForegroundCategory(f"{category!r} is not a foreground view class")


def decode_box(vertex, loc, category, medians=MEDIANS, score=1.0):
    """Inverse of :func:`anglegraph.gnn.targets.encode_box_target`.

    ``category`` is a view class such as ``"Car:front"`` or ``("Car", "front")``.
    """
    name, view = _split_category(category)
    if name not in medians or view not in VIEWS:
        raise NonForegroundCategory(f"{category!r} is not a foreground view class")
    lm, hm, wm = medians[name]
    vx, vy, vz = (float(v) for v in vertex)
    dx, dy, dz, dl, dh, dw, dt = (float(v) for v in loc)
    return Box7DoF(
        name,
        vx + dx * lm, vy + dy * hm, vz + dz * wm,
        lm * math.exp(dl), wm * math.exp(dw), hm * math.exp(dh),
        wrap_yaw(BIN_CENTER[view] + dt * (math.pi / 2)),
        score,
    )


def bev_corners(box):
    """Rectangle corners in counter-clockwise order, shape (4, 2)."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hl, hw = box.l / 2, box.w / 2
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.cx, box.cy])


def polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_polygon(subject, clipper):
    """Sutherland-Hodgman: part of ``subject`` inside the convex CCW polygon ``clipper``."""
    out = [tuple(p) for p in subject]
    n = len(clipper)
    for k in range(n):
        if not out:
            break
        ax, ay = clipper[k]
        bx, by = clipper[(k + 1) % n]

        def side(p):
            return (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax)

        inp, out = out, []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_intersect(prev, cur, sp, sc))
            prev, sp = cur, sc
    return np.array(out).reshape(-1, 2)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _box_rows(boxes):
    return np.array([[b.cx, b.cy, b.l, b.w, b.yaw] for b in boxes], dtype=np.float64).reshape(-1, 5)


def _corners_many(rows):
    c, s = np.cos(rows[:, 4]), np.sin(rows[:, 4])
    hl, hw = rows[:, 2] / 2, rows[:, 3] / 2
    lx = np.stack([hl, -hl, -hl, hl], axis=1)
    ly = np.stack([hw, hw, -hw, -hw], axis=1)
    x = lx * c[:, None] - ly * s[:, None] + rows[:, 0:1]
    y = lx * s[:, None] + ly * c[:, None] + rows[:, 1:2]
    return np.stack([x, y], axis=2)


def _clip_many(subject, clipper):
    """Batched Sutherland-Hodgman. ``subject`` (P, 4, 2), ``clipper`` (P, 4, 2) CCW.

    Returns vertex slots (P, K, 2) and counts (P,).
    """
    poly = subject.copy()
    n = np.full(len(poly), 4)
    rows = np.arange(len(poly))[:, None]
    for k in range(4):
        a = clipper[:, k][:, None, :]
        b = clipper[:, (k + 1) % 4][:, None, :]
        slots = poly.shape[1]
        idx = np.arange(slots)[None, :]
        valid = idx < n[:, None]
        prev_idx = np.where(idx == 0, np.maximum(n[:, None] - 1, 0), idx - 1)
        prev = poly[rows, prev_idx]
        side = (b[..., 0] - a[..., 0]) * (poly[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (poly[..., 0] - a[..., 0])
        sp = side[rows, prev_idx]
        cur_in = side >= 0
        prev_in = sp >= 0
        cross = valid & (cur_in != prev_in)
        denom = np.where(cross, sp - side, 1.0)
        t = np.where(cross, sp / denom, 0.0)[..., None]
        inter = prev + t * (poly - prev)
        cand = np.stack([inter, poly], axis=2).reshape(len(poly), 2 * slots, 2)
        keep = np.stack([cross, valid & cur_in], axis=2).reshape(len(poly), 2 * slots)
        n = keep.sum(axis=1)
        width = max(int(n.max()) if len(n) else 0, 1)
        order = np.argsort(~keep, axis=1, kind="stable")[:, :width]
        poly = cand[rows, order]
    return poly, n


def _area_many(poly, n):
    slots = poly.shape[1]
    idx = np.arange(slots)[None, :]
    nxt = np.where(idx + 1 < n[:, None], idx + 1, 0)
    rows = np.arange(len(poly))[:, None]
    q = poly[rows, nxt]
    term = poly[..., 0] * q[..., 1] - poly[..., 1] * q[..., 0]
    term = np.where(idx < n[:, None], term, 0.0)
    area = 0.5 * np.abs(term.sum(axis=1))
    return np.where(n >= 3, area, 0.0)


def _iou_rows(ra, rb):
    """IoU for aligned row arrays ``ra``, ``rb`` of shape (P, 5)."""
    out = np.zeros(len(ra))
    area_a = ra[:, 2] * ra[:, 3]
    area_b = rb[:, 2] * rb[:, 3]
    # cheap reject on circumscribed circles
    reach = 0.5 * (np.hypot(ra[:, 2], ra[:, 3]) + np.hypot(rb[:, 2], rb[:, 3]))
    live = (area_a > 0) & (area_b > 0) & (np.hypot(ra[:, 0] - rb[:, 0], ra[:, 1] - rb[:, 1]) < reach)
    if live.any():
        ca, cb = _corners_many(ra[live]), _corners_many(rb[live])
        # centre both polygons on the first so coordinates stay small
        shift = ra[live][:, None, 0:2]
        inter = _area_many(*_clip_many(ca - shift, cb - shift))
        union = area_a[live] + area_b[live] - inter
        out[live] = np.clip(np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0), 0.0, 1.0)
    return out


def bev_iou(a, b):
    return float(_iou_rows(_box_rows([a]), _box_rows([b]))[0])


def iou_one_to_many(box, boxes):
    rb = _box_rows(boxes)
    return _iou_rows(np.repeat(_box_rows([box]), len(rb), axis=0), rb)


def iou_matrix(boxes_a, boxes_b):
    ra, rb = _box_rows(boxes_a), _box_rows(boxes_b)
    na, nb = len(ra), len(rb)
    if na == 0 or nb == 0:
        return np.zeros((na, nb))
    return _iou_rows(np.repeat(ra, nb, axis=0), np.tile(rb, (na, 1))).reshape(na, nb)


def _fuse(cluster):
    if len(cluster) == 1:
        return cluster[0]
    w = np.array([b.score for b in cluster])
    vals = np.array([b.values() for b in cluster])
    mean = (w[:, None] * vals[:, :6]).sum(axis=0) / w.sum()
    # boxes are pi-periodic in yaw: average on the doubled angle
    two = 2.0 * vals[:, 6]
    yaw = 0.5 * math.atan2(float((w * np.sin(two)).sum()), float((w * np.cos(two)).sum()))
    return Box7DoF(cluster[0].category, *(float(v) for v in mean), wrap_yaw(yaw), float(w.max()))


def _merge_once(items, iou_threshold):
    # items: list of (input_index, box), sorted by score desc then index
    out = []
    for cat in dict.fromkeys(b.category for _, b in items):
        pool = [(i, b) for i, b in items if b.category == cat]
        used = [False] * len(pool)
        for k, (idx, lead) in enumerate(pool):
            if used[k]:
                continue
            cluster = [lead]
            used[k] = True
            rest = [m for m in range(k + 1, len(pool)) if not used[m]]
            if rest:
                ious = iou_one_to_many(lead, [pool[m][1] for m in rest])
                for m, v in zip(rest, ious):
                    if v > iou_threshold:
                        cluster.append(pool[m][1])
                        used[m] = True
            out.append((idx, _fuse(cluster)))
    out.sort(key=lambda t: (-t[1].score, t[0]))
    return out


def merge_boxes(boxes, cfg=MergeConfig()):
    """Greedy per-category cluster fusion.

    Boxes under ``score_floor`` are dropped. In descending score order each
    surviving box absorbs the remaining boxes of its category with IoU above
    ``iou_threshold``; a cluster becomes one box whose centre and size are
    score-weighted means, whose yaw is a weighted circular mean and whose
    score is the cluster maximum. Passes repeat until nothing merges, so the
    result has no pair above the threshold and merging it again is a no-op.
    """
    items = [(i, b) for i, b in enumerate(boxes) if b.score >= cfg.score_floor]
    items.sort(key=lambda t: (-t[1].score, t[0]))
    while True:
        merged = _merge_once(items, cfg.iou_threshold)
        if len(merged) == len(items):
            return [b for _, b in merged]
        items = merged
