"""Per-vertex training targets.

Each object category is split into two view classes by yaw: ``front``
(yaw folded into [pi/4, 3pi/4)) and ``side`` ([-pi/4, pi/4)), followed
by ``DontCare`` and ``Background``. The car set therefore has 4 classes,
the pedestrian/cyclist set 6.

Box residuals are relative to the vertex and the category's median box::

    dx = (cx - vx) / l_m    dl = ln(l / l_m)
    dy = (cy - vy) / h_m    dh = ln(h / h_m)
    dz = (cz - vz) / w_m    dw = ln(w / w_m)
    dtheta = (yaw - bin_center) / (pi / 2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import VertexOutsideBox

# (l, h, w) in metres
MEDIANS = {
    "Car": (3.88, 1.5, 1.63),
    "Pedestrian": (0.89, 1.76, 0.64),
    "Cyclist": (1.77, 1.74, 0.60),
}
VIEWS = ("front", "side")
BIN_CENTER = {"front": math.pi / 2, "side": 0.0}

LOC_DIM = 7


@dataclass(frozen=True)
class ClassLayout:
    categories: tuple

    @property
    def names(self):
        fg = [f"{c}:{v}" for c in self.categories for v in VIEWS]
        return tuple(fg) + ("DontCare", "Background")

    @property
    def num_classes(self):
        return 2 * len(self.categories) + 2

    @property
    def dontcare(self):
        return self.num_classes - 2

    @property
    def background(self):
        return self.num_classes - 1

    def index(self, category, view):
        return 2 * self.categories.index(category) + VIEWS.index(view)

    def decode(self, cls):
        """(category, view) for a foreground class index, else None."""
        if cls >= 2 * len(self.categories):
            return None
        return self.categories[cls // 2], VIEWS[cls % 2]


def fold_yaw(yaw):
    """Fold a heading into [-pi/4, 3pi/4) using the box's pi-periodicity."""
    y = (yaw + math.pi / 4) % math.pi - math.pi / 4
    if y >= 3 * math.pi / 4:  # guards rounding at the upper edge
        y -= math.pi
    return y


def view_bin(yaw):
    return "front" if fold_yaw(yaw) >= math.pi / 4 else "side"


def points_in_box(points, box, margin=0.0):
    """Boolean mask of the points inside a yaw-rotated 3D box."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dx = p[:, 0] - box.cx
    dy = p[:, 1] - box.cy
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return ((np.abs(lx) <= box.l / 2 + margin)
            & (np.abs(ly) <= box.w / 2 + margin)
            & (np.abs(p[:, 2] - box.cz) <= box.h / 2 + margin))


def encode_box_target(gt, vertex, medians=MEDIANS, view=None):
    """Seven regression values for a vertex inside ``gt``."""
    if not points_in_box(vertex, gt)[0]:
        raise VertexOutsideBox(f"vertex {tuple(vertex)} is outside the {gt.category} box")
    lm, hm, wm = medians[gt.category]
    yaw = fold_yaw(gt.yaw)
    view = view or view_bin(gt.yaw)
    vx, vy, vz = (float(v) for v in vertex)
    return np.array([
        (gt.cx - vx) / lm,
        (gt.cy - vy) / hm,
        (gt.cz - vz) / wm,
        math.log(gt.l / lm),
        math.log(gt.h / hm),
        math.log(gt.w / wm),
        (yaw - BIN_CENTER[view]) / (math.pi / 2),
    ])


@dataclass(frozen=True)
class VertexTargets:
    labels: np.ndarray      # (V,) class index, -1 = excluded (DontCare region)
    box: np.ndarray         # (V, 7), zeros on non-foreground rows
    foreground: np.ndarray  # (V,) bool


def vertex_targets(vertices, boxes, layout, medians=MEDIANS):
    """Label each vertex by the first enclosing box of the active categories.

    Vertices inside only a DontCare box get label -1 and are left out of
    both loss terms; vertices in no box are Background.
    """
    v = len(vertices)
    labels = np.full(v, layout.background, dtype=np.int64)
    box_t = np.zeros((v, LOC_DIM))
    fg = np.zeros(v, dtype=bool)
    claimed = np.zeros(v, dtype=bool)
    for gt in boxes:
        if gt.category not in layout.categories:
            continue
        inside = points_in_box(vertices, gt) & ~claimed
        if not inside.any():
            continue
        view = view_bin(gt.yaw)
        labels[inside] = layout.index(gt.category, view)
        for k in np.flatnonzero(inside):
            box_t[k] = encode_box_target(gt, vertices[k], medians, view)
        fg |= inside
        claimed |= inside
    for gt in boxes:
        if gt.is_dontcare:
            labels[points_in_box(vertices, gt) & ~claimed] = -1
    return VertexTargets(labels, box_t, fg)
