"""Synthetic LiDAR-like scenes for tests, calibration and benchmarks.

Objects are yaw-rotated boxes whose surfaces are sampled with Gaussian
jitter; clutter is uniform over the scene volume.
"""

from __future__ import annotations

import math

import numpy as np

from .gnn.targets import MEDIANS, points_in_box
from .pointcloud_io import GroundTruthBox, PointCloud, clean_points


def box_surface_points(box, n, rng, noise=0.02):
    """``n`` points on the box's side faces and roof, jittered by N(0, noise)."""
    l, w, h = box.l, box.w, box.h
    # face areas weight the sampling: 4 sides + top
    faces = np.array([l * h, l * h, w * h, w * h, l * w])
    face = rng.choice(5, size=n, p=faces / faces.sum())
    u = rng.uniform(-0.5, 0.5, size=n)
    v = rng.uniform(-0.5, 0.5, size=n)
    local = np.zeros((n, 3))
    for k, (ax, sign) in enumerate(((1, 1), (1, -1), (0, 1), (0, -1), (2, 1))):
        m = face == k
        dims = np.array([l, w, h])
        other = [a for a in range(3) if a != ax]
        local[m, ax] = sign * dims[ax] / 2
        local[m, other[0]] = u[m] * dims[other[0]]
        local[m, other[1]] = v[m] * dims[other[1]]
    local += rng.normal(scale=noise, size=local.shape)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    world = np.empty_like(local)
    world[:, 0] = c * local[:, 0] - s * local[:, 1] + box.cx
    world[:, 1] = s * local[:, 0] + c * local[:, 1] + box.cy
    world[:, 2] = local[:, 2] + box.cz
    return world


def make_scene(rng, categories=("Pedestrian", "Cyclist"), n_objects=4, extent=12.0,
               points_per_object=120, clutter=100, min_gap=1.5, frame_id="",
               difficulty="Easy", size_jitter=0.05):
    """Random scene: returns ``(cloud, boxes)``.

    Objects sit on the ground plane z = -1.7 at least ``min_gap`` metres
    apart, centred in ``[5, 5 + extent] x [-extent/2, extent/2]`` so no point
    comes near the sensor origin.
    """
    boxes, centers = [], []
    tries = 0
    while len(boxes) < n_objects and tries < 1000:
        tries += 1
        cx = rng.uniform(5.0, 5.0 + extent)
        cy = rng.uniform(-extent / 2, extent / 2)
        cat = categories[len(boxes) % len(categories)]
        lm, hm, wm = MEDIANS[cat]
        reach = math.hypot(lm, wm)
        if any(math.hypot(cx - x, cy - y) < reach + min_gap for x, y in centers):
            continue
        j = rng.uniform(1 - size_jitter, 1 + size_jitter, size=3)
        l, h, w = lm * j[0], hm * j[1], wm * j[2]
        yaw = rng.uniform(-math.pi, math.pi)
        boxes.append(GroundTruthBox(cat, cx, cy, -1.7 + h / 2, l, w, h, yaw, difficulty))
        centers.append((cx, cy))
    parts = [box_surface_points(b, points_per_object, rng) for b in boxes]
    if clutter:
        lo = np.array([5.0 - 2.0, -extent / 2 - 2.0, -1.8])
        hi = np.array([5.0 + extent + 2.0, extent / 2 + 2.0, 0.5])
        pts = rng.uniform(lo, hi, size=(clutter, 3))
        inside = np.zeros(len(pts), dtype=bool)
        for b in boxes:
            inside |= points_in_box(pts, b, margin=0.3)
        parts.append(pts[~inside])
    xyz = np.concatenate(parts) if parts else np.zeros((0, 3))
    refl = rng.uniform(0.0, 1.0, size=len(xyz))
    xyz, refl = clean_points(xyz, refl)
    return PointCloud(xyz, refl, frame_id), boxes


def uniform_cloud(rng, n, density=1.0, frame_id=""):
    """``n`` uniform points in a cube sized for ``density`` points per cubic metre, offset from the origin."""
    side = (n / density) ** (1.0 / 3.0)
    xyz = rng.uniform(0.0, side, size=(n, 3)) + np.array([2.0, 2.0, 2.0])
    return PointCloud(xyz, rng.uniform(size=n), frame_id)
