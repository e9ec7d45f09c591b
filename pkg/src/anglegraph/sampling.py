"""Voxel-grid downsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidVoxelSize


@dataclass(frozen=True)
class DownsampleResult:
    vertices: np.ndarray          # (V, 3) voxel centroids
    assignment: np.ndarray        # (N,) raw point -> vertex index
    vertex_reflectance: np.ndarray  # (V,) mean member reflectance
    voxel_index: np.ndarray       # (V, 3) integer cell of each vertex

    def __len__(self):
        return len(self.vertices)


def voxel_indices(xyz, voxel_size):
    return np.floor(np.asarray(xyz, dtype=np.float64) / voxel_size).astype(np.int64)


def voxel_downsample(cloud, voxel_size):
    """Replace the points of each occupied voxel by their centroid.

    Cells are ``floor(p / voxel_size)`` per axis. Vertices come out in the
    order their voxel is first hit while scanning the input.
    """
    if voxel_size is None or not math.isfinite(voxel_size) or voxel_size <= 0:
        raise InvalidVoxelSize(f"voxel_size must be finite and > 0, got {voxel_size}")
    xyz = cloud.xyz
    n = len(xyz)
    if n == 0:
        return DownsampleResult(np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros(0),
                                np.zeros((0, 3), np.int64))
    cells = voxel_indices(xyz, voxel_size)
    _, first, inverse = np.unique(cells, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # np.unique sorts lexicographically; relabel groups by first occurrence
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    assignment = rank[inverse]
    v = len(order)
    counts = np.bincount(assignment, minlength=v).astype(np.float64)
    sums = np.column_stack([np.bincount(assignment, weights=xyz[:, k], minlength=v) for k in range(3)])
    refl = np.bincount(assignment, weights=cloud.reflectance, minlength=v) / counts
    return DownsampleResult(sums / counts[:, None], assignment, refl, cells[first[order]])


def identity_downsample(cloud):
    """Every raw point is its own vertex (downsampling disabled)."""
    n = len(cloud)
    return DownsampleResult(cloud.xyz.copy(), np.arange(n, dtype=np.int64),
                            cloud.reflectance.copy(), np.zeros((n, 3), np.int64))


def downsample(cloud, voxel_size):
    return identity_downsample(cloud) if voxel_size is None else voxel_downsample(cloud, voxel_size)
