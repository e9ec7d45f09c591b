"""Fixed-radius neighbor graphs over vertex positions.

An edge ``(i, j)`` means vertex ``j`` sends a message to vertex ``i``. Pairs
are connected when their distance is strictly below ``r``. When a vertex
has more than ``max_edges`` neighbors only the nearest are kept, ties going
to the smaller ``j``. Edges are stored sorted by ``i``, then distance, then
``j``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import InvalidCap, InvalidRadius
from .pointcloud_io import atomic_write_text

_OFFSETS = np.array(list(product((-1, 0, 1), repeat=3)), dtype=np.int64)


@dataclass(frozen=True)
class Graph:
    vertices: np.ndarray
    vertex_reflectance: np.ndarray
    edges: np.ndarray  # (E, 2) int64 rows (i, j)
    radius: float

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_edges(self):
        return len(self.edges)

    def neighbors(self, i):
        return self.edges[self.edges[:, 0] == i, 1].tolist()

    def neighbor_lists(self):
        return {i: self.neighbors(i) for i in range(self.num_vertices)}

    def to_json(self):
        return json.dumps({
            "radius": self.radius,
            "vertices": self.vertices.tolist(),
            "edges": self.edges.tolist(),
        })

    def dump(self, path):
        atomic_write_text(path, self.to_json())


def _check(r, max_edges):
    if not (isinstance(r, (int, float)) and math.isfinite(r) and r > 0):
        raise InvalidRadius(f"radius must be finite and > 0, got {r}")
    if max_edges is not None and max_edges < 1:
        raise InvalidCap(f"max_edges must be >= 1, got {max_edges}")


def pair_distance(a, b):
    # shared by the grid path and the brute-force oracle so both see identical floats
    d = a - b
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def _cap_sorted(i, j, dist, max_edges):
    order = np.lexsort((j, dist, i))
    i, j, dist = i[order], j[order], dist[order]
    if max_edges is not None and len(i):
        starts = np.flatnonzero(np.r_[True, i[1:] != i[:-1]])
        lengths = np.diff(np.r_[starts, len(i)])
        rank = np.arange(len(i)) - np.repeat(starts, lengths)
        keep = rank < max_edges
        i, j, dist = i[keep], j[keep], dist[keep]
    return i, j, dist


def radius_pairs(queries, points, r, exclude_self=False):
    """All ``(q, p)`` index pairs with ``|queries[q] - points[p]| < r``.

    Uses a uniform grid of cell size ``r``: each query inspects the 27 cells
    around its own. Returns ``(qi, pj, dist)`` in no particular order.
    """
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    empty = (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
    if len(queries) == 0 or len(points) == 0:
        return empty
    origin = np.minimum(queries.min(axis=0), points.min(axis=0))
    pcell = np.floor((points - origin) / r).astype(np.int64)
    qcell = np.floor((queries - origin) / r).astype(np.int64)
    dims = np.maximum(pcell.max(axis=0), qcell.max(axis=0)) + 3
    if np.prod(dims.astype(np.float64)) > 2.0**62:
        raise InvalidRadius(f"radius {r} too small for the cloud extent")

    def key(c):
        c = c + 1
        return (c[..., 0] * dims[1] + c[..., 1]) * dims[2] + c[..., 2]

    pkey = key(pcell)
    order = np.argsort(pkey, kind="stable")
    sorted_keys = pkey[order]

    qi_parts, pj_parts = [], []
    for off in _OFFSETS:
        nk = key(qcell + off)
        lo = np.searchsorted(sorted_keys, nk, side="left")
        hi = np.searchsorted(sorted_keys, nk, side="right")
        counts = hi - lo
        total = int(counts.sum())
        if total == 0:
            continue
        qi = np.repeat(np.arange(len(queries)), counts)
        base = np.repeat(lo - np.cumsum(counts) + counts, counts)
        pj = order[base + np.arange(total)]
        qi_parts.append(qi)
        pj_parts.append(pj)
    if not qi_parts:
        return empty
    qi = np.concatenate(qi_parts)
    pj = np.concatenate(pj_parts)
    dist = pair_distance(queries[qi], points[pj])
    keep = dist < r
    if exclude_self:
        keep &= qi != pj
    return qi[keep], pj[keep], dist[keep]


def _chunked_pairs(vertices, r, threads):
    bounds = np.linspace(0, len(vertices), threads + 1).astype(np.int64)

    def work(k):
        lo, hi = bounds[k], bounds[k + 1]
        qi, pj, d = radius_pairs(vertices[lo:hi], vertices, r)
        qi = qi + lo
        keep = qi != pj
        return qi[keep], pj[keep], d[keep]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(work, range(threads)))
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(3))


def build_radius_graph(vertices, r, max_edges=256, vertex_reflectance=None, threads=1):
    """Grid-indexed radius graph with a per-vertex in-edge cap.

    With ``threads > 1`` the query vertices are split into chunks searched
    concurrently; the result is identical to the single-threaded one.
    """
    _check(r, max_edges)
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if threads > 1 and len(vertices) >= threads:
        i, j, dist = _chunked_pairs(vertices, r, threads)
    else:
        i, j, dist = radius_pairs(vertices, vertices, r, exclude_self=True)
    # exclude coincident vertices too: edges need 0 < distance
    keep = dist > 0
    i, j, dist = _cap_sorted(i[keep], j[keep], dist[keep], max_edges)
    return _make(vertices, vertex_reflectance, i, j, r)


def brute_force_neighbors(vertices, r, max_edges=256, vertex_reflectance=None):
    """All-pairs reference for :func:`build_radius_graph`. O(N^2); tests and baselines only."""
    _check(r, max_edges)
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    rows_i, rows_j = [], []
    for i in range(len(vertices)):
        dist = pair_distance(vertices[i][None, :], vertices)
        cand = np.flatnonzero((dist < r) & (dist > 0))
        cand = cand[cand != i]
        # sort by (distance, j): stable sort on distance over ascending j
        cand = cand[np.argsort(dist[cand], kind="stable")]
        if max_edges is not None:
            cand = cand[:max_edges]
        rows_i.append(np.full(len(cand), i, dtype=np.int64))
        rows_j.append(cand.astype(np.int64))
    i = np.concatenate(rows_i) if rows_i else np.zeros(0, np.int64)
    j = np.concatenate(rows_j) if rows_j else np.zeros(0, np.int64)
    return _make(vertices, vertex_reflectance, i, j, r)


def _make(vertices, refl, i, j, r):
    if refl is None:
        refl = np.zeros(len(vertices))
    edges = np.column_stack([i, j]).astype(np.int64).reshape(-1, 2)
    return Graph(vertices, np.asarray(refl, dtype=np.float64), edges, float(r))
