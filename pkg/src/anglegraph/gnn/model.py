"""Message-passing detector.

State of vertex ``i`` after iteration ``t`` (``x`` are vertex positions)::

    dx_i   = MLP_h(s_i)
    e_ij   = MLP_fun([enc(x_i - dx_i, x_j), refl_j, s_j])
    s_i'   = MLP_g(max_j e_ij) + s_i

``enc`` is the run's pair encoder; with the relative encoder the geometric
block is ``-(x_j - x_i + dx_i)``, i.e. the offset-corrected relative
coordinate. Initial states come from max-pooling embedded
encodings of the raw points within ``pool_radius`` of each vertex. A
shared trunk feeds a class head (M logits) and a box head (7 values).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import encoding
from ..errors import DimensionMismatch, IterationOutOfRange, NumericError
from ..graph import Graph, build_radius_graph, radius_pairs
from ..sampling import downsample
from .nn import (mlp_backward, mlp_forward, mlp_init, scatter_add, segment_max,
                 segment_max_backward)
from .targets import LOC_DIM, ClassLayout, vertex_targets


@dataclass
class GnnParams:
    """Weights plus the layout needed to interpret them."""

    arrays: dict
    layout: dict = field(default_factory=dict)

    def copy(self):
        return GnnParams({k: v.copy() for k, v in self.arrays.items()}, dict(self.layout))

    @property
    def num_parameters(self):
        return int(sum(v.size for v in self.arrays.values()))

    def flat(self):
        return np.concatenate([v.ravel() for v in self.arrays.values()]) if self.arrays else np.zeros(0)

    def with_flat(self, theta):
        out, k = {}, 0
        for name, v in self.arrays.items():
            out[name] = theta[k:k + v.size].reshape(v.shape).copy()
            k += v.size
        return GnnParams(out, dict(self.layout))


def make_layout(cfg):
    layout_cls = ClassLayout(cfg.categories)
    return {
        "encoder": cfg.encoder,
        "d_enc": encoding.feature_dim(cfg.encoder),
        "state": cfg.state_width,
        "iterations": cfg.iterations,
        "num_classes": layout_cls.num_classes,
        "categories": list(cfg.categories),
        "angle_normalization": cfg.angle_normalization,
        "embed": list(cfg.embed_widths),
        "offset": list(cfg.offset_widths),
        "edge": list(cfg.edge_widths),
        "update": list(cfg.update_widths),
        "trunk": list(cfg.trunk_widths),
        "cls": list(cfg.class_hidden) + [layout_cls.num_classes],
        "loc": list(cfg.loc_hidden) + [LOC_DIM],
    }


def init_params(cfg, rng):
    """Uniform(+-1/sqrt(fan_in)) init; each update MLP ends in a zero layer so iterations start as identity."""
    lay = make_layout(cfg)
    p = {}
    d_enc, state = lay["d_enc"], lay["state"]
    mlp_init(p, rng, "embed", d_enc, lay["embed"])
    for t in range(lay["iterations"]):
        mlp_init(p, rng, f"it{t}.h", state, lay["offset"])
        mlp_init(p, rng, f"it{t}.fun", d_enc + state, lay["edge"])
        mlp_init(p, rng, f"it{t}.g", lay["edge"][-1], lay["update"], zero_last=True)
    mlp_init(p, rng, "trunk", state, lay["trunk"])
    mlp_init(p, rng, "cls", lay["trunk"][-1], lay["cls"])
    mlp_init(p, rng, "loc", lay["trunk"][-1], lay["loc"])
    return GnnParams(p, lay)


@dataclass
class Frame:
    """Everything about one scene that does not depend on the weights."""

    graph: Graph
    pool_vertex: np.ndarray    # (P,) vertex of each pooled raw point
    pool_features: np.ndarray  # (P, d_enc)
    labels: np.ndarray | None = None
    box_targets: np.ndarray | None = None
    foreground: np.ndarray | None = None
    cloud: object = None
    assignment: np.ndarray | None = None
    frame_id: str = ""

    @property
    def num_vertices(self):
        return self.graph.num_vertices


def pointset_features(vertices, cloud, encoder, pool_radius, normalize=True):
    """Pairs (vertex, raw point) with distance < pool_radius and their encodings."""
    vi, qj, _ = radius_pairs(vertices, cloud.xyz, pool_radius)
    order = np.lexsort((qj, vi))
    vi, qj = vi[order], qj[order]
    feats = encoding.encode_batch(encoder, vertices[vi], cloud.xyz[qj],
                                  cloud.reflectance[qj], normalize)
    return vi, feats


def prepare_frame(cloud, cfg, boxes=None):
    ds = downsample(cloud, cfg.voxel_size)
    graph = build_radius_graph(ds.vertices, cfg.graph_radius, cfg.max_edges_per_vertex,
                               ds.vertex_reflectance)
    vi, feats = pointset_features(ds.vertices, cloud, cfg.encoder, cfg.pool_radius,
                                  cfg.angle_normalization)
    frame = Frame(graph, vi, feats, cloud=cloud, assignment=ds.assignment,
                  frame_id=getattr(cloud, "frame_id", ""))
    if boxes is not None:
        tg = vertex_targets(ds.vertices, boxes, ClassLayout(cfg.categories))
        frame.labels, frame.box_targets, frame.foreground = tg.labels, tg.box, tg.foreground
    return frame


def _nlayers(params, key):
    return len(params.layout[key])


def pointset_pool(frame, params, keep=True):
    lay = params.layout
    if frame.pool_features.shape[1] != lay["d_enc"]:
        raise DimensionMismatch(
            f"pool features have width {frame.pool_features.shape[1]}, embedding expects {lay['d_enc']}"
        )
    emb, cache = mlp_forward(params.arrays, "embed", _nlayers(params, "embed"), frame.pool_features, keep)
    s0, arg = segment_max(emb, frame.pool_vertex, frame.num_vertices)
    return s0, (cache, arg, len(emb))


def canonical_edges(graph):
    """Edge endpoints sorted by (i, j).

    Computing on a fixed order makes results independent of how the edge
    list is stored, down to the last bit (BLAS rounding can depend on a
    row's position in a block).
    """
    ei, ej = graph.edges[:, 0], graph.edges[:, 1]
    order = np.lexsort((ej, ei))
    return ei[order], ej[order]


def gnn_iteration(graph, states, params, t, keep=True):
    lay = params.layout
    if not 0 <= t < lay["iterations"]:
        raise IterationOutOfRange(f"iteration {t} outside [0, {lay['iterations']})")
    if states.shape != (graph.num_vertices, lay["state"]):
        raise DimensionMismatch(f"states of shape {states.shape} do not match the graph/state width")
    a = params.arrays
    ei, ej = canonical_edges(graph)
    x = graph.vertices
    dx, h_cache = mlp_forward(a, f"it{t}.h", len(lay["offset"]), states, keep)
    centers = x - dx
    geo, jac = encoding.encode_geo(lay["encoder"], centers[ei], x[ej],
                                   lay["angle_normalization"], jacobian=keep)
    pair = np.concatenate([geo, graph.vertex_reflectance[ej, None]], axis=1)
    # first edge layer: [pair, s_j] @ W == pair @ W_pair + (s @ W_state)[j]
    W0 = a[f"it{t}.fun.0.W"]
    d_pair = pair.shape[1]
    if W0.shape[0] != d_pair + states.shape[1]:
        raise DimensionMismatch(f"edge MLP expects {W0.shape[0]} inputs, got {d_pair + states.shape[1]}")
    proj = states @ W0[d_pair:]
    z0 = pair @ W0[:d_pair] + proj[ej] + a[f"it{t}.fun.0.b"]
    e, fun_cache = mlp_forward(a, f"it{t}.fun", len(lay["edge"]), z0, keep, start=1)
    if len(lay["edge"]) == 1:
        e = z0
    m, arg = segment_max(e, ei, graph.num_vertices)
    upd, g_cache = mlp_forward(a, f"it{t}.g", len(lay["update"]), m, keep)
    new = upd + states
    fun_cache = (pair, states, z0, fun_cache)
    return new, (h_cache, jac, fun_cache, arg, len(e), g_cache)


def forward(frame, params, keep=False):
    """Returns ``(class_logits (V, M), loc (V, 7), cache)``."""
    lay = params.layout
    s, pool_cache = pointset_pool(frame, params, keep)
    it_caches = []
    for t in range(lay["iterations"]):
        s, c = gnn_iteration(frame.graph, s, params, t, keep)
        it_caches.append(c)
    a = params.arrays
    z, trunk_cache = mlp_forward(a, "trunk", len(lay["trunk"]), s, keep)
    logits, cls_cache = mlp_forward(a, "cls", len(lay["cls"]), z, keep)
    loc, loc_cache = mlp_forward(a, "loc", len(lay["loc"]), z, keep)
    cache = (pool_cache, it_caches, trunk_cache, cls_cache, loc_cache, s)
    return logits, loc, cache


def states(frame, params):
    """All vertex states s^0 .. s^T (for inspection and property tests)."""
    s, _ = pointset_pool(frame, params, keep=False)
    out = [s]
    for t in range(params.layout["iterations"]):
        s, _ = gnn_iteration(frame.graph, s, params, t, keep=False)
        out.append(s)
    return out


def backward(frame, params, cache, dlogits, dloc):
    lay = params.layout
    a = params.arrays
    pool_cache, it_caches, trunk_cache, cls_cache, loc_cache, _ = cache
    grads = {}
    dz = mlp_backward(a, "cls", cls_cache, dlogits, grads)
    dz = dz + mlp_backward(a, "loc", loc_cache, dloc, grads)
    ds = mlp_backward(a, "trunk", trunk_cache, dz, grads)

    g = frame.graph
    ei, ej = canonical_edges(g)
    n = g.num_vertices
    ngeo = encoding.geo_dim(lay["encoder"])
    for t in range(lay["iterations"] - 1, -1, -1):
        h_cache, jac, fun_cache, arg, n_edges, g_cache = it_caches[t]
        ds_prev = ds.copy()
        dm = mlp_backward(a, f"it{t}.g", g_cache, ds, grads)
        de = segment_max_backward(dm, arg, n_edges)
        pair, s_in, z0, fun_rest = fun_cache
        if fun_rest:
            dz0 = mlp_backward(a, f"it{t}.fun", fun_rest, de, grads, relu_input=True)
        else:
            dz0 = de
        W0 = a[f"it{t}.fun.0.W"]
        d_pair = pair.shape[1]
        dproj = scatter_add(ej, dz0, n)
        dW0 = np.concatenate([pair.T @ dz0, s_in.T @ dproj], axis=0)
        grads[f"it{t}.fun.0.W"] = grads.get(f"it{t}.fun.0.W", 0) + dW0
        grads[f"it{t}.fun.0.b"] = grads.get(f"it{t}.fun.0.b", 0) + dz0.sum(axis=0)
        ds_prev += dproj @ W0[d_pair:].T
        dpair = dz0 @ W0[:d_pair].T
        dfeat = dpair
        dcenter = np.einsum("ek,ekc->ec", dfeat[:, :ngeo], jac)
        ddx = -scatter_add(ei, dcenter, n)
        ds_prev += mlp_backward(a, f"it{t}.h", h_cache, ddx, grads)
        ds = ds_prev

    emb_cache, arg, n_rows = pool_cache
    demb = segment_max_backward(ds, arg, n_rows)
    mlp_backward(a, "embed", emb_cache, demb, grads)
    for k, v in a.items():
        if k not in grads:
            grads[k] = np.zeros_like(v)
    return {k: grads[k] for k in a}


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def huber(d, delta=1.0):
    ad = np.abs(d)
    return np.where(ad <= delta, 0.5 * d * d, delta * (ad - 0.5 * delta))


def loss(logits, loc, labels, box_targets, foreground, cls_weight=1.0, loc_weight=1.0):
    """Cross-entropy over labelled vertices plus Huber (delta 1) on foreground box residuals.

    Returns ``(parts, dlogits, dloc)`` with ``parts = {"total", "cls", "loc"}``.
    Vertices labelled -1 contribute to neither term; with no foreground the
    box term is 0.
    """
    v, m = logits.shape
    dlogits = np.zeros_like(logits)
    dloc = np.zeros_like(loc)
    valid = labels >= 0
    nv = int(valid.sum())
    cls = 0.0
    if nv:
        z = logits[valid] - logits[valid].max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1))
        picked = z[np.arange(nv), labels[valid]]
        cls = float(np.mean(logsum - picked))
        p = np.exp(z - logsum[:, None])
        p[np.arange(nv), labels[valid]] -= 1.0
        dlogits[valid] = cls_weight * p / nv
    nf = int(foreground.sum())
    box = 0.0
    if nf:
        d = loc[foreground] - box_targets[foreground]
        box = float(huber(d).sum(axis=1).mean())
        dloc[foreground] = loc_weight * np.clip(d, -1.0, 1.0) / nf
    total = cls_weight * cls + loc_weight * box
    return {"total": total, "cls": cls, "loc": box}, dlogits, dloc


def loss_and_grad(frame, params, cls_weight=1.0, loc_weight=1.0):
    logits, loc, cache = forward(frame, params, keep=True)
    parts, dlogits, dloc = loss(logits, loc, frame.labels, frame.box_targets, frame.foreground,
                                cls_weight, loc_weight)
    if not np.isfinite(parts["total"]):
        raise NumericError(f"non-finite loss {parts['total']}")
    return parts, backward(frame, params, cache, dlogits, dloc)
