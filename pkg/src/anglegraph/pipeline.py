"""Frame-level inference: cloud in, merged scene boxes out."""

from __future__ import annotations

import numpy as np

from .detection import MergeConfig, decode_box, merge_boxes
from .gnn.model import forward, prepare_frame, softmax
from .gnn.targets import ClassLayout


def _decode_vertices(frame, logits, loc, cfg):
    layout = ClassLayout(cfg.categories)
    probs = softmax(logits)
    top = probs.argmax(axis=1)
    boxes = []
    for v in np.flatnonzero(top < 2 * len(layout.categories)):
        cat_view = layout.decode(int(top[v]))
        boxes.append(decode_box(frame.graph.vertices[v], loc[v], cat_view, score=float(probs[v, top[v]])))
    return boxes


def vertex_boxes(frame, params, cfg):
    """One scored box per vertex whose top class is a foreground view class."""
    logits, loc, _ = forward(frame, params)
    return _decode_vertices(frame, logits, loc, cfg)


def detect(frame, params, cfg):
    merge_cfg = MergeConfig(cfg.merge_iou_threshold, cfg.score_floor)
    return merge_boxes(vertex_boxes(frame, params, cfg), merge_cfg)


def infer_cloud(cloud, params, cfg):
    return detect(prepare_frame(cloud, cfg), params, cfg)
