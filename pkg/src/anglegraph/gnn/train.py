"""SGD training, finite-difference gradient checking and checkpoints."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..config import RunConfig, lr_at
from ..errors import DataError, EmptyDataset, NumericError
from ..pointcloud_io import atomic_write_bytes, atomic_write_text
from .model import GnnParams, init_params, loss_and_grad, prepare_frame, forward, loss

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def named_rng(seed, name):
    """Independent generator per named stream; everything derives from the one seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (step, total, cls, loc, lr)

    def append(self, step, parts, lr):
        self.rows.append((step, parts["total"], parts["cls"], parts["loc"], lr))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss_total", "loss_cls", "loss_loc", "lr"])
        for r in self.rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
        return buf.getvalue()

    def write_csv(self, path):
        atomic_write_text(path, self.to_csv())


def clip_global_norm(grads, max_norm):
    """Scale all gradients together so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def train(dataset, cfg, params=None, frames=None, callback=None):
    """Fit the detector on ``dataset``, a sequence of ``(cloud, boxes)``.

    One frame per step; frame order is reshuffled each epoch from the seed.
    The learning rate follows the staircase schedule and the update is SGD
    with momentum after global-norm gradient clipping. ``callback(step,
    parts, lr)`` runs after every update; returning True stops training.
    Returns ``(params, TrainLog)``.
    """
    if frames is None:
        if not dataset:
            raise EmptyDataset("training needs at least one frame")
        frames = [prepare_frame(cloud, cfg, boxes) for cloud, boxes in dataset]
    if not frames:
        raise EmptyDataset("training needs at least one frame")
    if params is None:
        params = init_params(cfg, named_rng(cfg.seed, "init"))
    order_rng = named_rng(cfg.seed, "order")
    velocity = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    total_steps = cfg.max_steps if cfg.max_steps is not None else cfg.epochs * len(frames)
    tlog = TrainLog()
    step = 0
    while step < total_steps:
        for idx in order_rng.permutation(len(frames)):
            if step >= total_steps:
                break
            parts, grads = loss_and_grad(frames[idx], params, cfg.cls_weight, cfg.loc_weight)
            if not np.isfinite(parts["total"]):
                raise NumericError(f"non-finite loss at step {step}")
            lr = lr_at(step, cfg)
            if cfg.grad_clip is not None:
                grads = clip_global_norm(grads, cfg.grad_clip)
            for k, g in grads.items():
                v = velocity[k]
                v *= cfg.momentum
                v += g
                params.arrays[k] -= lr * v
            tlog.append(step, parts, lr)
            step += 1
            if callback is not None and callback(step - 1, parts, lr):
                return params, tlog
    return params, tlog


def frame_loss(frame, params, cfg=None):
    cw = cfg.cls_weight if cfg else 1.0
    lw = cfg.loc_weight if cfg else 1.0
    logits, loc, _ = forward(frame, params)
    parts, _, _ = loss(logits, loc, frame.labels, frame.box_targets, frame.foreground, cw, lw)
    return parts["total"]


def relative_error(analytic, numeric, floor=1e-8):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradient_check(params, frame, h=1e-5, grad_fn=None):
    """Largest relative error between analytic and central-difference gradients."""
    if params.num_parameters == 0:
        return 0.0
    if grad_fn is None:
        _, grads = loss_and_grad(frame, params)
    else:
        grads = grad_fn(frame, params)
    analytic = np.concatenate([grads[k].ravel() for k in params.arrays])
    theta = params.flat()
    numeric = np.empty_like(theta)
    for k in range(theta.size):
        tp = theta.copy()
        tp[k] += h
        tm = theta.copy()
        tm[k] -= h
        numeric[k] = (frame_loss(frame, params.with_flat(tp)) - frame_loss(frame, params.with_flat(tm))) / (2 * h)
    return float(relative_error(analytic, numeric).max())


def save_checkpoint(path, params, cfg):
    meta = {"version": CHECKPOINT_VERSION, "config": cfg.to_dict(), "layout": params.layout,
            "shapes": {k: list(v.shape) for k, v in params.arrays.items()}}
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **{k: v for k, v in params.arrays.items()})
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path):
    """Returns ``(params, cfg)``, validating every stored array against a fresh layout."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            arrays = {k: z[k].astype(np.float64) for k in meta["shapes"]}
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {meta.get('version')}")
    cfg = RunConfig.from_dict(meta["config"])
    expected = init_params(cfg, np.random.default_rng(0))
    for k, v in expected.arrays.items():
        if k not in arrays or arrays[k].shape != v.shape:
            raise DataError(f"checkpoint array {k} missing or mis-shaped")
    if set(arrays) != set(expected.arrays):
        raise DataError("checkpoint holds unexpected arrays")
    return GnnParams({k: arrays[k] for k in expected.arrays}, expected.layout), cfg
