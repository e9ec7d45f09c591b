"""Run configuration.

A single JSON document maps onto :class:`RunConfig`; unknown keys are an
error. Network sizes default to the published layout: (32, 64, 128, 300)
point embedding, (64, 128, 64) predictor trunk, (64, M) class head and
(64, 64, 7) box head, with at most 256 in-edges per vertex.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

ENCODERS = ("euclidean", "absolute", "relative", "angle", "angle_relative")
CATEGORY_SETS = {
    "car": ("Car",),
    "ped_cyc": ("Pedestrian", "Cyclist"),
}
DEFAULT_RADIUS = {"car": 4.0, "ped_cyc": 1.6}


@dataclass
class RunConfig:
    encoder: str = "angle_relative"
    radius: float | None = None  # None: per-category-set default
    voxel_size: float | None = 0.8  # None: every raw point becomes a vertex
    pool_radius: float = 0.8
    max_edges_per_vertex: int = 256
    iterations: int = 3
    category_set: str = "car"
    seed: int = 0
    angle_normalization: bool = True

    # network layout; the last width of update_widths must equal embed_widths[-1]
    embed_widths: tuple = (32, 64, 128, 300)
    offset_widths: tuple = (64, 3)
    edge_widths: tuple = (300, 300)
    update_widths: tuple = (300, 300)
    trunk_widths: tuple = (64, 128, 64)
    class_hidden: tuple = (64,)
    loc_hidden: tuple = (64, 64)

    # optimisation: SGD, one frame per step, staircase decay
    lr0: float = 0.008
    decay_factor: float = 0.5
    decay_steps: int = 1500
    momentum: float = 0.9
    grad_clip: float | None = 10.0  # global L2 norm; None disables
    epochs: int = 10
    max_steps: int | None = None
    cls_weight: float = 1.0
    loc_weight: float = 1.0

    # box merging
    merge_iou_threshold: float = 0.5
    score_floor: float = 0.3

    def __post_init__(self):
        for name in ("embed_widths", "offset_widths", "edge_widths", "update_widths",
                     "trunk_widths", "class_hidden", "loc_hidden"):
            setattr(self, name, tuple(int(w) for w in getattr(self, name)))
        self.validate()

    @property
    def categories(self):
        return CATEGORY_SETS[self.category_set]

    @property
    def graph_radius(self):
        return DEFAULT_RADIUS[self.category_set] if self.radius is None else self.radius

    @property
    def state_width(self):
        return self.embed_widths[-1]

    def validate(self):
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.category_set not in CATEGORY_SETS:
            raise ConfigError(f"category_set must be one of {tuple(CATEGORY_SETS)}")
        r = self.graph_radius
        if not (math.isfinite(r) and r > 0):
            raise ConfigError(f"radius must be > 0, got {r}")
        if self.voxel_size is not None and not (math.isfinite(self.voxel_size) and self.voxel_size > 0):
            raise ConfigError(f"voxel_size must be > 0, got {self.voxel_size}")
        if not self.pool_radius > 0:
            raise ConfigError("pool_radius must be > 0")
        if self.max_edges_per_vertex < 1:
            raise ConfigError("max_edges_per_vertex must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.offset_widths[-1] != 3:
            raise ConfigError("offset MLP must end in 3 outputs")
        if self.update_widths[-1] != self.state_width:
            raise ConfigError("update MLP output width must equal the state width")
        if any(w < 1 for w in self.embed_widths + self.edge_widths + self.update_widths
               + self.trunk_widths + self.class_hidden + self.loc_hidden + self.offset_widths):
            raise ConfigError("layer widths must be >= 1")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("grad_clip must be > 0 or null")
        if self.decay_steps < 1 or not 0 < self.decay_factor <= 1:
            raise ConfigError("invalid learning-rate schedule")
        for name in ("merge_iou_threshold", "score_floor"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown config key: {key!r}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


def lr_at(step, cfg):
    """Staircase schedule: lr0 * factor ** floor(step / decay_steps)."""
    return cfg.lr0 * cfg.decay_factor ** (step // cfg.decay_steps)
