"""Per-stage wall-clock timing for each feature encoder.

Stages per frame:

* ``gen_graph``: voxel downsampling, radius graph, point-set pairing and
  feature encoding of both point-set pairs and graph edges.
* ``inference``: the GNN forward pass.
* ``total``: everything from reading the frame to merged boxes, so it also
  covers I/O (when frames are given as paths), decoding and merging.

``encode_s`` is the encoding share of ``gen_graph`` timed on its own.
Each repetition times every frame once; the first repetition is a warm-up
and is dropped. Reported values are medians over the kept repetitions of
the per-repetition mean over frames.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import encoding
from .config import RunConfig
from .detection import MergeConfig, merge_boxes
from .errors import InsufficientFrames, UsageError
from .gnn.model import Frame, forward, init_params
from .gnn.train import named_rng
from .graph import build_radius_graph, radius_pairs
from .pipeline import _decode_vertices
from .pointcloud_io import PointCloud, atomic_write_text, read_velodyne_bin
from .sampling import downsample

BENCH_ORDER = ("euclidean", "absolute", "relative", "angle", "angle_relative")

# Published timings (seconds per frame) measured on the original authors' GPU machine.
REFERENCE = {
    "euclidean": {"label": "Euclidean", "gen_graph_s": 0.088, "inference_s": 0.567, "total_s": 0.750},
    "absolute": {"label": "Absolute", "gen_graph_s": 0.089, "inference_s": 0.564, "total_s": 0.778},
    "relative": {"label": "Relative", "gen_graph_s": 0.087, "inference_s": 0.567, "total_s": 0.686},
    "angle": {"label": "Angle", "gen_graph_s": 0.088, "inference_s": 0.567, "total_s": 0.728},
    "angle_relative": {"label": "Angle and Relative", "gen_graph_s": 0.088, "inference_s": 0.566,
                       "total_s": 0.748},
}

CSV_COLUMNS = ("encoder", "gen_graph_s", "inference_s", "total_s", "n_points", "n_vertices",
               "n_edges", "repetitions", "threads")


@dataclass
class TimingRow:
    encoder: str
    gen_graph_s: float
    encode_s: float
    inference_s: float
    total_s: float
    n_points: int
    n_vertices: int
    n_edges: int
    repetitions: int
    threads: int = 1

    @property
    def reference_total_s(self):
        return REFERENCE[self.encoder]["total_s"]


@dataclass
class StageTimes:
    gen_graph: float
    encode: float
    inference: float
    total: float
    n_points: int
    n_vertices: int
    n_edges: int


def _load(frame):
    if isinstance(frame, PointCloud):
        return frame
    return read_velodyne_bin(frame)


def _gen_graph(cloud, cfg, threads, clock):
    ds = downsample(cloud, cfg.voxel_size)
    graph = build_radius_graph(ds.vertices, cfg.graph_radius, cfg.max_edges_per_vertex,
                               ds.vertex_reflectance, threads=threads)
    vi, qj, _ = radius_pairs(ds.vertices, cloud.xyz, cfg.pool_radius)
    order = np.lexsort((qj, vi))
    vi, qj = vi[order], qj[order]
    t = clock()
    feats = encoding.encode_batch(cfg.encoder, ds.vertices[vi], cloud.xyz[qj],
                                  cloud.reflectance[qj], cfg.angle_normalization)
    ei, ej = graph.edges[:, 0], graph.edges[:, 1]
    encoding.encode_batch(cfg.encoder, graph.vertices[ei], graph.vertices[ej],
                          graph.vertex_reflectance[ej], cfg.angle_normalization)
    encode = clock() - t
    return Frame(graph, vi, feats, cloud=cloud, assignment=ds.assignment), encode


def time_gen_graph(cloud, cfg, threads=1, clock=time.perf_counter):
    """Seconds spent on downsampling, graph building and encoding for one cloud."""
    t0 = clock()
    _gen_graph(cloud, cfg, threads, clock)
    return clock() - t0


def time_frame(frame, cfg, params, threads=1, clock=time.perf_counter):
    """Run the full pipeline on one frame, timing each stage."""
    t0 = clock()
    cloud = _load(frame)
    t1 = clock()
    fr, encode = _gen_graph(cloud, cfg, threads, clock)
    t2 = clock()
    logits, loc, _ = forward(fr, params)
    t3 = clock()
    merge_boxes(_decode_vertices(fr, logits, loc, cfg), MergeConfig(cfg.merge_iou_threshold,
                                                                     cfg.score_floor))
    t4 = clock()
    g = fr.graph
    return StageTimes(gen_graph=t2 - t1, encode=encode, inference=t3 - t2, total=t4 - t0,
                      n_points=len(cloud), n_vertices=g.num_vertices, n_edges=g.num_edges)


def bench_encoder(frames, cfg, params=None, repetitions=3, threads=1):
    """Timing row for one encoder. ``repetitions`` counts the kept repetitions."""
    if repetitions < 3:
        raise UsageError(f"repetitions must be >= 3, got {repetitions}")
    frames = list(frames)
    if not frames:
        raise InsufficientFrames("bench needs at least one frame")
    if params is None:
        params = init_params(cfg, named_rng(cfg.seed, "init"))
    per_rep, counts = [], None
    for rep in range(repetitions + 1):
        runs = [time_frame(f, cfg, params, threads) for f in frames]
        c = (sum(r.n_points for r in runs), sum(r.n_vertices for r in runs), sum(r.n_edges for r in runs))
        if counts is not None and c != counts:
            raise RuntimeError("counted work changed between repetitions")
        counts = c
        if rep == 0:
            continue
        per_rep.append([np.mean([getattr(r, k) for r in runs])
                        for k in ("gen_graph", "encode", "inference", "total")])
    med = np.median(np.array(per_rep), axis=0)
    n = len(frames)
    return TimingRow(cfg.encoder, float(med[0]), float(med[1]), float(med[2]), float(med[3]),
                     counts[0] // n, counts[1] // n, counts[2] // n, repetitions, threads)


def run_bench(frames, config=None, repetitions=3, threads=1, params=None):
    """One :class:`TimingRow` per encoder, in :data:`BENCH_ORDER`.

    ``params`` optionally maps encoder name to trained parameters; otherwise
    freshly initialised weights are used (timings do not depend on them
    beyond the number of boxes handed to merging).
    """
    config = config or RunConfig()
    frames = list(frames)
    if not frames:
        raise InsufficientFrames("bench needs at least one frame")
    rows = []
    for name in BENCH_ORDER:
        cfg = config.replace(encoder=name)
        p = (params or {}).get(name)
        rows.append(bench_encoder(frames, cfg, p, repetitions, threads))
    return rows


def encoding_times(frames, config, encoder, repetitions=3, clock=time.perf_counter):
    """Median (over repetitions, after one warm-up) encoding-only time for each frame."""
    cfg = config.replace(encoder=encoder)
    out = []
    for f in frames:
        cloud = _load(f)
        ts = [_gen_graph(cloud, cfg, 1, clock)[1] for _ in range(repetitions + 1)][1:]
        out.append(float(np.median(ts)))
    return out


def gen_graph_scaling(n, density=2.0, config=None, repetitions=5, seed=0):
    """Ratio of median gen_graph time at ``2n`` points to that at ``n`` points.

    Clouds are uniform in a cube sized so the point density stays fixed.
    Returns ``(ratio, (t_n, t_2n))``.
    """
    from .synthetic import uniform_cloud

    config = config or RunConfig(category_set="ped_cyc")
    rng = np.random.default_rng(seed)
    med = []
    for size in (n, 2 * n):
        cloud = uniform_cloud(rng, size, density)
        ts = [time_gen_graph(cloud, config) for _ in range(repetitions + 1)][1:]
        med.append(float(np.median(ts)))
    return med[1] / med[0], tuple(med)


def rows_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        d = asdict(r)
        w.writerow([d["encoder"]] + [f"{d[k]:.6f}" for k in ("gen_graph_s", "inference_s", "total_s")]
                   + [d[k] for k in CSV_COLUMNS[4:]])
    return buf.getvalue()


def rows_markdown(rows):
    """Markdown timing table with the published reference seconds alongside."""
    lines = [
        "| Feature encoding | Gen graph (s) | Inference (s) | Total (s) "
        "| Ref. gen graph (s) | Ref. inference (s) | Ref. total (s) |",
        "|---|---|---|---|---|---|---|",
    ]
    for r in rows:
        ref = REFERENCE[r.encoder]
        lines.append(f"| {ref['label']} | {r.gen_graph_s:.3f} | {r.inference_s:.3f} | {r.total_s:.3f} "
                     f"| {ref['gen_graph_s']:.3f} | {ref['inference_s']:.3f} | {ref['total_s']:.3f} |")
    lines.append("")
    lines.append("Reference columns are the published per-frame timings on the original authors' "
                 "GPU hardware, shown for context only; they are not comparable to this machine.")
    return "\n".join(lines) + "\n"


def write_report(rows, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "bench.csv", rows_csv(rows))
    atomic_write_text(out_dir / "bench.md", rows_markdown(rows))
