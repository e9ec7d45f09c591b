"""Command-line entry point: ``anglegraph <command> [flags]``.

Data directories hold ``<frame>.bin`` Velodyne clouds next to
``<frame>.jsonl`` label files. Exit status is 0 on success, 1 for usage
errors, 2 for data errors and 3 for numeric or internal failures.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, bench, encoding
from .config import ENCODERS, RunConfig
from .errors import AngleGraphError, EmptyDataset, MissingLabels, ParseError, UsageError
from .evaluation import DIFFICULTIES, EvalConfig, map_table, results_csv, results_markdown
from .gnn.model import prepare_frame
from .gnn.train import load_checkpoint, named_rng, save_checkpoint, train
from .pipeline import detect
from .pointcloud_io import (CATEGORIES, atomic_write_text, detection_to_json, read_detections,
                            read_jsonl, read_labels, read_velodyne_bin)

log = logging.getLogger("anglegraph")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _voxel(text):
    if text.lower() in ("none", "off", "0"):
        return None
    return float(text)


def _common(p):
    p.add_argument("--config", type=Path, help="JSON file of RunConfig fields")
    p.add_argument("--encoder", choices=ENCODERS)
    p.add_argument("--radius", type=float, help="graph radius in metres")
    p.add_argument("--voxel-size", type=_voxel, default=argparse.SUPPRESS,
                   help="voxel edge in metres, or 'none' to keep every point")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)


def build_parser():
    ap = _Parser(prog="anglegraph", description="Graph-based 3D object detection on LiDAR point clouds.")
    ap.add_argument("--version", action="version", version=f"anglegraph {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="index a data directory and split it")
    _common(p)
    p.add_argument("--data-dir", type=Path, required=True)
    p.add_argument("--split", type=float, default=0.8, help="training fraction")

    p = sub.add_parser("train", help="fit a detector")
    _common(p)
    p.add_argument("--data-dir", type=Path, required=True)
    p.add_argument("--manifest", type=Path, help="train only on the manifest's training split")
    p.add_argument("--steps", type=int, help="stop after this many steps")

    p = sub.add_parser("infer", help="detect objects in every frame of a directory")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--frames", type=Path, required=True)

    p = sub.add_parser("eval", help="average precision report")
    _common(p)
    p.add_argument("--data-dir", type=Path, required=True, help="directory with label files")
    p.add_argument("--detections", type=Path, help="directory of per-frame detection files")
    p.add_argument("--checkpoint", type=Path, help="run inference on --data-dir first")

    p = sub.add_parser("bench", help="per-stage timing for every encoder")
    _common(p)
    p.add_argument("--frames", type=Path, help="directory of .bin frames")
    p.add_argument("--synthetic", type=int, default=0, help="number of generated scenes to time")
    p.add_argument("--repetitions", type=int, default=3)

    p = sub.add_parser("encode", help="encode point pairs from a JSON Lines file")
    _common(p)
    p.add_argument("--pairs", type=Path, required=True)
    p.add_argument("--normalize", action="store_true", help="divide angles by 180")
    return ap


def resolve_config(args, base=None):
    cfg = RunConfig.load(args.config) if args.config else (base or RunConfig())
    changes = {}
    if args.encoder is not None:
        changes["encoder"] = args.encoder
    if args.radius is not None:
        changes["radius"] = args.radius
    if hasattr(args, "voxel_size"):
        changes["voxel_size"] = args.voxel_size
    if args.seed is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def write_metadata(path, command, cfg, started, extra=None):
    meta = {
        "command": command,
        "argv": sys.argv[1:],
        "config": cfg.to_dict() if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "encoder": cfg.encoder if cfg is not None else None,
        "versions": {"anglegraph": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "started": started,
        "finished": _now(),
    }
    meta.update(extra or {})
    atomic_write_text(path, json.dumps(meta, indent=2) + "\n")


def _meta_path(out):
    return out / "run.json" if out.suffix == "" else out.with_name(out.name + ".run.json")


# --- data directories -------------------------------------------------------------

def frame_ids(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError(f"not a directory: {directory}")
    return sorted(p.stem for p in directory.glob("*.bin"))


def load_labelled(data_dir, ids=None):
    data_dir = Path(data_dir)
    out = []
    for fid in ids if ids is not None else frame_ids(data_dir):
        lab = data_dir / f"{fid}.jsonl"
        if not lab.exists():
            raise MissingLabels(f"frame {fid} has no label file")
        cloud = read_velodyne_bin(data_dir / f"{fid}.bin")
        out.append((fid, cloud, read_labels(lab)))
    return out


def gt_counts(boxes):
    counts = {c: ({d: 0 for d in DIFFICULTIES} if c != "DontCare" else 0) for c in CATEGORIES}
    for b in boxes:
        if b.is_dontcare:
            counts["DontCare"] += 1
        else:
            counts[b.category][b.difficulty] += 1
    return counts


# --- commands ---------------------------------------------------------------------

def cmd_prepare(args, cfg):
    if not 0 < args.split <= 1:
        raise UsageError("--split must lie in (0, 1]")
    ids = frame_ids(args.data_dir)
    frames, errors = [], []
    for fid in ids:
        lab = args.data_dir / f"{fid}.jsonl"
        if not lab.exists():
            errors.append({"frame_id": fid, "error": "missing labels"})
            continue
        try:
            cloud = read_velodyne_bin(args.data_dir / f"{fid}.bin")
            boxes = read_labels(lab)
        except AngleGraphError as exc:
            errors.append({"frame_id": fid, "error": str(exc)})
            continue
        frames.append({"frame_id": fid, "points": len(cloud), "gt": gt_counts(boxes)})
    if not frames:
        raise EmptyDataset(f"no usable frames in {args.data_dir}")
    order = named_rng(cfg.seed, "split").permutation(len(frames))
    n_train = int(round(args.split * len(frames)))
    train_ids = sorted(frames[k]["frame_id"] for k in order[:n_train])
    val_ids = sorted(frames[k]["frame_id"] for k in order[n_train:])
    manifest = {"data_dir": str(args.data_dir), "seed": cfg.seed, "split_fraction": args.split,
                "frames": frames, "split": {"train": train_ids, "val": val_ids}, "errors": errors}
    atomic_write_text(args.out, json.dumps(manifest, indent=2) + "\n")
    log.info("manifest: %d frames, %d errors", len(frames), len(errors))
    return {"frames": len(frames), "errors": len(errors)}


def cmd_train(args, cfg):
    ids = None
    if args.manifest:
        try:
            ids = json.loads(args.manifest.read_text())["split"]["train"]
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise UsageError(f"bad manifest {args.manifest}: {exc}") from exc
    if args.steps is not None:
        cfg = cfg.replace(max_steps=args.steps)
    data = load_labelled(args.data_dir, ids)
    if not data:
        raise EmptyDataset("no training frames")

    def progress(step, parts, lr):
        log.debug("step %d loss %.5f lr %.3g", step, parts["total"], lr)

    params, tlog = train([(c, b) for _, c, b in data], cfg, callback=progress)
    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out / "model.ckpt", params, cfg)
    tlog.write_csv(args.out / "train_log.csv")
    return {"frames": [fid for fid, _, _ in data], "steps": len(tlog.rows)}


def _checkpoint_config(args, cfg):
    params, ck_cfg = load_checkpoint(args.checkpoint)
    if args.encoder is not None and args.encoder != ck_cfg.encoder:
        raise UsageError(f"checkpoint was trained with encoder {ck_cfg.encoder!r}, not {args.encoder!r}")
    # graph settings may be overridden; network shape comes from the checkpoint
    changes = {}
    if args.radius is not None:
        changes["radius"] = args.radius
    if hasattr(args, "voxel_size"):
        changes["voxel_size"] = args.voxel_size
    return params, ck_cfg.replace(**changes) if changes else ck_cfg


def _infer_dir(frames_dir, out_dir, params, cfg, threads):
    ids = frame_ids(frames_dir)
    if not ids:
        raise EmptyDataset(f"no .bin frames in {frames_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(fid):
        cloud = read_velodyne_bin(Path(frames_dir) / f"{fid}.bin")
        dets = detect(prepare_frame(cloud, cfg), params, cfg)
        atomic_write_text(out_dir / f"{fid}.jsonl", "".join(detection_to_json(d) + "\n" for d in dets))
        return len(dets)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(one, ids))
    else:
        counts = [one(fid) for fid in ids]
    return dict(zip(ids, counts))


def cmd_infer(args, cfg):
    params, cfg = _checkpoint_config(args, cfg)
    counts = _infer_dir(args.frames, args.out, params, cfg, args.threads)
    return {"detections": counts}, cfg


def cmd_eval(args, cfg):
    if (args.detections is None) == (args.checkpoint is None):
        raise UsageError("give exactly one of --detections or --checkpoint")
    args.out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint is not None:
        params, cfg = _checkpoint_config(args, cfg)
        det_dir = args.out / "detections"
        _infer_dir(args.data_dir, det_dir, params, cfg, args.threads)
    else:
        det_dir = args.detections
    pairs = []
    for fid in frame_ids(args.data_dir):
        lab = args.data_dir / f"{fid}.jsonl"
        if not lab.exists():
            raise MissingLabels(f"frame {fid} has no label file")
        det_path = Path(det_dir) / f"{fid}.jsonl"
        if not det_path.exists():
            raise MissingLabels(f"no detections for frame {fid}")
        pairs.append((read_detections(det_path), read_labels(lab)))
    if not pairs:
        raise EmptyDataset(f"no frames in {args.data_dir}")
    ecfg = EvalConfig(categories=cfg.categories)
    results = map_table(pairs, ecfg)
    atomic_write_text(args.out / "ap.csv", results_csv(results))
    atomic_write_text(args.out / "ap.md", results_markdown({cfg.encoder: results}, cfg.categories))
    return {"frames": len(pairs), "ap": {f"{r.category}/{r.difficulty}": r.ap for r in results}}, cfg


def cmd_bench(args, cfg):
    if args.frames is not None:
        ids = frame_ids(args.frames)
        frames = [args.frames / f"{fid}.bin" for fid in ids]
    elif args.synthetic > 0:
        from .synthetic import make_scene

        rng = named_rng(cfg.seed, "bench")
        frames = [make_scene(rng, categories=cfg.categories, frame_id=f"bench{k}")[0]
                  for k in range(args.synthetic)]
    else:
        raise UsageError("give --frames or --synthetic")
    rows = bench.run_bench(frames, cfg, repetitions=args.repetitions, threads=args.threads)
    bench.write_report(rows, args.out)
    return {"rows": len(rows), "frames": len(frames)}


def cmd_encode(args, cfg):
    lines = []
    for lineno, obj in read_jsonl(args.pairs):
        try:
            p_i, p_j = obj["p_i"], obj["p_j"]
            refl = float(obj.get("refl", 0.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad pair record: {exc}", lineno) from exc
        feat = encoding.encode_pair(cfg.encoder, p_i, p_j, refl, normalize=args.normalize)
        lines.append(json.dumps({"encoder": cfg.encoder, "geo": [float(v) for v in feat.geo],
                                 "reflectance": feat.reflectance, "d_enc": feat.d_enc}))
    atomic_write_text(args.out, "".join(line + "\n" for line in lines))
    return {"pairs": len(lines)}


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "bench": cmd_bench, "encode": cmd_encode}


def _setup_logging():
    level = os.environ.get("ANGLEGRAPH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run(argv=None):
    started = _now()
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    cfg = resolve_config(args)
    result = COMMANDS[args.command](args, cfg)
    if isinstance(result, tuple):
        result, cfg = result
    write_metadata(_meta_path(args.out), args.command, cfg, started,
                   {"threads": args.threads, "result": result})
    return 0


def main(argv=None):
    _setup_logging()
    try:
        return run(argv)
    except AngleGraphError as exc:
        log.error("%s", exc)
        print(f"anglegraph: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - last-resort mapping onto the internal-error status
        log.exception("internal error")
        print(f"anglegraph: internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
