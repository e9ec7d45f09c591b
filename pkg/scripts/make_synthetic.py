"""Write a directory of synthetic scenes in the on-disk layout the CLI reads.

    python3 scripts/make_synthetic.py --out data/synth --frames 10 --seed 7
"""

import argparse
import dataclasses
from pathlib import Path

import numpy as np

from anglegraph.pointcloud_io import DIFFICULTIES, write_labels, write_velodyne_bin
from anglegraph.synthetic import make_scene


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--frames", type=int, default=10)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--categories", default="Pedestrian,Cyclist")
    ap.add_argument("--objects", type=int, default=4)
    ap.add_argument("--clutter", type=int, default=100)
    ap.add_argument("--mixed-difficulty", action="store_true",
                    help="draw a random difficulty per box instead of Easy")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    cats = tuple(args.categories.split(","))
    args.out.mkdir(parents=True, exist_ok=True)
    for k in range(args.frames):
        fid = f"{k:06d}"
        cloud, boxes = make_scene(rng, categories=cats, n_objects=args.objects, clutter=args.clutter,
                                  frame_id=fid)
        if args.mixed_difficulty:
            boxes = [dataclasses.replace(b, difficulty=DIFFICULTIES[rng.integers(3)]) for b in boxes]
        write_velodyne_bin(args.out / f"{fid}.bin", cloud)
        write_labels(args.out / f"{fid}.jsonl", boxes)
    print(f"wrote {args.frames} frames to {args.out}")


if __name__ == "__main__":
    main()
