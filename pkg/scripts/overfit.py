"""Overfit the detector on a handful of synthetic scenes and report training-set AP.

    python3 scripts/overfit.py --encoder relative --steps 2000 --out runs/overfit_rel
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from anglegraph.config import RunConfig
from anglegraph.evaluation import evaluate
from anglegraph.gnn.model import init_params, prepare_frame
from anglegraph.gnn.train import named_rng, save_checkpoint, train
from anglegraph.pipeline import detect
from anglegraph.synthetic import make_scene

CATEGORIES = ("Pedestrian", "Cyclist")


def scenes(n, seed):
    rng = np.random.default_rng(seed)
    return [make_scene(rng, frame_id=f"scene{k:02d}") for k in range(n)]


def training_ap(frames, data, params, cfg):
    dets = [detect(f, params, cfg) for f in frames]
    pairs = [(d, boxes) for d, (_, boxes) in zip(dets, data)]
    return {c: evaluate(pairs, c, "Hard", 0.5).ap for c in CATEGORIES}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--encoder", default="angle_relative")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--scenes", type=int, default=10)
    ap.add_argument("--scene-seed", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=250, help="evaluate every N steps")
    ap.add_argument("--override", default="{}", help="JSON dict of RunConfig overrides")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args(argv)

    cfg = RunConfig(encoder=args.encoder, category_set="ped_cyc", seed=args.seed,
                    max_steps=args.steps, **json.loads(args.override))
    data = scenes(args.scenes, args.scene_seed)
    frames = [prepare_frame(c, cfg, b) for c, b in data]
    params = init_params(cfg, named_rng(cfg.seed, "init"))
    t0 = time.perf_counter()
    history = []

    def cb(step, parts, lr):
        if (step + 1) % args.every == 0:
            res = training_ap(frames, data, params, cfg)
            history.append({"step": step + 1, "loss": parts["total"], **res})
            print(f"step {step + 1:5d} loss {parts['total']:.4f} lr {lr:.4g} "
                  + " ".join(f"{c} {v:.2f}" for c, v in res.items())
                  + f" [{time.perf_counter() - t0:.0f}s]", flush=True)

    params, log = train(None, cfg, params=params, frames=frames, callback=cb)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(args.out / "model.ckpt", params, cfg)
        log.write_csv(args.out / "train_log.csv")
        (args.out / "history.json").write_text(json.dumps(history, indent=1))


if __name__ == "__main__":
    main()
