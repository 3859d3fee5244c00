#!/usr/bin/env python3
"""Build every asset the benchmark needs, end to end.

Pipeline: training scenes -> training episodes -> oracle replay ->
behavior-cloned encoder+policy -> reconstruction decoder -> held-out
evaluation scenes/episodes.  Evaluation scenes use disjoint seeds so the
reported numbers are on mazes the policy never saw during training.
"""

import argparse
import sys
import time
from pathlib import Path

from ttanav import cli


def run(step: str, fn, cfg: dict) -> None:
    t0 = time.time()
    print(f"== {step}")
    code = fn(cfg)
    if code != 0:
        sys.exit(code)
    print(f"   ({time.time() - t0:.1f}s)")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="assets", help="asset directory")
    ap.add_argument("--train-scenes", type=int, default=8)
    ap.add_argument("--train-scene-seed", type=int, default=0)
    ap.add_argument("--eval-scenes", type=int, default=4)
    ap.add_argument("--eval-scene-seed", type=int, default=100)
    ap.add_argument("--train-episodes", type=int, default=160)
    ap.add_argument("--eval-episodes", type=int, default=100)
    ap.add_argument("--frames", type=int, default=30000)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--batch-size", type=int, default=12)
    ap.add_argument("--decoder-steps", type=int, default=3000)
    ap.add_argument("--val-limit", type=int, default=40,
                    help="eval episodes used for the post-training rollout check")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    run("training scenes", cli.cmd_gen_scenes,
        {"count": args.train_scenes, "seed": args.train_scene_seed,
         "out": out / "scenes_train.json"})
    run("evaluation scenes", cli.cmd_gen_scenes,
        {"count": args.eval_scenes, "seed": args.eval_scene_seed,
         "out": out / "scenes_eval.json"})
    run("training episodes", cli.cmd_make_episodes,
        {"scenes": out / "scenes_train.json", "count": args.train_episodes,
         "seed": 1, "min_geodesic": 2.0, "max_geodesic": 12.0,
         "out": out / "episodes_train.json"})
    run("evaluation episodes", cli.cmd_make_episodes,
        {"scenes": out / "scenes_eval.json", "count": args.eval_episodes,
         "seed": 11, "min_geodesic": 2.0, "max_geodesic": 6.0,
         "out": out / "episodes_eval.json"})
    run("oracle replay", cli.cmd_collect_replay,
        {"episodes": out / "episodes_train.json", "frames": args.frames,
         "seed": 2, "noise_rate": 0.1, "out": out / "replay.npz"})
    run("behavior cloning", cli.cmd_train_policy,
        {"replay": out / "replay.npz", "epochs": args.epochs,
         "batch_size": args.batch_size, "window": 16, "lr": 1e-3, "seed": 3,
         "val_episodes": str(out / "episodes_eval.json"),
         "val_limit": args.val_limit, "out": str(out)})
    run("decoder training", cli.cmd_train_decoder,
        {"replay": out / "replay.npz", "assets": str(out),
         "steps": args.decoder_steps, "batch_size": 16, "lr": 2e-4,
         "ema_decay": 0.9999, "seed": 4, "out": None})
    print(f"assets ready under {out}")


if __name__ == "__main__":
    main()
