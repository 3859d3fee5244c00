#!/usr/bin/env python3
"""Run the full adaptation benchmark: methods x corruption conditions.

Each (method, condition) cell gets a fresh agent and its own corruption
stream whose per-frame randomness persists across episodes, so adaptation
state accumulates over the whole stream exactly once.
"""

import argparse
import sys

from ttanav import cli


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--assets", default="assets")
    ap.add_argument("--episodes", default="assets/episodes_eval.json")
    ap.add_argument("--methods",
                    default="no_adapt,dua,tent,tent_dua,shot_im,tta_nav")
    ap.add_argument("--conditions", default=None,
                    help="comma list; default: clean + all corruption kinds")
    ap.add_argument("--severity", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--limit", type=int, default=None,
                    help="cap on episodes per cell")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    sys.exit(cli.cmd_eval({
        "assets": args.assets, "episodes": args.episodes,
        "methods": args.methods, "conditions": args.conditions,
        "severity": args.severity, "seed": args.seed, "limit": args.limit,
        "out": args.out,
    }))


if __name__ == "__main__":
    main()
