#!/usr/bin/env python3
"""Ablate where running statistics adapt: none, single encoder blocks, or all.

Produces the same table format as the main benchmark with method rows
no_adapt / block1 / block2 / block3 / all.
"""

import argparse
import sys

from ttanav import cli


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--assets", default="assets")
    ap.add_argument("--episodes", default="assets/episodes_eval.json")
    ap.add_argument("--conditions", default=None,
                    help="comma list; default: clean + all corruption kinds")
    ap.add_argument("--severity", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--limit", type=int, default=None)
    ap.add_argument("--out", default="results_ablation")
    args = ap.parse_args()

    sys.exit(cli.cmd_ablate({
        "assets": args.assets, "episodes": args.episodes,
        "conditions": args.conditions, "severity": args.severity,
        "seed": args.seed, "limit": args.limit, "out": args.out,
    }))


if __name__ == "__main__":
    main()
