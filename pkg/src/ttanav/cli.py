"""Command line interface: asset preparation, corruption, evaluation, reports.

Every subcommand reads its settings from built-in defaults, overridden by
``--config file.json`` keys of the same names, overridden by explicit flags.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


DEFAULTS = {
    "gen-scenes": {"count": 8, "seed": 0, "out": "assets/scenes.json"},
    "make-episodes": {"scenes": None, "count": 100, "seed": 1,
                      "min_geodesic": 2.0, "max_geodesic": 12.0,
                      "out": "assets/episodes.json"},
    "collect-replay": {"episodes": None, "frames": 20000, "seed": 2,
                       "noise_rate": 0.1, "out": "assets/replay.npz"},
    "train-policy": {"replay": None, "epochs": 4, "batch_size": 8, "window": 16,
                     "lr": 1e-3, "seed": 3, "val_episodes": None, "val_limit": 40,
                     "out": "assets"},
    "train-decoder": {"replay": None, "assets": "assets", "steps": 3000,
                      "batch_size": 16, "lr": 2e-4, "ema_decay": 0.9999,
                      "seed": 4, "out": None},
    "corrupt": {"kind": None, "severity": 3, "seed": 0, "input": None,
                "out": "corrupted"},
    "eval": {"assets": "assets", "episodes": None, "methods": "no_adapt,tta_nav",
             "conditions": None, "severity": 3, "seed": 0, "limit": None,
             "max_steps": None, "out": "results"},
    "ablate": {"assets": "assets", "episodes": None, "conditions": None,
               "severity": 3, "seed": 0, "limit": None, "max_steps": None,
               "out": "results_ablation"},
    "report": {"results": None, "assets": None, "episodes": None,
               "severity": 3, "seed": 0, "adapt_steps": 30, "out": None},
}

REQUIRED = {
    "make-episodes": ["scenes"],
    "collect-replay": ["episodes"],
    "train-policy": ["replay"],
    "train-decoder": ["replay"],
    "corrupt": ["kind", "input"],
    "eval": ["episodes"],
    "ablate": ["episodes"],
    "report": ["results"],
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttanav",
                                description="navigation test-time adaptation toolkit")
    sub = p.add_subparsers(dest="cmd")

    def add(name, help_, flags):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", default=None, help="JSON config file")
        for flag, kind in flags.items():
            sp.add_argument(f"--{flag.replace('_', '-')}", dest=flag,
                            type=kind, default=None)
        return sp

    add("gen-scenes", "generate maze scenes and save their seeds",
        {"count": int, "seed": int, "out": str})
    add("make-episodes", "sample start/goal episodes over saved scenes",
        {"scenes": str, "count": int, "seed": int, "min_geodesic": float,
         "max_geodesic": float, "out": str})
    add("collect-replay", "record oracle navigation experience",
        {"episodes": str, "frames": int, "seed": int, "noise_rate": float,
         "out": str})
    add("train-policy", "behavior-clone encoder+policy on replay",
        {"replay": str, "epochs": int, "batch_size": int, "window": int,
         "lr": float, "seed": int, "val_episodes": str, "val_limit": int,
         "out": str})
    add("train-decoder", "train the reconstruction decoder on frozen features",
        {"replay": str, "assets": str, "steps": int, "batch_size": int,
         "lr": float, "ema_decay": float, "seed": int, "out": str})
    add("corrupt", "apply a corruption to PNG frames",
        {"kind": str, "severity": int, "seed": int, "input": str, "out": str})
    add("eval", "run the methods x corruptions benchmark grid",
        {"assets": str, "episodes": str, "methods": str, "conditions": str,
         "severity": int, "seed": int, "limit": int, "max_steps": int,
         "out": str})
    add("ablate", "run the stat-update placement ablation",
        {"assets": str, "episodes": str, "conditions": str, "severity": int,
         "seed": int, "limit": int, "max_steps": int, "out": str})
    add("report", "rewrite tables and reconstruction grids from saved results",
        {"results": str, "assets": str, "episodes": str, "severity": int,
         "seed": int, "adapt_steps": int, "out": str})
    return p


def resolve_config(cmd: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[cmd])
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        with open(path) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    for key in REQUIRED.get(cmd, []):
        if cfg[key] is None:
            flag = "--" + key.replace("_", "-")
            raise UsageError(f"{cmd}: missing {flag} (or config key {key!r})")
    return cfg


def _print(msg: str) -> None:
    print(msg, flush=True)


def cmd_gen_scenes(cfg: dict) -> int:
    from .sim import generate_scene

    seeds = [int(cfg["seed"]) + i for i in range(int(cfg["count"]))]
    free = {}
    for s in seeds:
        scene = generate_scene(s)
        free[str(s)] = float(np.mean(~scene.occupancy))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump({"scene_seeds": seeds, "free_fraction": free}, fh, indent=2)
        fh.write("\n")
    _print(f"wrote {len(seeds)} scene seeds to {out}")
    return EXIT_OK


def cmd_make_episodes(cfg: dict) -> int:
    from .episodes import SceneCache, make_episodes, save_episodes

    with open(cfg["scenes"]) as fh:
        scene_seeds = json.load(fh)["scene_seeds"]
    cache = SceneCache()
    scenes = [cache.get(s) for s in scene_seeds]
    eps = make_episodes(scenes, int(cfg["count"]), int(cfg["seed"]),
                        float(cfg["min_geodesic"]), float(cfg["max_geodesic"]))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_episodes(out, scene_seeds, eps)
    lengths = [e.length for e in eps]
    _print(f"wrote {len(eps)} episodes to {out} "
           f"(geodesic {min(lengths):.2f}..{max(lengths):.2f} m)")
    return EXIT_OK


def cmd_collect_replay(cfg: dict) -> int:
    from .episodes import SceneCache, load_episodes
    from .training import collect_replay

    _, eps = load_episodes(cfg["episodes"])
    replay = collect_replay(SceneCache(), eps, int(cfg["frames"]), int(cfg["seed"]),
                            noise_rate=float(cfg["noise_rate"]))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    replay.save(out)
    _print(f"wrote {len(replay.labels)} frames to {out}")
    return EXIT_OK


def cmd_train_policy(cfg: dict) -> int:
    from . import checkpoint
    from .model import Encoder, Policy
    from .training import ReplayDataset, greedy_rollout_sr, train_policy_bc

    replay = ReplayDataset.load(cfg["replay"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    encoder = Encoder(seed=int(cfg["seed"]))
    policy = Policy(seed=int(cfg["seed"]) + 1)
    stats = train_policy_bc(replay, encoder, policy,
                            epochs=int(cfg["epochs"]),
                            batch_size=int(cfg["batch_size"]),
                            window=int(cfg["window"]), lr=float(cfg["lr"]),
                            seed=int(cfg["seed"]),
                            metrics_csv=out / "bc_metrics.csv")
    checkpoint.save_module(out / "encoder.ttan", encoder)
    checkpoint.save_module(out / "policy.ttan", policy)
    _print(f"saved encoder/policy to {out} "
           f"(loss {stats['loss']:.4f}, label accuracy {stats['acc']:.3f})")
    if cfg["val_episodes"]:
        from .episodes import SceneCache, load_episodes

        _, eps = load_episodes(cfg["val_episodes"])
        eps = eps[: int(cfg["val_limit"])]
        sr = greedy_rollout_sr(SceneCache(), eps, encoder, policy)
        _print(f"clean rollout success rate: {sr:.3f} over {len(eps)} episodes")
    return EXIT_OK


def cmd_train_decoder(cfg: dict) -> int:
    from . import checkpoint
    from .model import Decoder, Encoder
    from .training import ReplayDataset, train_decoder

    assets = Path(cfg["assets"])
    out = Path(cfg["out"]) if cfg["out"] else assets
    out.mkdir(parents=True, exist_ok=True)
    replay = ReplayDataset.load(cfg["replay"])
    encoder = Encoder(seed=0)
    checkpoint.load_module(assets / "encoder.ttan", encoder)
    decoder = Decoder(seed=int(cfg["seed"]))
    loss, hold_mse, base_mse = train_decoder(
        replay, encoder, decoder, steps=int(cfg["steps"]),
        batch_size=int(cfg["batch_size"]), lr=float(cfg["lr"]),
        ema_decay=float(cfg["ema_decay"]), seed=int(cfg["seed"]),
        metrics_csv=out / "decoder_metrics.csv")
    checkpoint.save_module(out / "decoder.ttan", decoder)
    _print(f"saved decoder to {out} (train loss {loss:.5f}, "
           f"holdout mse {hold_mse:.5f}, mean-image mse {base_mse:.5f})")
    return EXIT_OK


def cmd_corrupt(cfg: dict) -> int:
    from .corruption import CorruptionSpec, apply, load_png, save_png

    spec = CorruptionSpec(cfg["kind"], int(cfg["severity"]), int(cfg["seed"]))
    src = Path(cfg["input"])
    paths = sorted(src.glob("*.png")) if src.is_dir() else [src]
    if not paths:
        raise FileNotFoundError(f"no PNG files under {src}")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for i, path in enumerate(paths):
        frame = apply(spec, i, load_png(path))
        save_png(out / path.name, frame)
    _print(f"corrupted {len(paths)} frame(s) with {cfg['kind']} "
           f"severity {cfg['severity']} into {out}")
    return EXIT_OK


def _parse_methods(value):
    from .agents import MethodConfig

    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    methods = []
    for item in value:
        if isinstance(item, str):
            methods.append(MethodConfig(item))
        else:
            methods.append(MethodConfig(**{k: tuple(v) if k == "adapt_blocks" else v
                                           for k, v in item.items()}))
    return tuple(methods)


def _parse_conditions(value):
    from .bench import CONDITIONS

    if value is None:
        return CONDITIONS
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    return tuple(value)


def _bench_config(cfg: dict, methods):
    from .bench import BenchmarkConfig
    from .episodes import load_episodes

    _, eps = load_episodes(cfg["episodes"])
    if cfg.get("limit"):
        eps = eps[: int(cfg["limit"])]
    extra = {}
    if cfg.get("max_steps"):
        extra["max_steps"] = int(cfg["max_steps"])
    return BenchmarkConfig(episodes=tuple(eps), methods=methods,
                           conditions=_parse_conditions(cfg["conditions"]),
                           severity=int(cfg["severity"]), seed=int(cfg["seed"]),
                           **extra)


def _progress(method, condition, cell):
    _print(f"  {method:>10s} | {condition:<18s} "
           f"sr {cell.sr:.3f}  spl {cell.spl:.3f}  steps {cell.mean_steps:.1f}")


def cmd_eval(cfg: dict) -> int:
    from .agents import ModelBundle
    from .bench import report, run_benchmark

    bundle = ModelBundle.load(cfg["assets"])
    bench_cfg = _bench_config(cfg, _parse_methods(cfg["methods"]))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    table, _ = run_benchmark(bundle, bench_cfg, log_path=out / "episodes.jsonl",
                             progress=_progress)
    paths = report(table, out)
    _print(f"wrote {paths['csv']} and {paths['json']}")
    return EXIT_OK


def cmd_ablate(cfg: dict) -> int:
    from .agents import ModelBundle
    from .bench import ablation_methods, report, run_ablation

    bundle = ModelBundle.load(cfg["assets"])
    bench_cfg = _bench_config(cfg, ablation_methods())
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    table, _ = run_ablation(bundle, bench_cfg, log_path=out / "episodes.jsonl",
                            progress=_progress)
    paths = report(table, out)
    _print(f"wrote {paths['csv']} and {paths['json']}")
    return EXIT_OK


def cmd_report(cfg: dict) -> int:
    from .bench import ResultsTable, report, write_recon_grids

    results = Path(cfg["results"])
    table = ResultsTable.from_json(results / "results.json")
    out = Path(cfg["out"]) if cfg["out"] else results
    paths = report(table, out)
    _print(f"wrote {paths['csv']} and {paths['json']}")
    if cfg["assets"] and cfg["episodes"]:
        from .agents import ModelBundle
        from .episodes import load_episodes

        bundle = ModelBundle.load(cfg["assets"])
        _, eps = load_episodes(cfg["episodes"])
        conditions = [c for c in table.conditions if c != "clean"]
        grids = write_recon_grids(bundle, eps[0], conditions,
                                  int(cfg["severity"]), int(cfg["seed"]), out,
                                  adapt_steps=int(cfg["adapt_steps"]))
        _print(f"wrote {len(grids)} reconstruction grids to {out}")
    return EXIT_OK


COMMANDS = {
    "gen-scenes": cmd_gen_scenes,
    "make-episodes": cmd_make_episodes,
    "collect-replay": cmd_collect_replay,
    "train-policy": cmd_train_policy,
    "train-decoder": cmd_train_decoder,
    "corrupt": cmd_corrupt,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.cmd is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = resolve_config(args.cmd, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.cmd](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
