"""Benchmark grid: methods x corruptions -> success/SPL tables and reports."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import AdaptiveAgent, MethodConfig, ModelBundle, make_agent
from .autodiff import no_grad
from .corruption import KINDS, CorruptionSpec, CorruptionStream, apply, hash_combine, save_png
from .episodes import EpisodeSpec, OracleAgent, SceneCache, run_episode
from .model import frame_to_tensor
from .norm import Mode, norm_layers
from .sim import MAX_STEPS, render

CONDITIONS = ("clean",) + tuple(k for k in KINDS if k != "clean")


def compute_spl(success: bool, geodesic: float, path_length: float) -> float:
    """Success weighted by shortest-path/actual-path ratio; 0 on failure."""
    if geodesic <= 0:
        raise ValueError("geodesic distance must be positive")
    if not success:
        return 0.0
    return geodesic / max(geodesic, path_length)


def compute_sr(successes) -> float:
    a = np.asarray(successes, dtype=np.float64)
    if a.size == 0:
        raise ValueError("no episodes")
    return float(np.mean(a))


@dataclass(frozen=True)
class Cell:
    sr: float
    spl: float
    episodes: int
    mean_steps: float


@dataclass
class ResultsTable:
    """Per-(method, condition) metrics plus Average/Minimum aggregate rows."""

    methods: list = field(default_factory=list)
    conditions: list = field(default_factory=list)
    cells: dict = field(default_factory=dict)  # (method, condition) -> Cell

    def add(self, method: str, condition: str, episode_rows: list) -> Cell:
        if not episode_rows:
            raise ValueError("empty episode list")
        sr = compute_sr([r["success"] for r in episode_rows])
        spl = float(np.mean([r["spl"] for r in episode_rows]))
        steps = float(np.mean([r["steps"] for r in episode_rows]))
        cell = Cell(sr=sr, spl=spl, episodes=len(episode_rows), mean_steps=steps)
        self.set_cell(method, condition, cell)
        return cell

    def set_cell(self, method: str, condition: str, cell: Cell) -> None:
        if method not in self.methods:
            self.methods.append(method)
        if condition not in self.conditions:
            self.conditions.append(condition)
        self.cells[(method, condition)] = cell

    def cell(self, method: str, condition: str) -> Cell:
        return self.cells[(method, condition)]

    def average(self, method: str) -> Cell:
        """Mean over every condition row, the clean row included."""
        rows = [self.cells[(method, c)] for c in self.conditions]
        return Cell(
            sr=float(np.mean([r.sr for r in rows])),
            spl=float(np.mean([r.spl for r in rows])),
            episodes=int(sum(r.episodes for r in rows)),
            mean_steps=float(np.mean([r.mean_steps for r in rows])),
        )

    def minimum(self, method: str) -> Cell:
        """Worst condition row per metric (rows may differ per metric)."""
        rows = [self.cells[(method, c)] for c in self.conditions]
        return Cell(
            sr=float(min(r.sr for r in rows)),
            spl=float(min(r.spl for r in rows)),
            episodes=int(min(r.episodes for r in rows)),
            mean_steps=float(max(r.mean_steps for r in rows)),
        )

    def iter_rows(self):
        """All rows including aggregates, in table order."""
        for m in self.methods:
            for c in self.conditions:
                yield m, c, self.cells[(m, c)]
            yield m, "Average", self.average(m)
            yield m, "Minimum", self.minimum(m)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "corruption", "sr", "spl", "episodes", "mean_steps"])
            for m, c, cell in self.iter_rows():
                w.writerow([m, c, repr(cell.sr), repr(cell.spl),
                            cell.episodes, repr(cell.mean_steps)])

    def to_json(self, path) -> None:
        doc = {
            "methods": list(self.methods),
            "conditions": list(self.conditions),
            "cells": [
                {"method": m, "condition": c, "sr": cell.sr, "spl": cell.spl,
                 "episodes": cell.episodes, "mean_steps": cell.mean_steps}
                for (m, c), cell in sorted(self.cells.items())
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ResultsTable":
        with open(path) as fh:
            doc = json.load(fh)
        table = cls(methods=list(doc["methods"]), conditions=list(doc["conditions"]))
        for row in doc["cells"]:
            table.cells[(row["method"], row["condition"])] = Cell(
                sr=row["sr"], spl=row["spl"],
                episodes=row["episodes"], mean_steps=row["mean_steps"])
        return table


def stream_seed(seed: int, method_name: str, condition: str) -> int:
    """Stable per-(method, condition) corruption seed; independent of grid order."""
    tag = f"{method_name}|{condition}".encode()
    digest = hashlib.blake2s(tag, digest_size=8).digest()
    return hash_combine(seed, int.from_bytes(digest, "little"))


@dataclass(frozen=True)
class BenchmarkConfig:
    episodes: tuple
    methods: tuple
    conditions: tuple = CONDITIONS
    severity: int = 3
    seed: int = 0
    resolution: int = 64
    max_steps: int = MAX_STEPS

    def __post_init__(self):
        if not self.episodes:
            raise ValueError("no episodes")
        if not self.methods:
            raise ValueError("no methods")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate method names {names}")
        for c in self.conditions:
            if c not in KINDS:
                raise ValueError(f"unknown corruption {c!r}")
        seeds = {stream_seed(self.seed, n, c)
                 for n in names for c in self.conditions}
        if len(seeds) != len(names) * len(self.conditions):
            raise ValueError("corruption stream seed collision")


def _run_stream(bundle: ModelBundle, cache: SceneCache, episodes, method: MethodConfig,
                condition: str, severity: int, seed: int, resolution: int,
                max_steps: int = MAX_STEPS):
    """One (method, condition) cell: fresh agent, one corruption stream, all episodes."""
    agent = make_agent(method, bundle)
    spec = CorruptionSpec(condition, severity, stream_seed(seed, method.name, condition))
    stream = CorruptionStream(spec)
    rows = []
    for i, ep in enumerate(episodes):
        res = run_episode(cache.get(ep.scene_seed), ep, agent,
                          corrupt=stream, resolution=resolution, max_steps=max_steps)
        rows.append({
            "method": method.name, "corruption": condition, "episode": i,
            "success": bool(res.success), "geodesic": res.geodesic,
            "path_length": res.path_length, "steps": res.steps,
            "spl": compute_spl(res.success, res.geodesic, res.path_length),
        })
    return rows


def run_benchmark(bundle: ModelBundle, config: BenchmarkConfig,
                  log_path=None, progress=None):
    """Full methods x conditions grid.  Returns (ResultsTable, episode rows).

    Streams are independent (per-cell seeds and fresh agents), so any execution
    order yields the same table; cells run serially here and merge by key.
    """
    cache = SceneCache()
    table = ResultsTable()
    all_rows = []
    for method in config.methods:
        for condition in config.conditions:
            rows = _run_stream(bundle, cache, config.episodes, method, condition,
                               config.severity, config.seed, config.resolution,
                               config.max_steps)
            table.add(method.name, condition, rows)
            all_rows.extend(rows)
            if progress is not None:
                progress(method.name, condition, table.cell(method.name, condition))
    if log_path is not None:
        with open(log_path, "w") as fh:
            for row in all_rows:
                fh.write(json.dumps(row) + "\n")
    return table, all_rows


ABLATION_MASKS = (
    ("no_adapt", None),
    ("block1", ("block1",)),
    ("block2", ("block2",)),
    ("block3", ("block3",)),
    ("all", ("block1", "block2", "block3")),
)


def ablation_methods(momentum: float = 0.01) -> tuple:
    """Stat-update placement variants: none, single blocks, all blocks."""
    methods = []
    for label, blocks in ABLATION_MASKS:
        if blocks is None:
            methods.append(MethodConfig("no_adapt", label=label))
        else:
            methods.append(MethodConfig("tta_nav", momentum=momentum,
                                        adapt_blocks=blocks, label=label))
    return tuple(methods)


def run_ablation(bundle: ModelBundle, config: BenchmarkConfig,
                 log_path=None, progress=None):
    config = BenchmarkConfig(
        episodes=config.episodes, methods=ablation_methods(),
        conditions=config.conditions, severity=config.severity,
        seed=config.seed, resolution=config.resolution,
        max_steps=config.max_steps)
    return run_benchmark(bundle, config, log_path=log_path, progress=progress)


def _tile_panels(panels: list) -> np.ndarray:
    """Stack a list of equally sized HxWx3 frames horizontally with 2px gutters."""
    h = panels[0].shape[0]
    gap = np.ones((h, 2, 3), dtype=np.float64)
    row = []
    for i, p in enumerate(panels):
        if i:
            row.append(gap)
        row.append(np.asarray(p, dtype=np.float64))
    return np.concatenate(row, axis=1)


def reconstruction_grid(bundle: ModelBundle, cache: SceneCache, episode: EpisodeSpec,
                        condition: str, severity: int, seed: int,
                        adapt_steps: int = 30, resolution: int = 64) -> np.ndarray:
    """(corrupted | frozen-stat recon | adapted recon | clean) panel strip.

    Replays up to ``adapt_steps`` frames through an adapting agent so its
    running stats move onto the corrupted domain, then decodes the last
    observed frame with the original clean stats and with the adapted stats.
    The clean panel is a fresh render at the recorded pose.
    """
    scene = cache.get(episode.scene_seed)
    spec = CorruptionSpec(condition, severity, stream_seed(seed, "grid", condition))
    stream = CorruptionStream(spec)
    agent = make_agent(MethodConfig("tta_nav"), bundle)
    trace = []

    def keep(t, pose, obs, action):
        trace.append((pose, obs))

    run_episode(scene, episode, agent, corrupt=stream, resolution=resolution,
                max_steps=adapt_steps, on_step=keep)
    pose, obs = trace[-1]
    adapted = _decode(agent, obs.rgb)
    # A freshly constructed agent still carries the stored clean statistics.
    frozen = _decode(make_agent(MethodConfig("tta_nav"), bundle), obs.rgb)
    clean = render(scene, pose, resolution)
    return _tile_panels([obs.rgb, frozen, adapted, clean])


def _decode(agent: AdaptiveAgent, rgb: np.ndarray) -> np.ndarray:
    """Decoder output under the agent's current stats, without updating them."""
    x = frame_to_tensor(rgb)
    layers = list(norm_layers(agent.encoder))
    saved = [layer.mode for _, layer in layers]
    for _, layer in layers:
        layer.mode = Mode.FROZEN
    try:
        with no_grad():
            z = agent.encoder.features(x)
            out = agent.decoder(z)
    finally:
        for (_, layer), mode in zip(layers, saved):
            layer.mode = mode
    return np.transpose(out.data[0], (1, 2, 0)).astype(np.float64)


def oracle_frame_stream(cache: SceneCache, episodes, n_frames: int,
                        resolution: int = 64) -> np.ndarray:
    """Clean frames seen by the shortest-path expert, episodes chained in order.

    The expert ignores pixels, so the pose sequence (and hence the frame
    stream) is identical for every corruption overlaid on it afterwards.
    """
    frames = []
    for ep in episodes:
        if len(frames) >= n_frames:
            break
        scene = cache.get(ep.scene_seed)

        def keep(t, pose, obs, action):
            if len(frames) < n_frames:
                frames.append(obs.rgb)

        run_episode(scene, ep, OracleAgent(scene, ep), resolution=resolution,
                    on_step=keep)
    if len(frames) < n_frames:
        raise ValueError(f"episodes yielded {len(frames)} frames, need {n_frames}")
    return np.stack(frames)


def restoration_probe(bundle: ModelBundle, clean_frames: np.ndarray,
                      condition: str, severity: int = 3, seed: int = 0,
                      adapt_frames: int = 100, momentum: float = 0.01):
    """Does statistic adaptation move reconstructions toward the clean image?

    Feeds corrupted frames through an adapting encoder for ``adapt_frames``
    steps, then on every remaining frame compares the decoder output under
    the adapted (still-updating) statistics against the stored clean
    statistics: per-frame MSE to the clean ground truth.  Returns a dict with
    the strict win rate and the two mean MSE curves.
    """
    if len(clean_frames) <= adapt_frames:
        raise ValueError("need more frames than adaptation steps")
    spec = CorruptionSpec(condition, severity, stream_seed(seed, "restore", condition))
    adapted = make_agent(MethodConfig("tta_nav", momentum=momentum), bundle)
    frozen = make_agent(MethodConfig("tta_nav", momentum=momentum), bundle)
    mse_adapt, mse_frozen = [], []
    with no_grad():
        for i, clean in enumerate(clean_frames):
            corrupted = apply(spec, i, clean)
            x = frame_to_tensor(corrupted)
            z = adapted.encoder.features(x)       # Adapt mode: stats advance
            if i < adapt_frames:
                continue
            recon = adapted.decoder(z).data[0].transpose(1, 2, 0)
            mse_adapt.append(float(np.mean((recon - clean) ** 2)))
            mse_frozen.append(float(np.mean((_decode(frozen, corrupted) - clean) ** 2)))
    wins = float(np.mean(np.asarray(mse_adapt) < np.asarray(mse_frozen)))
    return {"condition": condition, "win_rate": wins,
            "mse_adapt": float(np.mean(mse_adapt)),
            "mse_frozen": float(np.mean(mse_frozen))}


def report(table: ResultsTable, out_dir) -> dict:
    """Write results.csv + results.json; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    json_path = out / "results.json"
    table.to_csv(csv_path)
    table.to_json(json_path)
    return {"csv": str(csv_path), "json": str(json_path)}


def write_recon_grids(bundle: ModelBundle, episode: EpisodeSpec, conditions,
                      severity: int, seed: int, out_dir,
                      adapt_steps: int = 30, resolution: int = 64) -> list:
    """One PNG per condition: corrupted | frozen recon | adapted recon | clean."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = SceneCache()
    paths = []
    for condition in conditions:
        grid = reconstruction_grid(bundle, cache, episode, condition, severity,
                                   seed, adapt_steps=adapt_steps,
                                   resolution=resolution)
        path = out / f"recon_{condition}.png"
        save_png(path, grid)
        paths.append(str(path))
    return paths
