"""Point-goal episodes: sampling, manifests, and the environment loop."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import sim
from .sim import MAX_STEPS, STOP, SUCCESS_RADIUS, GridScene, Pose


@dataclass
class Observation:
    rgb: np.ndarray          # (H, W, 3) float in [0,1]
    goal_range: float        # meters, >= 0
    goal_bearing: float      # radians in (-pi, pi], relative to heading


@dataclass(frozen=True)
class EpisodeSpec:
    scene_seed: int
    start: tuple             # (x, y, theta)
    goal: tuple              # (x, y)
    length: float            # geodesic start->goal, meters


@dataclass(frozen=True)
class EpisodeResult:
    success: int             # 0/1; 1 only if stop was issued inside the success radius
    path_length: float       # meters of executed forward translation
    steps: int
    geodesic: float


def make_episodes(scenes, count, seed, min_geodesic=2.0, max_geodesic=12.0, ratio_min=1.1):
    """Sample episodes with geodesic length in bounds; deterministic given seed.

    A geodesic-to-euclidean ratio >= ratio_min is preferred (routes that bend
    around walls); after repeated failures the ratio constraint is dropped so
    very open scenes still yield episodes.
    """
    scenes = list(scenes)
    if not scenes:
        raise ValueError("need at least one scene")
    rng = np.random.default_rng(seed)
    free_cells = [np.argwhere(~sc.occupancy) for sc in scenes]
    episodes = []
    for _ in range(count):
        spec = None
        for attempt in range(200):
            si = int(rng.integers(len(scenes)))
            sc = scenes[si]
            cells = free_cells[si]
            a = cells[rng.integers(len(cells))]
            b = cells[rng.integers(len(cells))]
            ax, ay = sc.cell_center(*a)
            bx, by = sc.cell_center(*b)
            jit = rng.uniform(-0.02, 0.02, size=4)
            ax, ay, bx, by = ax + jit[0], ay + jit[1], bx + jit[2], by + jit[3]
            theta = float(rng.integers(36)) * np.deg2rad(10.0)
            try:
                l = sim.geodesic_distance(sc, (ax, ay), (bx, by))
            except ValueError:
                continue
            if not (min_geodesic <= l <= max_geodesic):
                continue
            euclid = float(np.hypot(bx - ax, by - ay))
            if attempt < 120 and euclid > 0 and l / euclid < ratio_min:
                continue
            spec = EpisodeSpec(sc.seed, (float(ax), float(ay), float(sim.snap_heading(theta))),
                               (float(bx), float(by)), float(l))
            break
        if spec is None:
            raise RuntimeError("make_episodes: could not satisfy length bounds")
        episodes.append(spec)
    return episodes


def save_episodes(path, scene_seeds, episodes):
    payload = {
        "scene_seeds": list(map(int, scene_seeds)),
        "episodes": [asdict(e) for e in episodes],
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)


def load_episodes(path):
    with open(path) as f:
        payload = json.load(f)
    eps = [EpisodeSpec(e["scene_seed"], tuple(e["start"]), tuple(e["goal"]), e["length"])
           for e in payload["episodes"]]
    return payload["scene_seeds"], eps


class SceneCache:
    """Regenerates scenes from seeds on demand (they are deterministic)."""

    def __init__(self):
        self._scenes = {}

    def get(self, seed: int) -> GridScene:
        if seed not in self._scenes:
            self._scenes[seed] = sim.generate_scene(seed)
        return self._scenes[seed]


def run_episode(scene: GridScene, episode: EpisodeSpec, agent, corrupt=None,
                resolution: int = 64, max_steps: int = MAX_STEPS, on_step=None) -> EpisodeResult:
    """Render -> corrupt -> act -> step until stop or timeout.

    ``corrupt`` is a callable frame filter (e.g. a CorruptionStream whose
    frame counter persists across episodes); ``on_step`` is an optional
    callback(t, pose, obs, action) for tracing.
    """
    agent.reset()
    pose = Pose(*episode.start)
    gx, gy = episode.goal
    path = 0.0
    steps = 0
    success = 0
    for t in range(max_steps):
        frame = sim.render(scene, pose, resolution)
        if corrupt is not None:
            frame = corrupt(frame)
        r, phi = sim.gps_compass(pose, episode.goal)
        obs = Observation(frame, r, phi)
        try:
            action = agent.act(obs)
        except Exception as exc:
            raise RuntimeError(f"agent failed at step {t} of episode {episode}") from exc
        if on_step is not None:
            on_step(t, pose, obs, action)
        steps += 1
        if action == STOP:
            success = int(np.hypot(gx - pose.x, gy - pose.y) <= SUCCESS_RADIUS)
            break
        pose, _, moved = sim.step(scene, pose, action)
        path += moved
    return EpisodeResult(success, float(path), steps, episode.length)


class OracleAgent:
    """Shortest-path expert in the agent protocol.

    The oracle is map-based, not vision-based: it dead-reckons the true pose
    by replaying its own actions through the (deterministic) step function,
    which tracks the environment loop exactly.
    """

    def __init__(self, scene: GridScene, episode: EpisodeSpec):
        self.scene = scene
        self.episode = episode
        self._pose = None

    def reset(self):
        self._pose = Pose(*self.episode.start)

    def act(self, obs: Observation) -> int:
        action = sim.oracle_action(self.scene, self._pose, self.episode.goal)
        if action != STOP:
            self._pose, _, _ = sim.step(self.scene, self._pose, action)
        return action
