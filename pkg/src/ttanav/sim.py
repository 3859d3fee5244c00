"""Procedural 2D indoor worlds with a first-person raycast renderer.

Worlds are occupancy grids (default 32x32 cells of 0.25 m) generated by BSP
room splits joined with 2-cell-wide L-corridors. The agent is a 0.1 m-radius
disc with a continuous pose; actions are forward 0.25 m (clipped on contact,
no sliding), exact +/-10 degree turns, and stop. Rendering is column-per-ray
DDA with a 90 degree FOV, per-room wall hues with vertical stripes, and
distance shading, so frames carry localization cues.

Headings live on a 3600-tick grid (0.1 degree) so that 36 left turns close
to a bit-identical pose and renders are exactly reproducible.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .corruption import hash_combine

CELL_SIZE = 0.25
AGENT_RADIUS = 0.1
FORWARD_STEP = 0.25
SUCCESS_RADIUS = 0.2
MAX_STEPS = 500
HEADING_TICKS = 3600           # 0.1 degree resolution; 10 degrees = 100 ticks
TURN_TICKS = 100
HEADING_STEP = 2.0 * np.pi / HEADING_TICKS
FOV_DEG = 90.0

STOP, FORWARD, LEFT, RIGHT = 0, 1, 2, 3
ACTIONS = (STOP, FORWARD, LEFT, RIGHT)
ACTION_NAMES = ("stop", "forward", "left", "right")


def snap_heading(theta: float) -> float:
    """Snap an angle onto the heading grid (exact turn arithmetic)."""
    tick = int(round(theta / HEADING_STEP)) % HEADING_TICKS
    return tick * HEADING_STEP


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = (a + np.pi) % (2.0 * np.pi) - np.pi
    return np.pi if w == -np.pi else w


@dataclass
class Pose:
    x: float
    y: float
    theta: float  # radians in [0, 2*pi), always on the heading grid

    def __post_init__(self):
        self.theta = snap_heading(self.theta)


@dataclass
class GridScene:
    """Immutable-after-generation world: occupancy plus render palette."""

    seed: int
    size: int
    cell_size: float
    occupancy: np.ndarray          # (size, size) bool, True = wall
    wall_color: np.ndarray         # (size, size, 3) float
    stripe_id: np.ndarray          # (size, size) int in 0..3
    floor_color: np.ndarray
    ceil_color: np.ndarray
    _dist_fields: dict = field(default_factory=dict, repr=False)

    @property
    def extent(self) -> float:
        return self.size * self.cell_size

    def cell_of(self, x: float, y: float):
        return int(y / self.cell_size), int(x / self.cell_size)

    def cell_center(self, i: int, j: int):
        return (j + 0.5) * self.cell_size, (i + 0.5) * self.cell_size

    def in_bounds(self, i: int, j: int) -> bool:
        return 0 <= i < self.size and 0 <= j < self.size

    def free_at(self, x: float, y: float) -> bool:
        i, j = self.cell_of(x, y)
        return self.in_bounds(i, j) and not self.occupancy[i, j]


def _hsv1(h, s, v):
    import colorsys

    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v))


def generate_scene(seed: int, size: int = 32, cell_size: float = CELL_SIZE) -> GridScene:
    """BSP rooms + 2-wide L-corridors; retries internally until connected."""
    for attempt in range(64):
        rng = np.random.default_rng(hash_combine(seed, attempt))
        occ = np.ones((size, size), dtype=bool)
        leaves = []

        def split(y0, x0, y1, x1, depth):
            h, w = y1 - y0, x1 - x0
            if depth == 0 or (h < 14 and w < 14) or rng.uniform() < 0.15:
                leaves.append((y0, x0, y1, x1))
                return
            if w >= h:
                cut = rng.integers(x0 + 7, x1 - 6)
                split(y0, x0, y1, cut, depth - 1)
                split(y0, cut, y1, x1, depth - 1)
            else:
                cut = rng.integers(y0 + 7, y1 - 6)
                split(y0, x0, cut, x1, depth - 1)
                split(cut, x0, y1, x1, depth - 1)

        split(1, 1, size - 1, size - 1, depth=2)

        centers = []
        for (y0, x0, y1, x1) in leaves:
            ry0 = y0 + 1 + int(rng.integers(0, 2))
            rx0 = x0 + 1 + int(rng.integers(0, 2))
            ry1 = y1 - 1 - int(rng.integers(0, 2))
            rx1 = x1 - 1 - int(rng.integers(0, 2))
            occ[ry0:ry1, rx0:rx1] = False
            centers.append(((ry0 + ry1) // 2, (rx0 + rx1) // 2))

        order = rng.permutation(len(centers))
        for k in range(len(centers) - 1):
            (ay, ax), (by, bx) = centers[order[k]], centers[order[k + 1]]
            ylo, yhi = sorted((ay, by))
            xlo, xhi = sorted((ax, bx))
            # horizontal leg at ay, then vertical leg at bx, both 2 cells wide
            occ[max(1, ay) : min(size - 1, ay + 2), max(1, xlo) : min(size - 1, xhi + 2)] = False
            occ[max(1, ylo) : min(size - 1, yhi + 2), max(1, bx) : min(size - 1, bx + 2)] = False

        occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
        free = ~occ
        labels, ncomp = ndimage.label(free)
        if ncomp != 1 or free.sum() < 0.2 * size * size:
            continue

        wall_color = np.zeros((size, size, 3))
        stripe = rng.integers(0, 4, size=(size, size))
        for (y0, x0, y1, x1) in leaves:
            base = _hsv1(rng.uniform(), rng.uniform(0.45, 0.8), rng.uniform(0.5, 0.85))
            jitter = rng.uniform(-0.06, 0.06, size=(y1 - y0, x1 - x0, 1))
            wall_color[y0:y1, x0:x1] = np.clip(base + jitter, 0.05, 1.0)
        # boundary ring reuses adjacent interior colors
        wall_color[0, :] = wall_color[1, :]
        wall_color[-1, :] = wall_color[-2, :]
        wall_color[:, 0] = wall_color[:, 1]
        wall_color[:, -1] = wall_color[:, -2]

        floor = _hsv1(rng.uniform(), rng.uniform(0.1, 0.3), rng.uniform(0.16, 0.26))
        ceil = _hsv1(rng.uniform(), rng.uniform(0.05, 0.2), rng.uniform(0.5, 0.68))
        return GridScene(seed, size, cell_size, occ, wall_color, stripe, floor, ceil)
    raise RuntimeError(f"scene generation failed to produce a connected layout for seed {seed}")


# -- rendering -----------------------------------------------------------------

_STRIPE_FREQ = (2.0, 3.0, 4.0, 5.0)
_WALL_HEIGHT = 1.0  # meters; camera at mid-height


def render(scene: GridScene, pose: Pose, resolution: int = 64) -> np.ndarray:
    """First-person RGB frame (resolution x resolution x 3, float in [0,1])."""
    if not scene.free_at(pose.x, pose.y):
        raise ValueError(f"render: pose ({pose.x:.3f}, {pose.y:.3f}) is inside a wall")
    w = h = resolution
    px = pose.x / scene.cell_size
    py = pose.y / scene.cell_size
    dirx, diry = np.cos(pose.theta), np.sin(pose.theta)
    # camera plane spans the viewer's left at screen x = 0
    planex, planey = -diry, dirx
    cam = 1.0 - 2.0 * (np.arange(w) + 0.5) / w
    rayx = dirx + planex * cam
    rayy = diry + planey * cam

    with np.errstate(divide="ignore"):
        ddx = np.abs(1.0 / rayx)
        ddy = np.abs(1.0 / rayy)
    stepx = np.where(rayx >= 0, 1, -1)
    stepy = np.where(rayy >= 0, 1, -1)
    mapx = np.full(w, int(px), dtype=np.int64)
    mapy = np.full(w, int(py), dtype=np.int64)
    sdx = np.where(rayx >= 0, (mapx + 1 - px), (px - mapx)) * ddx
    sdy = np.where(rayy >= 0, (mapy + 1 - py), (py - mapy)) * ddy

    hit_t = np.zeros(w)
    hit_side = np.zeros(w, dtype=np.int8)
    active = np.ones(w, dtype=bool)
    occ = scene.occupancy
    for _ in range(4 * scene.size):
        if not active.any():
            break
        go_x = active & (sdx <= sdy)
        go_y = active & ~go_x
        mapx[go_x] += stepx[go_x]
        mapy[go_y] += stepy[go_y]
        t_now = np.where(go_x, sdx, sdy)
        sdx[go_x] += ddx[go_x]
        sdy[go_y] += ddy[go_y]
        cy = np.clip(mapy, 0, scene.size - 1)
        cx = np.clip(mapx, 0, scene.size - 1)
        struck = active & occ[cy, cx]
        hit_t[struck] = t_now[struck]
        hit_side[struck] = np.where(go_x[struck], 0, 1)
        active &= ~struck

    dist_m = np.maximum(hit_t * scene.cell_size, 1e-6)
    hx = px + hit_t * rayx
    hy = py + hit_t * rayy
    wall_u = np.where(hit_side == 0, hy - np.floor(hy), hx - np.floor(hx))

    cy = np.clip(mapy, 0, scene.size - 1)
    cx = np.clip(mapx, 0, scene.size - 1)
    base = scene.wall_color[cy, cx]
    freq = np.take(_STRIPE_FREQ, scene.stripe_id[cy, cx])
    phase = 0.13 * scene.stripe_id[cy, cx]
    stripes = np.where(((wall_u * freq + phase) % 1.0) < 0.5, 1.16, 0.84)
    side_shade = np.where(hit_side == 0, 1.0, 0.86)
    dist_shade = np.clip(1.0 / (1.0 + 0.35 * dist_m), 0.22, 1.0)
    col = np.clip(base * (stripes * side_shade * dist_shade)[:, None], 0.0, 1.0)

    focal = w / 2.0  # 90 degree FOV
    span = focal * _WALL_HEIGHT / dist_m
    top = np.clip(np.round(h / 2.0 - span / 2.0).astype(int), 0, h)
    bot = np.clip(np.round(h / 2.0 + span / 2.0).astype(int), 0, h)

    img = np.empty((h, w, 3))
    img[:, :] = scene.ceil_color
    for j in range(w):
        img[bot[j] :, j] = scene.floor_color
        img[top[j] : bot[j], j] = col[j]
    return img


# -- motion --------------------------------------------------------------------

def collides(scene: GridScene, x: float, y: float, radius: float = AGENT_RADIUS) -> bool:
    """Disc-vs-occupied-cells overlap test (scene boundary counts as solid)."""
    cs = scene.cell_size
    if x < radius or y < radius or x > scene.extent - radius or y > scene.extent - radius:
        return True
    i0 = max(0, int((y - radius) / cs))
    i1 = min(scene.size - 1, int((y + radius) / cs))
    j0 = max(0, int((x - radius) / cs))
    j1 = min(scene.size - 1, int((x + radius) / cs))
    r2 = radius * radius
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            if not scene.occupancy[i, j]:
                continue
            nx = min(max(x, j * cs), (j + 1) * cs)
            ny = min(max(y, i * cs), (i + 1) * cs)
            if (x - nx) ** 2 + (y - ny) ** 2 < r2:
                return True
    return False


def step(scene: GridScene, pose: Pose, action: int):
    """Apply one action. Returns (new_pose, collided, meters_moved)."""
    if action == STOP:
        return Pose(pose.x, pose.y, pose.theta), False, 0.0
    if action in (LEFT, RIGHT):
        tick = int(round(pose.theta / HEADING_STEP))
        tick = (tick + (TURN_TICKS if action == LEFT else -TURN_TICKS)) % HEADING_TICKS
        return Pose(pose.x, pose.y, tick * HEADING_STEP), False, 0.0
    if action != FORWARD:
        raise ValueError(f"unknown action {action}")

    dx = FORWARD_STEP * np.cos(pose.theta)
    dy = FORWARD_STEP * np.sin(pose.theta)
    # sample the sweep, then bisect to the contact point; t_lo is always free
    ts = np.linspace(0.0, 1.0, 9)[1:]
    t_lo, t_hi = 0.0, None
    for t in ts:
        if collides(scene, pose.x + t * dx, pose.y + t * dy):
            t_hi = t
            break
        t_lo = t
    if t_hi is None:
        return Pose(pose.x + dx, pose.y + dy, pose.theta), False, FORWARD_STEP
    for _ in range(28):
        tm = 0.5 * (t_lo + t_hi)
        if collides(scene, pose.x + tm * dx, pose.y + tm * dy):
            t_hi = tm
        else:
            t_lo = tm
    return Pose(pose.x + t_lo * dx, pose.y + t_lo * dy, pose.theta), True, FORWARD_STEP * t_lo


# -- geodesics and the shortest-path oracle -------------------------------------

_SQRT2 = float(np.sqrt(2.0))


def _neighbors(occ, i, j):
    """8-connected moves; diagonals need both orthogonal neighbors free."""
    n = occ.shape[0]
    for di, dj, cost in ((-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
                         (-1, -1, _SQRT2), (-1, 1, _SQRT2), (1, -1, _SQRT2), (1, 1, _SQRT2)):
        ii, jj = i + di, j + dj
        if not (0 <= ii < n and 0 <= jj < n) or occ[ii, jj]:
            continue
        if di and dj and (occ[i + di, j] or occ[i, j + dj]):
            continue
        yield ii, jj, cost


def distance_field(scene: GridScene, goal_cell) -> np.ndarray:
    """Dijkstra distances (in cells) from every free cell to ``goal_cell``; cached."""
    key = tuple(goal_cell)
    if key in scene._dist_fields:
        return scene._dist_fields[key]
    gi, gj = key
    if scene.occupancy[gi, gj]:
        raise ValueError(f"goal cell {key} is occupied")
    dist = np.full((scene.size, scene.size), np.inf)
    dist[gi, gj] = 0.0
    pq = [(0.0, gi, gj)]
    occ = scene.occupancy
    while pq:
        d, i, j = heapq.heappop(pq)
        if d > dist[i, j]:
            continue
        for ii, jj, c in _neighbors(occ, i, j):
            nd = d + c
            if nd < dist[ii, jj]:
                dist[ii, jj] = nd
                heapq.heappush(pq, (nd, ii, jj))
    scene._dist_fields[key] = dist
    return dist


def geodesic_distance(scene: GridScene, a, b) -> float:
    """Shortest-path meters between free points a and b (grid graph + endpoint legs)."""
    ax, ay = a
    bx, by = b
    if not scene.free_at(ax, ay) or not scene.free_at(bx, by):
        raise ValueError("geodesic endpoints must be in free space")
    ca = scene.cell_of(ax, ay)
    cb = scene.cell_of(bx, by)
    if ca == cb:
        return float(np.hypot(bx - ax, by - ay))
    dist = distance_field(scene, cb)
    if not np.isfinite(dist[ca]):
        raise ValueError(f"no path between {a} and {b}")
    cax, cay = scene.cell_center(*ca)
    cbx, cby = scene.cell_center(*cb)
    return float(
        np.hypot(cax - ax, cay - ay)
        + dist[ca] * scene.cell_size
        + np.hypot(bx - cbx, by - cby)
    )


_BEARING_TOL = np.deg2rad(15.0)
_LOOKAHEAD = 1.2


def _line_clear(scene: GridScene, x0, y0, x1, y1, radius) -> bool:
    """Swept-disc check: samples every 4 cm along the segment."""
    length = np.hypot(x1 - x0, y1 - y0)
    n = max(2, int(length / 0.04) + 1)
    for t in np.linspace(0.0, 1.0, n):
        if collides(scene, x0 + t * (x1 - x0), y0 + t * (y1 - y0), radius):
            return False
    return True


def oracle_action(scene: GridScene, pose: Pose, goal) -> int:
    """Shortest-path expert: stop in the success radius, else steer along the geodesic.

    The steering target is the farthest geodesic-path point within the
    lookahead that the agent disc can reach on a straight line; forward is
    only issued when the actual heading ray is clear, otherwise the agent
    rotates toward the target (ties and blocked-with-aligned-heading: left).
    """
    gx, gy = goal
    if np.hypot(gx - pose.x, gy - pose.y) <= SUCCESS_RADIUS:
        return STOP
    gcell = scene.cell_of(gx, gy)
    dist = distance_field(scene, gcell)
    ci, cj = scene.cell_of(pose.x, pose.y)
    if not np.isfinite(dist[ci, cj]):
        raise ValueError("oracle: goal unreachable from pose")

    # descent path from the current cell, annotated with straight-line reach
    points = []
    i, j = ci, cj
    while dist[i, j] > 0 and len(points) < 16:
        best = min(_neighbors(scene.occupancy, i, j), key=lambda n: (dist[n[0], n[1]] + n[2], n[0], n[1]))
        i, j = best[0], best[1]
        points.append(scene.cell_center(i, j))
    points.append((gx, gy))

    wx, wy = points[0]
    for px, py in reversed(points):
        if np.hypot(px - pose.x, py - pose.y) <= _LOOKAHEAD and _line_clear(scene, pose.x, pose.y, px, py, AGENT_RADIUS + 0.005):
            wx, wy = px, py
            break

    bearing = np.arctan2(wy - pose.y, wx - pose.x)
    delta = wrap_angle(bearing - pose.theta)

    def ray_clear(theta):
        hx = pose.x + (FORWARD_STEP + 0.02) * np.cos(theta)
        hy = pose.y + (FORWARD_STEP + 0.02) * np.sin(theta)
        return _line_clear(scene, pose.x, pose.y, hx, hy, AGENT_RADIUS)

    if abs(delta) <= _BEARING_TOL and ray_clear(pose.theta):
        return FORWARD

    # blocked or misaligned: head for the clear 10-degree heading closest to
    # the bearing (fewest turns breaks ties, then left) — quantized headings
    # plus slide-free contact make the naive turn-toward rule oscillate in
    # corridor pinches
    tick0 = int(round(pose.theta / HEADING_STEP)) % HEADING_TICKS
    best = None
    for k in range(36):
        h = ((tick0 + (k - 18) * TURN_TICKS) % HEADING_TICKS) * HEADING_STEP
        if not ray_clear(h):
            continue
        turns = min(abs(k - 18), 36 - abs(k - 18))
        key = (abs(wrap_angle(bearing - h)), turns, 0 if k >= 18 else 1)
        if best is None or key < best[0]:
            best = (key, k - 18)
    if best is None:
        return LEFT
    offset = best[1]  # signed turns to the chosen heading; -18 means either way
    if offset == 0:
        return FORWARD
    return LEFT if offset > 0 or offset == -18 else RIGHT


def gps_compass(pose: Pose, goal):
    """Egocentric goal vector: (range meters, relative bearing in (-pi, pi])."""
    gx, gy = goal
    r = float(np.hypot(gx - pose.x, gy - pose.y))
    phi = wrap_angle(np.arctan2(gy - pose.y, gx - pose.x) - pose.theta) if r > 0 else 0.0
    return r, float(phi)
