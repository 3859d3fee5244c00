"""Simulator: headings, rendering, collision, shortest paths, oracle policy."""

import numpy as np
import pytest
import scipy.ndimage
import scipy.sparse
import scipy.sparse.csgraph

from ttanav import sim
from ttanav.sim import (
    AGENT_RADIUS,
    CELL_SIZE,
    FORWARD,
    FORWARD_STEP,
    LEFT,
    RIGHT,
    STOP,
    SUCCESS_RADIUS,
    GridScene,
    Pose,
    collides,
    distance_field,
    generate_scene,
    geodesic_distance,
    gps_compass,
    oracle_action,
    render,
    snap_heading,
    step,
    wrap_angle,
)


def corridor_scene(length=12, width=3) -> GridScene:
    """Hand-built straight east-west corridor for geometry checks."""
    size = max(length, width) + 2
    occ = np.ones((size, size), dtype=bool)
    occ[1 : 1 + width, 1 : 1 + length] = False
    color = np.broadcast_to(np.array([0.6, 0.4, 0.3]), (size, size, 3)).copy()
    return GridScene(seed=-1, size=size, cell_size=CELL_SIZE, occupancy=occ,
                     wall_color=color, stripe_id=np.zeros((size, size), dtype=int),
                     floor_color=np.array([0.24, 0.22, 0.2]),
                     ceil_color=np.array([0.85, 0.85, 0.88]))


# -- headings ----------------------------------------------------------------------

def test_heading_snaps_to_tick_grid():
    a = snap_heading(0.1234)
    assert a == snap_heading(a)
    # 3600 ticks, so snapped values are exact multiples of 2*pi/3600
    k = a / (2 * np.pi / 3600)
    assert abs(k - round(k)) < 1e-9


def test_thirty_six_left_turns_close_the_circle(scene):
    free = np.argwhere(~scene.occupancy)
    x, y = scene.cell_center(*free[len(free) // 2])
    pose = Pose(x, y, 0.7)
    start = pose
    for _ in range(36):
        pose, collided, moved = step(scene, pose, LEFT)
        assert not collided and moved == 0.0
    assert pose.theta == start.theta and pose.x == start.x and pose.y == start.y


def test_render_bit_identical_after_full_turn(scene):
    free = np.argwhere(~scene.occupancy)
    x, y = scene.cell_center(*free[len(free) // 3])
    pose = Pose(x, y, 1.3)
    before = render(scene, pose, 64)
    p = pose
    for _ in range(36):
        p, _, _ = step(scene, p, RIGHT)
    after = render(scene, p, 64)
    assert np.array_equal(before, after)


def test_wrap_angle_range():
    for a in np.linspace(-20, 20, 101):
        w = wrap_angle(a)
        assert -np.pi < w <= np.pi
        assert abs((a - w) % (2 * np.pi)) < 1e-9 or abs((a - w) % (2 * np.pi) - 2 * np.pi) < 1e-9


# -- scene generation ---------------------------------------------------------------

def test_scene_deterministic():
    a = generate_scene(1234)
    b = generate_scene(1234)
    assert np.array_equal(a.occupancy, b.occupancy)
    assert np.array_equal(a.wall_color, b.wall_color)
    assert np.array_equal(a.stripe_id, b.stripe_id)


def test_scene_seeds_differ():
    assert not np.array_equal(generate_scene(1).occupancy, generate_scene(2).occupancy)


@pytest.mark.parametrize("seed", [0, 3, 17, 100])
def test_scene_connected_and_walled(seed):
    sc = generate_scene(seed)
    # boundary ring is solid wall
    assert sc.occupancy[0].all() and sc.occupancy[-1].all()
    assert sc.occupancy[:, 0].all() and sc.occupancy[:, -1].all()
    # exactly one connected free component
    _, n = scipy.ndimage.label(~sc.occupancy)
    assert n == 1
    assert (~sc.occupancy).mean() >= 0.2


# -- rendering ----------------------------------------------------------------------

def test_render_shape_range_and_determinism(scene):
    free = np.argwhere(~scene.occupancy)
    x, y = scene.cell_center(*free[0])
    img = render(scene, Pose(x, y, 0.0), 64)
    assert img.shape == (64, 64, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0
    assert np.array_equal(img, render(scene, Pose(x, y, 0.0), 64))


def test_nearer_walls_project_taller():
    sc = corridor_scene()
    y = (1 + 1.5) * CELL_SIZE  # corridor middle row
    far = render(sc, Pose(1.5 * CELL_SIZE, y, 0.0), 64)
    near = render(sc, Pose((1 + 9) * CELL_SIZE, y, 0.0), 64)

    def wall_rows(img):
        col = img[:, 32]  # center column; floor/ceiling rows are exact constants
        is_bg = np.all(col == sc.floor_color, axis=1) | np.all(col == sc.ceil_color, axis=1)
        return int((~is_bg).sum())

    assert wall_rows(near) > wall_rows(far)


def test_render_sees_heading_direction():
    sc = corridor_scene()
    y = (1 + 1.5) * CELL_SIZE
    x = (1 + 6) * CELL_SIZE
    east = render(sc, Pose(x, y, 0.0), 64)
    west = render(sc, Pose(x, y, np.pi), 64)
    assert not np.array_equal(east, west)


# -- collision and stepping -----------------------------------------------------------

def test_collides_hand_cases():
    sc = corridor_scene()
    x, y = sc.cell_center(2, 6)
    assert not collides(sc, x, y)
    # wall face: disc centered closer than radius to an occupied cell
    wall_y = 1 * CELL_SIZE  # boundary between wall row 0 and free row 1
    assert collides(sc, x, wall_y + AGENT_RADIUS - 0.01)
    assert not collides(sc, x, wall_y + AGENT_RADIUS + 0.01)


def test_step_forward_advances_exactly():
    sc = corridor_scene()
    y = (1 + 1.5) * CELL_SIZE
    pose = Pose((1 + 2) * CELL_SIZE, y, 0.0)
    new, collided, moved = step(sc, pose, FORWARD)
    assert not collided
    assert moved == pytest.approx(FORWARD_STEP)
    assert new.x == pytest.approx(pose.x + FORWARD_STEP)
    assert new.y == pose.y


def test_step_into_wall_never_penetrates():
    sc = corridor_scene()
    y = (1 + 1.5) * CELL_SIZE
    pose = Pose((1 + 11.5) * CELL_SIZE, y, 0.0)  # nose against the east wall
    new, collided, moved = step(sc, pose, FORWARD)
    assert collided
    assert not collides(sc, new.x, new.y)


def test_random_walk_never_overlaps_walls(scene):
    rng = np.random.default_rng(5)
    free = np.argwhere(~scene.occupancy)
    x, y = scene.cell_center(*free[len(free) // 2])
    pose = Pose(x, y, 0.0)
    for _ in range(300):
        action = int(rng.choice([FORWARD, FORWARD, FORWARD, LEFT, RIGHT]))
        pose, _, _ = step(scene, pose, action)
        assert not collides(scene, pose.x, pose.y)


def test_stop_leaves_pose_unchanged(scene):
    free = np.argwhere(~scene.occupancy)
    x, y = scene.cell_center(*free[0])
    pose = Pose(x, y, 0.4)
    new, collided, moved = step(scene, pose, STOP)
    assert (new.x, new.y, new.theta) == (pose.x, pose.y, pose.theta)
    assert moved == 0.0 and not collided


# -- shortest paths -------------------------------------------------------------------

def _csgraph_field(occ, goal):
    """Independent 8-connected Dijkstra via scipy.sparse.csgraph.

    Diagonal moves cost sqrt(2) and require both orthogonal neighbors free.
    """
    n = occ.shape[0]
    idx = lambda i, j: i * n + j
    rows, cols, w = [], [], []
    for i in range(n):
        for j in range(n):
            if occ[i, j]:
                continue
            for di, dj in [(-1, 0), (1, 0), (0, -1), (0, 1),
                           (-1, -1), (-1, 1), (1, -1), (1, 1)]:
                a, b = i + di, j + dj
                if not (0 <= a < n and 0 <= b < n) or occ[a, b]:
                    continue
                if di and dj and (occ[i + di, j] or occ[i, j + dj]):
                    continue
                rows.append(idx(i, j))
                cols.append(idx(a, b))
                w.append(np.hypot(di, dj))
    g = scipy.sparse.csr_matrix((w, (rows, cols)), shape=(n * n, n * n))
    d = scipy.sparse.csgraph.dijkstra(g, indices=idx(*goal))
    return d.reshape(n, n)


@pytest.mark.parametrize("seed", [2, 9])
def test_distance_field_matches_csgraph(seed):
    sc = generate_scene(seed)
    free = np.argwhere(~sc.occupancy)
    goal = tuple(free[len(free) // 4])
    mine = distance_field(sc, goal)
    ref = _csgraph_field(sc.occupancy, goal)
    free_mask = ~sc.occupancy
    np.testing.assert_allclose(mine[free_mask], ref[free_mask], atol=1e-9)


def test_distance_field_cached(scene):
    free = np.argwhere(~scene.occupancy)
    goal = tuple(free[0])
    assert distance_field(scene, goal) is distance_field(scene, goal)


def test_geodesic_same_cell_is_euclid(scene):
    free = np.argwhere(~scene.occupancy)
    x, y = scene.cell_center(*free[5])
    d = geodesic_distance(scene, (x, y), (x + 0.05, y + 0.02))
    assert d == pytest.approx(np.hypot(0.05, 0.02))


def test_geodesic_at_least_euclidean(scene):
    rng = np.random.default_rng(0)
    free = np.argwhere(~scene.occupancy)
    for _ in range(25):
        a = scene.cell_center(*free[rng.integers(len(free))])
        b = scene.cell_center(*free[rng.integers(len(free))])
        d = geodesic_distance(scene, a, b)
        assert d >= np.hypot(b[0] - a[0], b[1] - a[1]) - 1e-6


def test_geodesic_unreachable_raises():
    sc = corridor_scene()
    occ = sc.occupancy.copy()
    occ[1:4, 6] = True  # slam a wall across the corridor
    cut = GridScene(seed=-2, size=sc.size, cell_size=sc.cell_size, occupancy=occ,
                    wall_color=sc.wall_color, stripe_id=sc.stripe_id,
                    floor_color=sc.floor_color, ceil_color=sc.ceil_color)
    a = cut.cell_center(2, 2)
    b = cut.cell_center(2, 10)
    with pytest.raises(ValueError):
        geodesic_distance(cut, a, b)


# -- goal sensor ----------------------------------------------------------------------

def test_gps_compass_ahead_left_right():
    pose = Pose(1.0, 1.0, 0.0)
    r, phi = gps_compass(pose, (3.0, 1.0))
    assert (r, phi) == (pytest.approx(2.0), pytest.approx(0.0))
    # counterclockwise-positive bearings: +y is to the left at heading 0
    r, phi = gps_compass(pose, (1.0, 4.0))
    assert r == pytest.approx(3.0)
    assert phi == pytest.approx(np.pi / 2)
    r, phi = gps_compass(pose, (1.0, -2.0))
    assert phi == pytest.approx(-np.pi / 2)


def test_gps_compass_rotates_with_heading():
    goal = (2.0, 2.0)
    p0 = Pose(1.0, 1.0, 0.0)
    p1 = Pose(1.0, 1.0, snap_heading(np.pi / 4))
    r0, phi0 = gps_compass(p0, goal)
    r1, phi1 = gps_compass(p1, goal)
    assert r0 == r1
    assert wrap_angle(phi0 - phi1 - (p1.theta - p0.theta)) == pytest.approx(0.0, abs=1e-9)


# -- oracle ---------------------------------------------------------------------------

@pytest.mark.parametrize("scene_seed", [7, 21])
def test_oracle_full_success_near_shortest(scene_seed):
    from ttanav.episodes import EpisodeSpec, OracleAgent, make_episodes, run_episode

    sc = generate_scene(scene_seed)
    episodes = make_episodes([sc], 15, seed=scene_seed + 1,
                             min_geodesic=2.0, max_geodesic=8.0)
    for ep in episodes:
        res = run_episode(sc, ep, OracleAgent(sc, ep))
        assert res.success == 1, ep
        assert res.path_length <= 1.3 * res.geodesic, ep
        assert res.steps <= 500


def test_oracle_stops_inside_success_radius(scene):
    free = np.argwhere(~scene.occupancy)
    x, y = scene.cell_center(*free[8])
    pose = Pose(x, y, 0.0)
    assert oracle_action(scene, pose, (x + 0.1, y)) == STOP
    assert oracle_action(scene, pose, (x + SUCCESS_RADIUS + 0.3, y)) != STOP
