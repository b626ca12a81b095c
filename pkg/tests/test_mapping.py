import itertools

import numpy as np
import pytest
from sklearn.cluster import DBSCAN

from mrnav.core import CATEGORIES, ExtentError, GridSpec, Pose, SemanticPointCloud, world_to_grid_array
from mrnav.mapping import (
    FrameMismatchError,
    LocalMap,
    OwnershipError,
    dbscan_filter,
    integrate_frame,
    merge_global,
    project_2d,
    read_cloud,
    write_cloud,
)
from mrnav.sim import Scene, SensorFrame, sense
from oracles import dbscan_oracle

RES = 0.05
SPEC = GridSpec(2.0, RES, (0.4, 0.4))  # 40x40 map; scene cell (r, c) -> map cell (r + 12, c + 12)


def frame(rid, cells, obstacle=None, category=None):
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    n = len(cells)
    obstacle = np.zeros(n, dtype=bool) if obstacle is None else np.asarray(obstacle, dtype=bool)
    category = np.full(n, -1, dtype=np.int16) if category is None else np.asarray(category, dtype=np.int16)
    return SensorFrame(rid, Pose(0.0, 0.0), cells[:, 0], cells[:, 1], obstacle, category, RES)


def random_scene(rng, h=16, w=16):
    occ = rng.random((h, w)) < 0.2
    return Scene("r", RES, occ)


def test_integrate_three_cells():
    lm = integrate_frame(LocalMap(0, SPEC, CATEGORIES), frame(0, [(1, 1), (1, 2), (2, 2)]))
    assert len(lm.cloud()) == 3
    assert lm.observations.sum() == 3


def test_identical_frames_collapse():
    f = frame(0, [(1, 1), (1, 2)], [False, True])
    lm = LocalMap(0, SPEC, CATEGORIES)
    integrate_frame(lm, f)
    once = lm.cloud()
    integrate_frame(lm, f)
    twice = lm.cloud()
    assert np.array_equal(once.xyz, twice.xyz)
    assert lm.observations.sum() == 4


def test_labeled_point_carries_category():
    lm = integrate_frame(LocalMap(0, SPEC, CATEGORIES), frame(0, [(3, 3)], category=[3]))
    c = lm.cloud()
    assert c.category.tolist() == [3]
    assert c.robot.tolist() == [0]


def test_obstacle_points_at_height_one():
    lm = integrate_frame(LocalMap(0, SPEC, CATEGORIES), frame(0, [(3, 3), (4, 4)], [True, False]))
    c = lm.cloud()
    assert sorted(c.xyz[:, 2].tolist()) == [0.0, 1.0]


def test_ownership_error():
    with pytest.raises(OwnershipError):
        integrate_frame(LocalMap(0, SPEC, CATEGORIES), frame(1, [(1, 1)]))


def test_merge_disjoint_and_empty():
    a = integrate_frame(LocalMap(0, SPEC, CATEGORIES), frame(0, [(1, 1)]))
    b = integrate_frame(LocalMap(1, SPEC, CATEGORIES), frame(1, [(5, 5)]))
    m = merge_global([a, b])
    assert len(m) == 2
    assert sorted(m.robot.tolist()) == [0, 1]
    e = merge_global([LocalMap(0, SPEC, CATEGORIES), LocalMap(1, SPEC, CATEGORIES)])
    assert len(e) == 0


def test_merge_mismatched_spec():
    with pytest.raises(FrameMismatchError):
        merge_global([LocalMap(0, SPEC, CATEGORIES), LocalMap(1, GridSpec(), CATEGORIES)])


def test_merge_conflict_majority_then_lowest_robot():
    a = LocalMap(0, SPEC, CATEGORIES)
    b = LocalMap(1, SPEC, CATEGORIES)
    integrate_frame(a, frame(0, [(2, 2)], category=[1]))
    integrate_frame(b, frame(1, [(2, 2)], category=[4]))
    m = merge_global([b, a])
    assert m.category.tolist() == [1] and m.robot.tolist() == [0]
    integrate_frame(b, frame(1, [(2, 2)], category=[4]))
    m = merge_global([a, b])
    assert m.category.tolist() == [4] and m.robot.tolist() == [1]


def test_merge_overlap_matches_set_union_oracle():
    rng = np.random.default_rng(4)
    s = random_scene(rng)
    free = np.argwhere(~s.occupancy)
    locals_, seen = [], set()
    for rid in range(2):
        lm = LocalMap(rid, SPEC, CATEGORIES)
        for _ in range(4):
            r, c = free[rng.integers(len(free))]
            f = sense(s, Pose((c + 0.5) * RES, (r + 0.5) * RES, rng.uniform(0, 6.28)), robot_id=rid)
            integrate_frame(lm, f)
            seen |= {(int(r), int(c), bool(o)) for r, c, o in zip(f.rows, f.cols, f.obstacle)}
        locals_.append(lm)
    m = merge_global(locals_)
    rows, cols = world_to_grid_array(m.xyz[:, 1], m.xyz[:, 0], SPEC)
    got = {(int(r) - 12, int(c) - 12, bool(z > 0.5)) for r, c, z in zip(rows, cols, m.xyz[:, 2])}
    assert got == seen
    assert len(got) == len(m)  # each cell/band appears once


def test_merge_is_order_independent():
    rng = np.random.default_rng(8)
    locals_ = []
    for rid in range(3):
        lm = LocalMap(rid, SPEC, CATEGORIES)
        for _ in range(3):
            cells = rng.integers(0, 16, (20, 2))
            cells = np.unique(cells, axis=0)
            integrate_frame(lm, frame(rid, cells, rng.random(len(cells)) < 0.3, rng.integers(-1, 6, len(cells))))
        locals_.append(lm)
    ref = merge_global(locals_)
    for perm in itertools.permutations(locals_):
        m = merge_global(list(perm))
        assert np.array_equal(m.xyz, ref.xyz)
        assert np.array_equal(m.category, ref.category)
        assert np.array_equal(m.robot, ref.robot)
    # associativity through a pre-merged pair: channels agree
    assert np.array_equal(project_2d(ref, SPEC).explored, project_2d(merge_global(locals_[:2]), SPEC).explored | project_2d(locals_[2].cloud(), SPEC).explored)


def test_integrate_is_monotone():
    rng = np.random.default_rng(1)
    lm = LocalMap(0, SPEC, CATEGORIES)
    prev = lm.explored.copy()
    for _ in range(10):
        integrate_frame(lm, frame(0, np.unique(rng.integers(0, 16, (10, 2)), axis=0)))
        cur = lm.explored
        assert (cur | prev).sum() == cur.sum()
        prev = cur.copy()


# --- dbscan ----------------------------------------------------------------------


def cloud_of(xyz):
    xyz = np.asarray(xyz, dtype=float)
    return SemanticPointCloud(xyz, np.full(len(xyz), -1), np.zeros(len(xyz)))


def test_dbscan_keeps_core_and_border():
    pts = [[0, 0, 0], [0.1, 0, 0], [-0.1, 0, 0], [0, 0.1, 0], [0, -0.1, 0]]
    assert len(dbscan_filter(cloud_of(pts), eps=0.1, min_pts=4)) == 5


def test_dbscan_removes_isolated_point():
    pts = [[0, 0, 0], [0.05, 0, 0], [0.1, 0, 0], [0.05, 0.05, 0], [1.5, 1.5, 0]]
    out = dbscan_filter(cloud_of(pts), eps=0.15, min_pts=4)
    assert len(out) == 4
    assert out.xyz[:, 0].max() < 1.0


def test_dbscan_empty_and_bad_params():
    assert len(dbscan_filter(cloud_of(np.zeros((0, 3))), 0.15, 4)) == 0
    with pytest.raises(ValueError):
        dbscan_filter(cloud_of([[0, 0, 0]]), 0.0, 4)
    with pytest.raises(ValueError):
        dbscan_filter(cloud_of([[0, 0, 0]]), 0.1, 0)


def test_dbscan_never_deletes_2x2_structures():
    pts = [[x, y, 1.0] for x in (0.0, 0.05) for y in (0.0, 0.05)] + [[2.0, 2.0, 0.0]]
    out = dbscan_filter(cloud_of(pts))
    assert len(out) == 4


@pytest.mark.parametrize("seed", range(5))
def test_dbscan_matches_oracles(seed):
    rng = np.random.default_rng(seed)
    xyz = np.round(rng.random((150, 3)) * [1.0, 1.0, 0.0] / 0.05) * 0.05
    xyz = np.unique(xyz, axis=0)
    keep = dbscan_oracle(xyz, 0.1, 4)
    out = dbscan_filter(cloud_of(xyz), 0.1, 4, by_category=False)
    assert np.array_equal(out.xyz, xyz[keep])
    sk = DBSCAN(eps=0.1 + 1e-9, min_samples=4).fit(xyz).labels_ != -1
    assert np.array_equal(keep, sk)


def test_dbscan_subset_and_idempotent():
    rng = np.random.default_rng(3)
    xyz = rng.random((200, 3)) * [2, 2, 1]
    c = SemanticPointCloud(xyz, rng.integers(-1, 6, 200), np.zeros(200))
    once = dbscan_filter(c, 0.2, 3)
    twice = dbscan_filter(once, 0.2, 3)
    src = {tuple(p) for p in xyz}
    assert all(tuple(p) in src for p in once.xyz)
    # noise is never within eps of a core point, so cores keep their neighbourhoods
    assert np.array_equal(once.xyz, twice.xyz)


def test_dbscan_by_category_drops_stray_labels():
    floor = [[x * 0.05, y * 0.05, 0.0] for x in range(6) for y in range(6)]
    cat = [-1] * len(floor)
    cat[14] = 2  # one false label inside a dense floor patch
    c = SemanticPointCloud(np.array(floor), cat, np.zeros(len(floor)))
    out = dbscan_filter(c)
    assert 2 not in out.category.tolist()
    assert len(out) == len(floor) - 1


# --- projection ------------------------------------------------------------------


def test_project_floor_only():
    lm = integrate_frame(LocalMap(0, SPEC, CATEGORIES), frame(0, [(1, 1), (2, 2)]))
    g = project_2d(lm.cloud(), SPEC)
    assert g.explored.sum() == 2 and not g.obstacle.any()
    g.validate()


def test_project_single_obstacle_point():
    spec = GridSpec(1.0, 0.05, (0.0, 0.0))
    x = (10 - 10 + 0.5) * 0.05
    c = SemanticPointCloud(np.array([[x, x, 1.0]]), [-1], [0])
    g = project_2d(c, spec)
    assert g.obstacle[10, 10] and g.explored[10, 10]
    assert g.obstacle.sum() == 1


def test_project_extent_error():
    c = SemanticPointCloud(np.array([[50.0, 0.0, 0.0]]), [-1], [0])
    with pytest.raises(ExtentError):
        project_2d(c, SPEC)


def test_project_corridor_sweep_matches_scene_walls():
    occ = np.ones((5, 30), dtype=bool)
    occ[1:4, 1:29] = False
    s = Scene("corridor", RES, occ)
    spec = GridSpec(4.0, RES, (0.4, 0.4))  # scene cell (r, c) -> map cell (r + 32, c + 32)
    lm = LocalMap(0, spec, CATEGORIES)
    seen = np.zeros_like(occ)
    for c in range(2, 28, 3):
        for th in (0.0, 3.14159):
            f = sense(s, Pose((c + 0.5) * RES, 2.5 * RES, th))
            integrate_frame(lm, f)
            seen[f.rows, f.cols] = True
    g = project_2d(lm.cloud(), spec)
    sub = (slice(32, 37), slice(32, 62))
    assert np.array_equal(g.obstacle[sub], occ & seen)
    assert np.array_equal(g.explored[sub], seen)


def test_project_of_merge_is_or_of_projections():
    rng = np.random.default_rng(9)
    s = random_scene(rng)
    free = np.argwhere(~s.occupancy)
    locals_ = []
    for rid in range(3):
        lm = LocalMap(rid, SPEC, CATEGORIES)
        for _ in range(3):
            r, c = free[rng.integers(len(free))]
            integrate_frame(lm, sense(s, Pose((c + 0.5) * RES, (r + 0.5) * RES, rng.uniform(0, 6.28)), robot_id=rid))
        locals_.append(lm)
    merged = project_2d(merge_global(locals_), SPEC)
    parts = [project_2d(lm.cloud(), SPEC) for lm in locals_]
    assert np.array_equal(merged.explored, np.logical_or.reduce([p.explored for p in parts]))
    assert np.array_equal(merged.obstacle, np.logical_or.reduce([p.obstacle for p in parts]))


def test_semantic_layer_highest_point_wins():
    spec = GridSpec(1.0, 0.05, (0.0, 0.0))
    x = 0.025
    c = SemanticPointCloud(np.array([[x, x, 1.0], [x, x, 0.0]]), [4, 2], [0, 0])
    g = project_2d(c, spec)
    assert g.semantic[10, 10] == 4


def test_cloud_text_round_trip(tmp_path):
    c = SemanticPointCloud(np.array([[0.1, 0.2, 0.0], [0.3, 0.4, 1.0]]), [-1, 3], [0, 1])
    p = tmp_path / "cloud.txt"
    write_cloud(c, p)
    assert p.read_text().splitlines()[1] == "0.3000 0.4000 1.0000 bed 1"
    d = read_cloud(p, CATEGORIES)
    assert np.allclose(d.xyz, c.xyz) and d.category.tolist() == [-1, 3] and d.robot.tolist() == [0, 1]
