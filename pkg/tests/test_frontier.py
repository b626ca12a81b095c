import numpy as np
import pytest
from scipy import ndimage

from mrnav.core import GridMap, GridSpec
from mrnav.frontier import FrontierParams, extract_frontiers, representative_cell
from oracles import frontier_oracle


def make_map(explored, obstacle=None):
    explored = np.asarray(explored, dtype=bool)
    n = explored.shape[0]
    spec = GridSpec(n * 0.05, 0.05)
    g = GridMap.empty(spec)
    g.explored[:] = explored
    if obstacle is not None:
        g.obstacle[:] = np.asarray(obstacle, dtype=bool) & explored
    return g


def random_partial_map(rng, n):
    """Union of random explored disks with rectangular obstacles inside."""
    yy, xx = np.mgrid[:n, :n]
    explored = np.zeros((n, n), dtype=bool)
    for _ in range(rng.integers(1, 5)):
        cy, cx = rng.integers(0, n, 2)
        rad = rng.integers(4, n // 2)
        explored |= (yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad
    obstacle = np.zeros_like(explored)
    for _ in range(rng.integers(0, 6)):
        r, c = rng.integers(0, n, 2)
        h, w = rng.integers(1, 10, 2)
        obstacle[r : r + h, c : c + w] = True
    if rng.random() < 0.3:
        obstacle |= rng.random((n, n)) < 0.02  # speckle
    return explored, obstacle & explored


def test_fully_explored_map_has_no_frontiers():
    assert extract_frontiers(make_map(np.ones((20, 20)))) == []


def test_empty_map_has_no_frontiers():
    assert extract_frontiers(make_map(np.zeros((20, 20)))) == []


def test_half_explored_gives_single_vertical_cluster():
    e = np.zeros((20, 20), dtype=bool)
    e[:, :10] = True
    fs = extract_frontiers(make_map(e))
    assert len(fs) == 1
    f = fs[0]
    assert f.id == 0 and f.size == 20
    assert set(map(tuple, f.cells)) == {(r, 9) for r in range(20)}
    assert tuple(f.representative) in set(map(tuple, f.cells))


def test_wall_on_boundary_masks_frontier():
    e = np.zeros((20, 20), dtype=bool)
    e[:, :10] = True
    o = np.zeros_like(e)
    o[5:15, 9] = True
    fs = extract_frontiers(make_map(e, o))
    cells = {tuple(c) for f in fs for c in f.cells}
    assert all(not (2 <= r <= 17) for r, _ in cells)
    want = frontier_oracle(e, o, 3, 10)
    assert [sorted(map(tuple, f.cells.tolist())) for f in fs] == want


def test_small_clusters_dropped():
    e = np.zeros((20, 20), dtype=bool)
    e[:5, :2] = True  # 10-cell region, frontier shorter than 10
    assert extract_frontiers(make_map(e)) == []


@pytest.mark.parametrize("seed", range(20))
def test_matches_definition_on_random_maps(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(16, 65))
    e, o = random_partial_map(rng, n)
    fs = extract_frontiers(make_map(e, o))
    want = frontier_oracle(e, o, 3, 10)
    assert [sorted(map(tuple, f.cells.tolist())) for f in fs] == want
    assert [f.id for f in fs] == list(range(len(fs)))


def test_cluster_invariants():
    rng = np.random.default_rng(99)
    for _ in range(10):
        e, o = random_partial_map(rng, 48)
        g = make_map(e, o)
        fs = extract_frontiers(g)
        seen = set()
        unknown = ~g.explored
        near_unknown = ndimage.binary_dilation(unknown, np.ones((3, 3), dtype=bool))
        for f in fs:
            cells = set(map(tuple, f.cells.tolist()))
            assert not cells & seen
            seen |= cells
            m = np.zeros_like(e)
            m[f.cells[:, 0], f.cells[:, 1]] = True
            assert ndimage.label(m, np.ones((3, 3)))[1] == 1
            assert g.explored[m].all() and not g.obstacle[m].any() and near_unknown[m].all()
            assert f.size >= 10
            assert tuple(f.representative) in cells
        sizes = [f.size for f in fs]
        assert sizes == sorted(sizes, reverse=True)


def test_deterministic():
    rng = np.random.default_rng(5)
    e, o = random_partial_map(rng, 64)
    a, b = extract_frontiers(make_map(e, o)), extract_frontiers(make_map(e, o))
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x.id == y.id and np.array_equal(x.cells, y.cells) and x.representative == y.representative


def test_params_change_output():
    e = np.zeros((30, 30), dtype=bool)
    e[:, :15] = True
    assert len(extract_frontiers(make_map(e), FrontierParams(min_size=31))) == 0
    assert len(extract_frontiers(make_map(e), FrontierParams(min_size=30))) == 1


def test_representative_single_and_line():
    assert representative_cell([(5, 5)]) == (5, 5)
    assert representative_cell([(3, c) for c in range(5)]) == (3, 2)


def test_representative_l_shape_brute_force():
    cells = [(0, 0), (1, 0), (2, 0), (3, 0), (3, 1), (3, 2), (3, 3)]
    cy = sum(r for r, _ in cells) / len(cells)
    cx = sum(c for _, c in cells) / len(cells)
    best = min(cells, key=lambda rc: ((rc[0] - cy) ** 2 + (rc[1] - cx) ** 2, rc))
    assert representative_cell(cells) == best


def test_representative_tie_goes_to_smallest_cell():
    # two cells equidistant from the centroid
    assert representative_cell([(0, 0), (0, 1)]) == (0, 0)


def test_representative_empty():
    with pytest.raises(ValueError):
        representative_cell([])
