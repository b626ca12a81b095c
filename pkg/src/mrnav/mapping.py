"""Per-robot point maps, global merge, DBSCAN outlier removal, top-down projection.

Points are voxel-deduplicated: one point per grid cell per height band
(band 0 = floor at z=0, band 1 = obstacle at z=1). A :class:`LocalMap` keeps
per-voxel label vote counts, so merging is a sum of counts followed by a
deterministic vote.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    UNLABELED,
    GridMap,
    GridSpec,
    SemanticPointCloud,
    world_to_grid_array,
)
from .sim import SensorFrame

OBSTACLE_Z = 1.0
FLOOR_Z = 0.0


class OwnershipError(ValueError):
    pass


class FrameMismatchError(ValueError):
    pass


class LocalMap:
    """Map built from one robot's frames.

    ``counts[band, slot, row, col]`` counts observations of a voxel with a
    given label slot (slot 0 = unlabeled, slot k+1 = category k).
    """

    def __init__(self, owner: int, spec: GridSpec, categories: tuple[str, ...]):
        self.owner = owner
        self.spec = spec
        self.categories = tuple(categories)
        self.counts = np.zeros((2, len(self.categories) + 1) + spec.shape, dtype=np.uint16)
        self.frames = 0

    @property
    def observations(self) -> np.ndarray:
        """Per-cell observation counts (both bands)."""
        return self.counts.sum(axis=(0, 1), dtype=np.int64)

    @property
    def explored(self) -> np.ndarray:
        return self.counts.any(axis=(0, 1))

    def cloud(self) -> SemanticPointCloud:
        return merge_global([self])


def integrate_frame(local: LocalMap, frame: SensorFrame) -> LocalMap:
    """Append one point per visible cell (voxel-deduplicated) and count it."""
    if frame.robot_id != local.owner:
        raise OwnershipError(f"frame from robot {frame.robot_id} given to map of robot {local.owner}")
    if len(frame) == 0:
        local.frames += 1
        return local
    x = (frame.cols + 0.5) * frame.resolution
    y = (frame.rows + 0.5) * frame.resolution
    rows, cols = world_to_grid_array(y, x, local.spec)
    band = frame.obstacle.astype(np.int64)
    slot = frame.category.astype(np.int64) + 1
    # frames list each cell once, so plain fancy-index increments are exact
    local.counts[band, slot, rows, cols] += 1
    local.frames += 1
    return local


def frame_cells(frame: SensorFrame, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    x = (frame.cols + 0.5) * frame.resolution
    y = (frame.rows + 0.5) * frame.resolution
    return world_to_grid_array(y, x, spec)


def merge_global(locals_: list[LocalMap]) -> SemanticPointCloud:
    """Union of all local maps in the shared frame.

    Each voxel gets the label with the most votes; ties go to the label first
    seen by the lowest robot id, then to the lowest category index. The
    point's robot id is the lowest robot that voted for the winning label.
    Output is ordered by (band, row, col).
    """
    if not locals_:
        raise ValueError("nothing to merge")
    spec, cats = locals_[0].spec, locals_[0].categories
    for lm in locals_[1:]:
        if lm.spec != spec or lm.categories != cats:
            raise FrameMismatchError("local maps use different grids or category sets")
    total = np.zeros(locals_[0].counts.shape, dtype=np.int64)
    for lm in locals_:
        total += lm.counts
    seen = total.any(axis=1)  # (band, H, W)
    band, rows, cols = np.nonzero(seen)
    if len(band) == 0:
        return SemanticPointCloud.empty(cats)
    votes = total[band, :, rows, cols]  # (V, slots)
    n_robots = len(locals_)
    ids = np.array(sorted(lm.owner for lm in locals_))
    by_id = sorted(locals_, key=lambda lm: lm.owner)
    first = np.full(votes.shape, n_robots, dtype=np.int64)  # rank of lowest voting robot
    for rank in range(n_robots - 1, -1, -1):
        mine = by_id[rank].counts[band, :, rows, cols] > 0
        first[mine] = rank
    key = votes * (n_robots + 1) + (n_robots - first)
    slot = np.argmax(key, axis=1)
    rank = first[np.arange(len(slot)), slot]
    xs, ys = _cell_centers(rows, cols, spec)
    xyz = np.column_stack([xs, ys, np.where(band == 1, OBSTACLE_Z, FLOOR_Z)])
    return SemanticPointCloud(xyz, slot - 1, ids[rank], cats)


def _cell_centers(rows: np.ndarray, cols: np.ndarray, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    half = spec.size / 2.0
    x = spec.origin[0] + (cols - half + 0.5) * spec.resolution
    y = spec.origin[1] + (rows - half + 0.5) * spec.resolution
    return x, y


def dbscan_keep(xyz: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Mask of points that DBSCAN puts in some cluster (core or border)."""
    n = len(xyz)
    if n == 0:
        return np.zeros(0, dtype=bool)
    r = eps * (1.0 + 1e-9)
    tree = cKDTree(xyz)
    counts = tree.query_ball_point(xyz, r, return_length=True)
    core = counts >= min_pts
    keep = core.copy()
    if core.any() and not core.all():
        ctree = cKDTree(xyz[core])
        d, _ = ctree.query(xyz[~core], k=1, distance_upper_bound=r)
        keep[~core] = np.isfinite(d)
    return keep


def dbscan_filter(
    cloud: SemanticPointCloud, eps: float = 0.15, min_pts: int = 4, by_category: bool = True
) -> SemanticPointCloud:
    """Drop DBSCAN noise points.

    With ``by_category`` the clustering runs separately within each label
    (unlabeled points form their own group), so a stray label inside a dense
    floor patch is still isolated.
    """
    if not eps > 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    if len(cloud) == 0:
        return cloud
    if not by_category:
        return cloud.subset(dbscan_keep(cloud.xyz, eps, min_pts))
    keep = np.zeros(len(cloud), dtype=bool)
    for cat in np.unique(cloud.category):
        idx = np.nonzero(cloud.category == cat)[0]
        keep[idx] = dbscan_keep(cloud.xyz[idx], eps, min_pts)
    return cloud.subset(keep)


def semantic_layer(cloud: SemanticPointCloud, spec: GridSpec, rows=None, cols=None) -> np.ndarray:
    """Top-down label per cell; the highest labelled point wins, later points win ties."""
    sem = np.full(spec.shape, UNLABELED, dtype=np.int16)
    lab = np.nonzero(cloud.category != UNLABELED)[0]
    if len(lab) == 0:
        return sem
    if rows is None:
        rows, cols = world_to_grid_array(cloud.xyz[:, 1], cloud.xyz[:, 0], spec)
    lab = lab[np.argsort(cloud.xyz[lab, 2], kind="stable")]
    flat = rows[lab] * spec.size + cols[lab]
    # keep the last occurrence of each cell
    _, last = np.unique(flat[::-1], return_index=True)
    pick = lab[::-1][last]
    sem[rows[pick], cols[pick]] = cloud.category[pick]
    return sem


def project_2d(cloud: SemanticPointCloud, spec: GridSpec, floor_z: float = 0.2) -> GridMap:
    gmap = GridMap.empty(spec)
    if len(cloud) == 0:
        return gmap
    rows, cols = world_to_grid_array(cloud.xyz[:, 1], cloud.xyz[:, 0], spec)
    gmap.explored[rows, cols] = True
    high = cloud.xyz[:, 2] > floor_z
    gmap.obstacle[rows[high], cols[high]] = True
    gmap.semantic = semantic_layer(cloud, spec, rows, cols)
    return gmap


def write_cloud(cloud: SemanticPointCloud, path: str | Path) -> None:
    """Debug dump, one ``x y z category robot_id`` line per point."""
    with open(path, "w", encoding="utf-8") as fh:
        for (x, y, z), cat, rid in zip(cloud.xyz, cloud.category, cloud.robot):
            fh.write(f"{x:.4f} {y:.4f} {z:.4f} {cloud.category_name(int(cat))} {int(rid)}\n")


def read_cloud(path: str | Path, categories: tuple[str, ...]) -> SemanticPointCloud:
    xyz, cat, rid = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            x, y, z, name, r = line.split()
            xyz.append((float(x), float(y), float(z)))
            cat.append(UNLABELED if name == "unlabeled" else categories.index(name))
            rid.append(int(r))
    if not xyz:
        return SemanticPointCloud.empty(categories)
    return SemanticPointCloud(np.array(xyz), np.array(cat), np.array(rid), categories)
