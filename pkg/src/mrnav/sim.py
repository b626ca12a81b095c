"""Deterministic 2D grid world: scenes, ground-truth semantic sensing, dynamics.

Scene world frame: cell (r, c) covers x in [c*res, (c+1)*res) and
y in [r*res, (r+1)*res).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import CATEGORIES, UNLABELED, Action, Pose
from .local_policy import InvalidSourceError, fmm_field

STEP_METERS = 0.25
TURN_RADIANS = math.radians(30.0)


class SceneFormatError(ValueError):
    pass


class InvalidPoseError(ValueError):
    pass


class InvalidPointError(ValueError):
    pass


@dataclass(frozen=True)
class SceneObject:
    category: int
    cells: np.ndarray  # (k, 2) int rows/cols


@dataclass(frozen=True)
class Scene:
    scene_id: str
    resolution: float
    occupancy: np.ndarray  # True = obstacle
    objects: tuple[SceneObject, ...] = ()
    categories: tuple[str, ...] = CATEGORIES
    semantic: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        sem = np.full(self.occupancy.shape, UNLABELED, dtype=np.int16)
        for obj in self.objects:
            sem[obj.cells[:, 0], obj.cells[:, 1]] = obj.category
        object.__setattr__(self, "semantic", sem)
        self.occupancy.setflags(write=False)
        sem.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    @property
    def free(self) -> np.ndarray:
        return ~self.occupancy

    def cell_center(self, cell: tuple[int, int]) -> tuple[float, float]:
        return ((cell[1] + 0.5) * self.resolution, (cell[0] + 0.5) * self.resolution)

    def cell_of(self, p: tuple[float, float]) -> tuple[int, int]:
        return (int(math.floor(p[1] / self.resolution)), int(math.floor(p[0] / self.resolution)))

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.shape[0] and 0 <= cell[1] < self.shape[1]

    def instances(self, category: str | int) -> list[SceneObject]:
        idx = self.categories.index(category) if isinstance(category, str) else category
        return [o for o in self.objects if o.category == idx]


def load_scene(text: str, categories: tuple[str, ...] = CATEGORIES) -> Scene:
    """Parse a scene file (see README for the grammar)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"not JSON: {e}") from e
    if not isinstance(doc, dict):
        raise SceneFormatError("scene must be a JSON object")
    for key in ("id", "resolution", "grid"):
        if key not in doc:
            raise SceneFormatError(f"missing field {key!r}")
    res = doc["resolution"]
    if not isinstance(res, (int, float)) or isinstance(res, bool) or not res > 0:
        raise SceneFormatError("resolution must be a positive number")
    grid = doc["grid"]
    if not isinstance(grid, list) or not grid or not all(isinstance(row, str) for row in grid):
        raise SceneFormatError("grid must be a non-empty list of strings")
    width = len(grid[0])
    if width == 0:
        raise SceneFormatError("empty grid rows")
    for i, row in enumerate(grid):
        if len(row) != width:
            raise SceneFormatError(f"ragged row {i}: {len(row)} != {width}")
        bad = set(row) - {"#", "."}
        if bad:
            raise SceneFormatError(f"row {i}: unexpected characters {sorted(bad)}")
    occ = np.array([[ch == "#" for ch in row] for row in grid], dtype=bool)
    if occ.all():
        raise SceneFormatError("scene has no free cell")
    objects = []
    for j, obj in enumerate(doc.get("objects", [])):
        cat = obj.get("category") if isinstance(obj, dict) else None
        if cat not in categories:
            raise SceneFormatError(f"object {j}: unknown category {cat!r}")
        cells = obj.get("cells")
        if not isinstance(cells, list) or not cells:
            raise SceneFormatError(f"object {j}: cells must be a non-empty list")
        arr = np.array(cells)
        if arr.ndim != 2 or arr.shape[1] != 2 or not np.issubdtype(arr.dtype, np.integer):
            raise SceneFormatError(f"object {j}: cells must be [row, col] integer pairs")
        if (arr[:, 0] < 0).any() or (arr[:, 0] >= occ.shape[0]).any() or (arr[:, 1] < 0).any() or (arr[:, 1] >= occ.shape[1]).any():
            raise SceneFormatError(f"object {j}: cell outside the grid")
        objects.append(SceneObject(categories.index(cat), arr.astype(np.int64)))
    return Scene(str(doc["id"]), float(res), occ, tuple(objects), tuple(categories))


def scene_to_text(scene: Scene) -> str:
    grid = ["".join("#" if v else "." for v in row) for row in scene.occupancy]
    objects = [
        {"category": scene.categories[o.category], "cells": o.cells.tolist()} for o in scene.objects
    ]
    return json.dumps({"id": scene.scene_id, "resolution": scene.resolution, "grid": grid, "objects": objects}, indent=1)


@dataclass(frozen=True)
class SensorParams:
    range_m: float = 5.0
    fov: float = math.radians(90.0)
    # None: one sight line per candidate cell centre; int: classic ray fan
    ray_count: int | None = None
    label_dropout: float = 0.0
    false_label_rate: float = 0.0


@dataclass
class SensorFrame:
    robot_id: int
    pose: Pose
    rows: np.ndarray
    cols: np.ndarray
    obstacle: np.ndarray
    category: np.ndarray
    resolution: float

    def __len__(self) -> int:
        return len(self.rows)


def _check_pose(scene: Scene, pose: Pose) -> tuple[int, int]:
    cell = scene.cell_of(pose.xy)
    if not scene.in_bounds(cell):
        raise InvalidPoseError(f"pose {pose} outside scene")
    if scene.occupancy[cell]:
        raise InvalidPoseError(f"pose {pose} on an obstacle cell")
    return cell


def sense(
    scene: Scene,
    pose: Pose,
    params: SensorParams = SensorParams(),
    robot_id: int = 0,
    rng: np.random.Generator | None = None,
) -> SensorFrame:
    """Ground-truth range + semantic observation from ``pose``."""
    _check_pose(scene, pose)
    px = pose.x / scene.resolution
    py = pose.y / scene.resolution
    rng_cells = params.range_m / scene.resolution
    occ = scene.occupancy
    if params.ray_count is None:
        cells = _kernels.visible_cells(occ, px, py, pose.theta, rng_cells, params.fov / 2.0)
    else:
        k = int(params.ray_count)
        angles = pose.theta + np.linspace(-params.fov / 2.0, params.fov / 2.0, k) if k > 1 else np.array([pose.theta])
        cells = _kernels.ray_fan_cells(occ, px, py, angles, rng_cells)
    if len(cells):
        order = np.lexsort((cells[:, 1], cells[:, 0]))
        cells = cells[order]
    rows = cells[:, 0].astype(np.int64)
    cols = cells[:, 1].astype(np.int64)
    obstacle = occ[rows, cols]
    category = scene.semantic[rows, cols].astype(np.int16)
    if params.label_dropout > 0 or params.false_label_rate > 0:
        if rng is None:
            raise ValueError("sensor noise needs an rng")
        category = category.copy()
        labeled = category != UNLABELED
        drop = labeled & (rng.random(len(category)) < params.label_dropout)
        category[drop] = UNLABELED
        fake = ~labeled & (rng.random(len(category)) < params.false_label_rate)
        category[fake] = rng.integers(0, len(scene.categories), int(fake.sum()))
    return SensorFrame(robot_id, pose, rows, cols, obstacle, category, scene.resolution)


def step(scene: Scene, pose: Pose, action: Action, step_m: float = STEP_METERS, turn: float = TURN_RADIANS) -> Pose:
    """Apply one discrete action; a blocked forward move leaves the pose unchanged."""
    if action is Action.MOVE_FORWARD:
        nx = pose.x + step_m * math.cos(pose.theta)
        ny = pose.y + step_m * math.sin(pose.theta)
        r = scene.resolution
        if not _kernels.swept_clear(scene.occupancy, pose.x / r, pose.y / r, nx / r, ny / r):
            return pose
        return Pose(nx, ny, pose.theta)
    if action is Action.TURN_LEFT:
        return Pose(pose.x, pose.y, pose.theta + turn)
    if action is Action.TURN_RIGHT:
        return Pose(pose.x, pose.y, pose.theta - turn)
    return pose


def initial_poses(scene: Scene, start: tuple[int, int], n: int) -> list[Pose]:
    """Robots share the start cell centre; robot i faces i * 360/n degrees."""
    x, y = scene.cell_center(start)
    return [Pose(x, y, 2.0 * math.pi * i / n) for i in range(n)]


def geodesic_field(scene: Scene, cell: tuple[int, int], extra_free: np.ndarray | None = None):
    trav = scene.free if extra_free is None else (scene.free | extra_free)
    try:
        return fmm_field(trav, cell, scene.resolution)
    except InvalidSourceError as e:
        raise InvalidPointError(str(e)) from e


def geodesic_distance(scene: Scene, a: tuple[float, float], b: tuple[float, float]) -> float:
    """Shortest obstacle-free path length (meters) between two world points."""
    ca, cb = scene.cell_of(a), scene.cell_of(b)
    for p, c in ((a, ca), (b, cb)):
        if not scene.in_bounds(c) or scene.occupancy[c]:
            raise InvalidPointError(f"point {p} is not on a free cell")
    return float(geodesic_field(scene, ca).values[cb])


def distance_to_cells(p: tuple[float, float], cells: np.ndarray, resolution: float) -> float:
    """Euclidean distance from a point to the nearest of a set of cell squares."""
    if len(cells) == 0:
        return math.inf
    x0 = cells[:, 1] * resolution
    y0 = cells[:, 0] * resolution
    dx = np.maximum(np.maximum(x0 - p[0], 0.0), p[0] - (x0 + resolution))
    dy = np.maximum(np.maximum(y0 - p[1], 0.0), p[1] - (y0 + resolution))
    return float(np.sqrt(dx * dx + dy * dy).min())
