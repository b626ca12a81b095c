"""Shared domain types and the grid/world coordinate convention.

World frame: x to the right, y up, meters. Grid frame: ``row`` grows with +y,
``col`` grows with +x. A :class:`GridSpec` is centred on ``origin``; for the
default 24 m / 0.05 m spec the world point ``origin`` sits on the lower-left
corner of cell (240, 240).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# Goal categories used across the corpus (chair, sofa, plant, bed, toilet, tv).
CATEGORIES: tuple[str, ...] = ("chair", "sofa", "plant", "bed", "toilet", "tv")

UNLABELED = -1


class ExtentError(ValueError):
    """A world point falls outside the grid."""


class GridIndexError(IndexError):
    """A cell index falls outside the grid."""


class MapInvariantError(ValueError):
    """A GridMap violates its channel invariants."""


def normalize_angle(theta: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    t = math.fmod(theta, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    # fmod can return exactly 2*pi after the correction for tiny negatives
    if t >= TWO_PI:
        t = 0.0
    return t


def wrap_pi(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    t = normalize_angle(theta)
    return t - TWO_PI if t > math.pi else t


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose {self.x}, {self.y}, {self.theta}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


class Action(enum.Enum):
    MOVE_FORWARD = "move_forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    LOOK_UP = "look_up"
    LOOK_DOWN = "look_down"
    STOP = "stop"


@dataclass(frozen=True)
class GridSpec:
    side_meters: float = 24.0
    resolution: float = 0.05
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        n = self.side_meters / self.resolution
        if n < 1 or abs(n - round(n)) > 1e-6:
            raise ValueError(
                f"side {self.side_meters} m is not a whole number of {self.resolution} m cells"
            )
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def size(self) -> int:
        return int(round(self.side_meters / self.resolution))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.size, self.size)


def world_to_grid(p: tuple[float, float], spec: GridSpec) -> tuple[int, int]:
    """Cell (row, col) containing world point ``p``."""
    rows, cols = world_to_grid_array(np.array([p[1]]), np.array([p[0]]), spec)
    return int(rows[0]), int(cols[0])


def world_to_grid_array(y: np.ndarray, x: np.ndarray, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    half = spec.size / 2.0
    cols = np.floor((np.asarray(x, dtype=float) - spec.origin[0]) / spec.resolution + half).astype(np.int64)
    rows = np.floor((np.asarray(y, dtype=float) - spec.origin[1]) / spec.resolution + half).astype(np.int64)
    bad = (rows < 0) | (rows >= spec.size) | (cols < 0) | (cols >= spec.size)
    if bad.any():
        i = int(np.argmax(bad))
        raise ExtentError(f"point ({float(np.asarray(x).flat[i])}, {float(np.asarray(y).flat[i])}) outside grid extent")
    return rows, cols


def grid_to_world(cell: tuple[int, int], spec: GridSpec) -> tuple[float, float]:
    """World coordinates of the centre of ``cell``."""
    r, c = int(cell[0]), int(cell[1])
    if not (0 <= r < spec.size and 0 <= c < spec.size):
        raise GridIndexError(f"cell {cell} outside {spec.shape}")
    half = spec.size / 2.0
    x = spec.origin[0] + (c - half + 0.5) * spec.resolution
    y = spec.origin[1] + (r - half + 0.5) * spec.resolution
    return (x, y)


@dataclass
class GridMap:
    """Two-channel exploration map plus a semantic layer (-1 = no label)."""

    spec: GridSpec
    obstacle: np.ndarray
    explored: np.ndarray
    semantic: np.ndarray

    @classmethod
    def empty(cls, spec: GridSpec) -> GridMap:
        return cls(
            spec,
            np.zeros(spec.shape, dtype=bool),
            np.zeros(spec.shape, dtype=bool),
            np.full(spec.shape, UNLABELED, dtype=np.int16),
        )

    def validate(self) -> None:
        for name in ("obstacle", "explored", "semantic"):
            if getattr(self, name).shape != self.spec.shape:
                raise MapInvariantError(f"{name} channel shape {getattr(self, name).shape} != {self.spec.shape}")
        if (self.obstacle & ~self.explored).any():
            raise MapInvariantError("obstacle cell outside explored area")
        if ((self.semantic != UNLABELED) & ~self.explored).any():
            raise MapInvariantError("semantic label on unexplored cell")

    def mark(
        self,
        rows: np.ndarray,
        cols: np.ndarray,
        obstacle: np.ndarray | None = None,
        labels: np.ndarray | None = None,
    ) -> None:
        """Mark cells explored, optionally setting obstacles and labels (last writer wins)."""
        self.explored[rows, cols] = True
        if obstacle is not None:
            self.obstacle[rows[obstacle], cols[obstacle]] = True
        if labels is not None:
            keep = labels != UNLABELED
            self.semantic[rows[keep], cols[keep]] = labels[keep]

    def copy(self) -> GridMap:
        return GridMap(self.spec, self.obstacle.copy(), self.explored.copy(), self.semantic.copy())

    @property
    def free(self) -> np.ndarray:
        return self.explored & ~self.obstacle


@dataclass
class SemanticPointCloud:
    """Labelled 3D points: xyz in meters, category index or -1, source robot id."""

    xyz: np.ndarray
    category: np.ndarray
    robot: np.ndarray
    categories: tuple[str, ...] = CATEGORIES

    def __post_init__(self) -> None:
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.category = np.asarray(self.category, dtype=np.int16).reshape(-1)
        self.robot = np.asarray(self.robot, dtype=np.int16).reshape(-1)
        n = len(self.xyz)
        if len(self.category) != n or len(self.robot) != n:
            raise ValueError("point arrays disagree in length")
        if not np.isfinite(self.xyz).all():
            raise ValueError("non-finite point coordinates")
        if n and ((self.category < UNLABELED) | (self.category >= len(self.categories))).any():
            raise ValueError("category id outside the category set")

    @classmethod
    def empty(cls, categories: tuple[str, ...] = CATEGORIES) -> SemanticPointCloud:
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0), categories)

    def __len__(self) -> int:
        return len(self.xyz)

    def subset(self, keep: np.ndarray) -> SemanticPointCloud:
        return SemanticPointCloud(self.xyz[keep], self.category[keep], self.robot[keep], self.categories)

    def category_name(self, idx: int) -> str:
        return "unlabeled" if idx == UNLABELED else self.categories[idx]


@dataclass(frozen=True)
class EpisodeConfig:
    episode_id: str
    scene_id: str
    target: str
    start: tuple[int, int]
    n_robots: int = 2
    max_steps: int = 500
    success_radius: float = 0.1
    replan_period: int = 25
    extra: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.n_robots < 1:
            raise ValueError("need at least one robot")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.success_radius > 0:
            raise ValueError("success radius must be positive")
        if self.replan_period < 1:
            raise ValueError("replan period must be >= 1")
        object.__setattr__(self, "start", (int(self.start[0]), int(self.start[1])))

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "scene_id": self.scene_id,
            "target": self.target,
            "start": list(self.start),
            "n_robots": self.n_robots,
            "max_steps": self.max_steps,
            "success_radius": self.success_radius,
            "replan_period": self.replan_period,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EpisodeConfig:
        known = {"episode_id", "scene_id", "target", "start", "n_robots", "max_steps", "success_radius", "replan_period"}
        return cls(**{k: (tuple(v) if k == "start" else v) for k, v in d.items() if k in known})
