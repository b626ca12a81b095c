"""Fast-marching distance fields and the per-step controller.

The field solver is first-order upwind on the grid with the two-axis
quadratic update applied on both the axis-aligned stencil and the 45-degree
rotated (diagonal) stencil; the smaller of the two is kept. The diagonal
stencil keeps the solution between the straight-line distance and the
8-connected graph distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from . import _kernels
from .core import Action, GridSpec, Pose, grid_to_world, world_to_grid, wrap_pi


class InvalidSourceError(ValueError):
    pass


class UnreachableError(ValueError):
    pass


@dataclass
class DistanceField:
    values: np.ndarray  # meters; inf where unreachable (or not yet marched)
    source: tuple[int, int]
    traversable: np.ndarray
    resolution: float
    complete: bool = True

    @property
    def reachable(self) -> np.ndarray:
        return np.isfinite(self.values)

    def at(self, cell: tuple[int, int]) -> float:
        return float(self.values[cell])


def fmm_field(
    traversable: np.ndarray,
    source: tuple[int, int],
    resolution: float = 0.05,
    *,
    stop_at: tuple[int, int] | None = None,
    diagonal: bool = True,
) -> DistanceField:
    """Geodesic arrival times (meters) from ``source`` over ``traversable``.

    ``stop_at`` ends the march once that cell is final; cells not yet final
    are reported as inf and ``complete`` is False.
    """
    trav = np.ascontiguousarray(traversable, dtype=np.bool_)
    r, c = int(source[0]), int(source[1])
    if not (0 <= r < trav.shape[0] and 0 <= c < trav.shape[1]) or not trav[r, c]:
        raise InvalidSourceError(f"source {source} is not traversable")
    sr, sc = (-1, -1) if stop_at is None else (int(stop_at[0]), int(stop_at[1]))
    values = _kernels.fmm(trav, r, c, float(resolution), diagonal, sr, sc)
    return DistanceField(values, (r, c), trav, float(resolution), complete=stop_at is None)


def extract_path(field: DistanceField, goal: tuple[int, int]) -> list[tuple[int, int]]:
    """Cells from the field's source to ``goal`` by steepest descent."""
    g = (int(goal[0]), int(goal[1]))
    if not np.isfinite(field.values[g]):
        raise UnreachableError(f"goal {goal} is unreachable")
    cells = _kernels.descend(field.values, field.traversable, g[0], g[1])
    if len(cells) == 0:
        raise UnreachableError(f"descent from {goal} stalled")
    return [(int(r), int(c)) for r, c in cells[::-1]]


def select_local_goal(path: list[tuple[int, int]], lookahead: float, resolution: float = 0.05) -> tuple[int, int]:
    """Farthest path cell within ``lookahead`` meters of arc length from the robot."""
    if not path:
        raise ValueError("empty path")
    if len(path) == 1:
        return path[0]
    arc = 0.0
    best = 1
    for i in range(1, len(path)):
        (r0, c0), (r1, c1) = path[i - 1], path[i]
        arc += resolution * math.hypot(r1 - r0, c1 - c0)
        if arc > lookahead + 1e-9:
            break
        best = i
    return path[best]


def select_action(
    pose: Pose,
    local_goal: tuple[float, float],
    target_in_reach: bool,
    heading_threshold: float = math.radians(15.0),
) -> Action:
    if target_in_reach:
        return Action.STOP
    dx = local_goal[0] - pose.x
    dy = local_goal[1] - pose.y
    if math.hypot(dx, dy) < 1e-9:
        # already on the local goal: scan in place
        return Action.TURN_LEFT
    err = wrap_pi(math.atan2(dy, dx) - pose.theta)
    if abs(err) > heading_threshold:
        return Action.TURN_LEFT if err > 0 else Action.TURN_RIGHT
    return Action.MOVE_FORWARD


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy * yy + xx * xx <= r * r).astype(np.uint8)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return mask.astype(bool)
    return cv2.dilate(mask.astype(np.uint8), disk(radius), borderType=cv2.BORDER_CONSTANT, borderValue=0).astype(bool)


def traversable_mask(obstacle: np.ndarray, dilation: int, clear_cell: tuple[int, int] | None = None) -> np.ndarray:
    """Planning mask: unknown counts as free, obstacles grow by ``dilation``.

    ``clear_cell`` re-opens the dilated ring around the robot so that a robot
    brushing a wall can still plan out of it.
    """
    blocked = dilate(obstacle, dilation)
    if clear_cell is not None:
        r, c = clear_cell
        k = max(1, dilation)
        r0, r1 = max(0, r - k), min(obstacle.shape[0], r + k + 1)
        c0, c1 = max(0, c - k), min(obstacle.shape[1], c + k + 1)
        win = disk(k)[r0 - (r - k) : r1 - (r - k), c0 - (c - k) : c1 - (c - k)].astype(bool)
        blocked[r0:r1, c0:c1] &= ~(win & ~obstacle[r0:r1, c0:c1])
    return ~blocked


def snap_goal(traversable: np.ndarray, goal: tuple[int, int], max_cells: float) -> tuple[int, int] | None:
    """Nearest traversable cell to ``goal`` within ``max_cells``; ties -> smallest (row, col)."""
    if traversable[goal]:
        return goal
    r, c = goal
    k = int(math.floor(max_cells))
    r0, r1 = max(0, r - k), min(traversable.shape[0], r + k + 1)
    c0, c1 = max(0, c - k), min(traversable.shape[1], c + k + 1)
    rr, cc = np.nonzero(traversable[r0:r1, c0:c1])
    if len(rr) == 0:
        return None
    rr = rr + r0
    cc = cc + c0
    d2 = (rr - r) ** 2 + (cc - c) ** 2
    ok = d2 <= max_cells * max_cells + 1e-9
    if not ok.any():
        return None
    order = np.lexsort((cc[ok], rr[ok], d2[ok]))
    i = order[0]
    return (int(rr[ok][i]), int(cc[ok][i]))


@dataclass
class LocalPlan:
    action: Action
    local_goal: tuple[int, int] | None
    path: list[tuple[int, int]]
    idle: bool = False


def plan_step(
    obstacle: np.ndarray,
    explored: np.ndarray,
    pose: Pose,
    goal: tuple[int, int],
    spec: GridSpec,
    *,
    target_in_reach: bool = False,
    dilation: int = 2,
    lookahead: float = 0.5,
    heading_threshold: float = math.radians(15.0),
    snap_radius: float = 0.5,
    margin: int = 12,
    step_m: float = 0.25,
) -> LocalPlan:
    """One controller step toward the long-term ``goal`` cell.

    Planning runs on a window around the explored area, the robot and the
    goal (unknown space is treated as free inside it).
    """
    if target_in_reach:
        return LocalPlan(Action.STOP, None, [])
    robot = world_to_grid(pose.xy, spec)
    n = spec.size
    rows = np.nonzero(explored.any(axis=1))[0]
    cols = np.nonzero(explored.any(axis=0))[0]
    lo_r = min([robot[0], goal[0]] + ([rows[0]] if len(rows) else []))
    hi_r = max([robot[0], goal[0]] + ([rows[-1]] if len(rows) else []))
    lo_c = min([robot[1], goal[1]] + ([cols[0]] if len(cols) else []))
    hi_c = max([robot[1], goal[1]] + ([cols[-1]] if len(cols) else []))
    r0, r1 = max(0, lo_r - margin), min(n, hi_r + margin + 1)
    c0, c1 = max(0, lo_c - margin), min(n, hi_c + margin + 1)
    # obstacles are always explored, so the window holds all of them
    trav = traversable_mask(obstacle[r0:r1, c0:c1], dilation, (robot[0] - r0, robot[1] - c0))
    g = snap_goal(trav, (goal[0] - r0, goal[1] - c0), snap_radius / spec.resolution)
    if g is None:
        return LocalPlan(Action.TURN_LEFT, None, [], idle=True)
    field = fmm_field(trav, (robot[0] - r0, robot[1] - c0), spec.resolution, stop_at=g)
    if not np.isfinite(field.values[g]):
        return LocalPlan(Action.TURN_LEFT, None, [], idle=True)
    path = [(r + r0, c + c0) for r, c in extract_path(field, g)]
    if len(path) == 1:
        # standing on the goal: scan in place until the next assignment
        return LocalPlan(Action.TURN_LEFT, robot, path)
    lg = select_local_goal(path, lookahead, spec.resolution)
    # pull the local goal back until the straight chord to it misses known obstacles
    half = n / 2.0
    px = (pose.x - spec.origin[0]) / spec.resolution + half - c0
    py = (pose.y - spec.origin[1]) / spec.resolution + half - r0
    occ = np.ascontiguousarray(obstacle[r0:r1, c0:c1])
    k = path.index(lg)
    while k > 1 and not _kernels.swept_clear(~trav, px, py, path[k][1] - c0 + 0.5, path[k][0] - r0 + 0.5):
        k -= 1
    lg = path[k]
    action = select_action(pose, grid_to_world(lg, spec), False, heading_threshold)
    if action is Action.MOVE_FORWARD:
        step = step_m / spec.resolution
        ex, ey = px + step * math.cos(pose.theta), py + step * math.sin(pose.theta)
        if not _kernels.swept_clear(occ, px, py, ex, ey):
            # a known obstacle blocks the straight move: rotate toward the goal instead
            err = wrap_pi(math.atan2(lg[0] - r0 + 0.5 - py, lg[1] - c0 + 0.5 - px) - pose.theta)
            action = Action.TURN_LEFT if err >= 0 else Action.TURN_RIGHT
    return LocalPlan(action, lg, path)
