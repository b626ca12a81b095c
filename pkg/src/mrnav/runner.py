"""Episode loop, metrics, and batch evaluation.

Cadence: at local step 0 and every ``replan_period`` steps the robots' maps are
merged, denoised and projected, frontiers are extracted, and the global
planner assigns goals. Every local step each robot (in id order) plans on the
shared working map, acts, senses, and folds the frame into its local map.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .config import Settings
from .core import CATEGORIES, Action, EpisodeConfig, GridMap, GridSpec, Pose, world_to_grid
from .frontier import extract_frontiers
from .local_policy import plan_step
from .mapping import LocalMap, dbscan_filter, frame_cells, integrate_frame, merge_global, project_2d
from .planners import (
    PlannerError,
    PlannerInput,
    assign_cost_utility,
    assign_greedy,
    assign_random,
    assign_vlm,
)
from .sim import STEP_METERS, Scene, distance_to_cells, geodesic_field, initial_poses, sense, step
from .vlm import VlmClient, make_client

SCHEMA_VERSION = 1
ACTION_CODES = {
    Action.MOVE_FORWARD: "F",
    Action.TURN_LEFT: "L",
    Action.TURN_RIGHT: "R",
    Action.LOOK_UP: "U",
    Action.LOOK_DOWN: "D",
    Action.STOP: "S",
}


class MetricsDataError(ValueError):
    pass


@dataclass
class EpisodeRecord:
    config: EpisodeConfig
    planner: str
    seed: int
    success: bool = False
    steps: int = 0
    success_robot: int | None = None
    l: float | None = None  # shortest start -> success-region length
    p: float | None = None  # path length of the robot that stopped successfully
    p_min: float | None = None  # shortest path among all robots
    dtg: float | None = None  # None when the target is absent (infinite)
    target_present: bool = True
    trajectories: dict[int, list[list[float]]] = field(default_factory=dict)
    actions: dict[int, str] = field(default_factory=dict)
    forward_moves: dict[int, int] = field(default_factory=dict)
    frozen: list[int] = field(default_factory=list)
    assignments: list[dict] = field(default_factory=list)
    error: dict | None = None
    wall_clock: float = 0.0
    final_map: GridMap | None = field(default=None, repr=False, compare=False)

    @property
    def s(self) -> int:
        return int(self.success)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "planner": self.planner,
            "seed": self.seed,
            "success": self.success,
            "steps": self.steps,
            "success_robot": self.success_robot,
            "l": self.l,
            "p": self.p,
            "p_min": self.p_min,
            "dtg": self.dtg,
            "target_present": self.target_present,
            "trajectories": {str(k): v for k, v in sorted(self.trajectories.items())},
            "actions": {str(k): v for k, v in sorted(self.actions.items())},
            "forward_moves": {str(k): v for k, v in sorted(self.forward_moves.items())},
            "frozen": self.frozen,
            "assignments": self.assignments,
            "error": self.error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> EpisodeRecord:
        if d.get("schema_version") != SCHEMA_VERSION:
            raise MetricsDataError(f"unsupported schema version {d.get('schema_version')}")
        return cls(
            config=EpisodeConfig.from_dict(d["config"]),
            planner=d["planner"],
            seed=d["seed"],
            success=d["success"],
            steps=d["steps"],
            success_robot=d["success_robot"],
            l=d["l"],
            p=d["p"],
            p_min=d["p_min"],
            dtg=d["dtg"],
            target_present=d["target_present"],
            trajectories={int(k): v for k, v in d["trajectories"].items()},
            actions={int(k): v for k, v in d["actions"].items()},
            forward_moves={int(k): v for k, v in d["forward_moves"].items()},
            frozen=d["frozen"],
            assignments=d["assignments"],
            error=d["error"],
        )


# --- metrics ---------------------------------------------------------------------


def compute_sr(records: list[EpisodeRecord]) -> float:
    if not records:
        raise ValueError("empty batch")
    return sum(r.s for r in records) / len(records)


def spl_term(r: EpisodeRecord) -> float:
    if not r.success:
        return 0.0
    if r.l is None or r.p is None or not r.l > 0 or not r.p > 0:
        raise MetricsDataError(f"episode {r.config.episode_id}: success needs l > 0 and p > 0 (l={r.l}, p={r.p})")
    return r.l / max(r.l, r.p)


def compute_spl(records: list[EpisodeRecord]) -> float:
    if not records:
        raise ValueError("empty batch")
    return sum(spl_term(r) for r in records) / len(records)


def compute_dtg(record: EpisodeRecord, scene: Scene) -> float:
    """Ground-truth geodesic from the nearest final robot position to any target cell."""
    instances = scene.instances(record.config.target)
    if not instances:
        return math.inf
    if record.success:
        return 0.0
    cells = np.concatenate([o.cells for o in instances])
    extra = np.zeros(scene.shape, dtype=bool)
    extra[cells[:, 0], cells[:, 1]] = True
    best = math.inf
    for traj in record.trajectories.values():
        x, y = traj[-1][0], traj[-1][1]
        fld = geodesic_field(scene, scene.cell_of((x, y)), extra)
        best = min(best, float(fld.values[cells[:, 0], cells[:, 1]].min()))
    return best


def mean_dtg(records: list[EpisodeRecord], failed_only: bool = False) -> float | None:
    vals = [r.dtg for r in records if r.dtg is not None and (not failed_only or not r.success)]
    return sum(vals) / len(vals) if vals else None


def mean_steps_to_success(records: list[EpisodeRecord]) -> float:
    """Failures count as the full step budget."""
    return sum(r.steps if r.success else r.config.max_steps for r in records) / len(records)


# --- episode ---------------------------------------------------------------------


def episode_spec(scene: Scene, start: tuple[int, int], side_meters: float = 24.0) -> GridSpec:
    """Map grid whose centre cell coincides with the start cell.

    The origin sits on the start cell's lower-left corner, so map cells and
    scene cells share boundaries.
    """
    res = scene.resolution
    spec = GridSpec(side_meters, res, (start[1] * res, start[0] * res))
    half = spec.size // 2
    h, w = scene.shape
    if start[0] - half > 0 or start[1] - half > 0 or h - start[0] > half or w - start[1] > half:
        raise ValueError(f"scene {scene.scene_id} does not fit a {side_meters} m map centred on {start}")
    return spec


def success_region(scene: Scene, target: str, radius: float) -> np.ndarray:
    """Free cells whose centre lies within ``radius`` of some target cell."""
    region = np.zeros(scene.shape, dtype=bool)
    res = scene.resolution
    k = int(math.ceil(radius / res)) + 1
    for obj in scene.instances(target):
        r0, r1 = max(0, obj.cells[:, 0].min() - k), min(scene.shape[0], obj.cells[:, 0].max() + k + 1)
        c0, c1 = max(0, obj.cells[:, 1].min() - k), min(scene.shape[1], obj.cells[:, 1].max() + k + 1)
        for r in range(r0, r1):
            for c in range(c0, c1):
                if not region[r, c] and scene.free[r, c]:
                    if distance_to_cells(((c + 0.5) * res, (r + 0.5) * res), obj.cells, res) <= radius:
                        region[r, c] = True
    return region


def shortest_success_length(scene: Scene, start: tuple[int, int], target: str, radius: float) -> float:
    region = success_region(scene, target, radius)
    if not region.any():
        return math.inf
    fld = geodesic_field(scene, start)
    return float(fld.values[region].min())


@dataclass
class _Robot:
    rid: int
    pose: Pose
    local: LocalMap
    bumps: np.ndarray
    traj: list
    actions: list
    forward: int = 0
    frozen: bool = False
    goal: tuple[int, int] | None = None


def _round_pose(p: Pose) -> list[float]:
    return [round(p.x, 6), round(p.y, 6), round(p.theta, 6)]


def _plan_global(
    planner: str,
    robots: list[_Robot],
    target: str,
    t: int,
    seed: int,
    settings: Settings,
    client: VlmClient | None,
):
    cloud = merge_global([r.local for r in robots])
    spec = robots[0].local.spec
    # one point per cell: eps below ~3 cells would strip coarse maps bare
    eps = max(settings.dbscan_eps, 3 * spec.resolution)
    cloud = dbscan_filter(cloud, eps, settings.dbscan_min_pts)
    gmap = project_2d(cloud, spec)
    frontiers = extract_frontiers(gmap, settings.frontier())
    active = [r for r in robots if not r.frozen]
    inp = PlannerInput(gmap, cloud, {r.rid: r.pose for r in active}, frontiers, target, t, seed, settings.plan_dilation)
    if planner == "random":
        a = assign_random(inp)
    elif planner == "greedy":
        a = assign_greedy(inp)
    elif planner == "costutil":
        a = assign_cost_utility(inp, settings.lam)
    elif planner == "vlm":
        if client is None:
            raise ValueError("vlm planner needs a client")
        a = assign_vlm(inp, client, settings.prompt_mode, settings.lam, settings.distance_hints, settings.model)
    else:
        raise ValueError(f"unknown planner {planner!r}")
    entry = {"step": t, "frontiers": len(frontiers), **a.to_dict()}
    return a, entry


def _nearest_target_cell(sem: np.ndarray, target_idx: int, cell: tuple[int, int]) -> tuple[int, int] | None:
    rr, cc = np.nonzero(sem == target_idx)
    if len(rr) == 0:
        return None
    d2 = (rr - cell[0]) ** 2 + (cc - cell[1]) ** 2
    i = np.lexsort((cc, rr, d2))[0]
    return (int(rr[i]), int(cc[i]))


def run_episode(
    scene: Scene,
    config: EpisodeConfig,
    planner: str = "greedy",
    seed: int = 0,
    settings: Settings = Settings(),
    client: VlmClient | None = None,
    keep_map: bool = False,
) -> EpisodeRecord:
    t0 = time.perf_counter()
    rec = EpisodeRecord(config, planner, seed)
    cats = scene.categories
    if config.target not in cats:
        raise ValueError(f"unknown target category {config.target!r}")
    target_idx = cats.index(config.target)
    if not scene.in_bounds(config.start) or scene.occupancy[config.start]:
        raise ValueError(f"start cell {config.start} is not free")
    spec = episode_spec(scene, config.start, settings.side_meters)
    sensor = settings.sensor()
    heading_thr = math.radians(settings.heading_threshold_deg)
    noise_rng = np.random.default_rng([seed, 7919])

    working = GridMap.empty(spec)
    robots = [
        _Robot(i, p, LocalMap(i, spec, cats), np.zeros(spec.shape, dtype=bool), [], [])
        for i, p in enumerate(initial_poses(scene, config.start, config.n_robots))
    ]

    def observe(rb: _Robot) -> None:
        frame = sense(scene, rb.pose, sensor, rb.rid, noise_rng)
        integrate_frame(rb.local, frame)
        rows, cols = frame_cells(frame, spec)
        working.mark(rows, cols, frame.obstacle, frame.category)

    for rb in robots:
        rb.traj.append(_round_pose(rb.pose))
        observe(rb)

    instances = scene.instances(target_idx)
    rec.target_present = bool(instances)
    done = False
    t = 0
    try:
        for t in range(config.max_steps):
            if t % config.replan_period == 0:
                a, entry = _plan_global(planner, robots, config.target, t, seed, settings, client)
                rec.assignments.append(entry)
                for rb in robots:
                    if rb.rid in a.goals:
                        rb.goal = a.goals[rb.rid].cell
            for rb in robots:
                if rb.frozen:
                    continue
                cell = world_to_grid(rb.pose.xy, spec)
                tgt = _nearest_target_cell(working.semantic, target_idx, cell)
                in_reach = False
                goal = rb.goal
                if tgt is not None:
                    goal = tgt
                    mapped = np.argwhere(working.semantic == target_idx)
                    # map cells back to scene cells for the metric check
                    scene_cells = mapped - np.array([spec.size // 2 - config.start[0], spec.size // 2 - config.start[1]])
                    in_reach = distance_to_cells(rb.pose.xy, scene_cells, scene.resolution) <= config.success_radius
                if goal is None:
                    goal = cell
                plan = plan_step(
                    working.obstacle | rb.bumps,
                    working.explored,
                    rb.pose,
                    goal,
                    spec,
                    target_in_reach=in_reach,
                    dilation=settings.plan_dilation,
                    lookahead=settings.lookahead,
                    heading_threshold=heading_thr,
                    snap_radius=settings.snap_radius,
                )
                rb.actions.append(ACTION_CODES[plan.action])
                if plan.action is Action.STOP:
                    valid = any(
                        distance_to_cells(rb.pose.xy, o.cells, scene.resolution) <= config.success_radius
                        for o in instances
                    )
                    if valid:
                        rec.success = True
                        rec.success_robot = rb.rid
                        done = True
                        break
                    rb.frozen = True
                    rec.frozen.append(rb.rid)
                    continue
                new = step(scene, rb.pose, plan.action)
                if plan.action is Action.MOVE_FORWARD:
                    if new == rb.pose:
                        _mark_bump(rb, scene, spec)
                    else:
                        rb.forward += 1
                rb.pose = new
                rb.traj.append(_round_pose(rb.pose))
                observe(rb)
            if done or all(rb.frozen for rb in robots):
                break
    except PlannerError as e:
        rec.error = {"kind": "planner-failure", "step": t, **e.report}
    rec.steps = t + 1
    for rb in robots:
        rec.trajectories[rb.rid] = rb.traj
        rec.actions[rb.rid] = "".join(rb.actions)
        rec.forward_moves[rb.rid] = rb.forward
    lengths = {rb.rid: rb.forward * STEP_METERS for rb in robots}
    rec.p_min = min(lengths.values())
    if rec.success:
        rec.p = lengths[rec.success_robot]
        rec.l = shortest_success_length(scene, config.start, config.target, config.success_radius)
    d = compute_dtg(rec, scene)
    rec.dtg = d if math.isfinite(d) else None
    rec.wall_clock = time.perf_counter() - t0
    if keep_map:
        rec.final_map = working
    return rec


def _mark_bump(rb: _Robot, scene: Scene, spec: GridSpec) -> None:
    """A blocked forward move marks the cell it ran into as an obstacle for this robot."""
    res = scene.resolution
    x0, y0 = rb.pose.x / res, rb.pose.y / res
    x1 = x0 + STEP_METERS / res * math.cos(rb.pose.theta)
    y1 = y0 + STEP_METERS / res * math.sin(rb.pose.theta)
    buf = np.empty((16, 2), dtype=np.int64)
    n = _kernels.segment_cells(x0, y0, x1, y1, buf)
    for r, c in buf[:n]:
        if not scene.in_bounds((r, c)) or scene.occupancy[r, c]:
            mr, mc = world_to_grid(scene.cell_center((int(r), int(c))), spec)
            rb.bumps[mr, mc] = True
            return


# --- batch -----------------------------------------------------------------------


@dataclass
class BatchReport:
    records: list[EpisodeRecord]
    sr: float
    spl: float
    dtg: float | None
    dtg_failed: float | None
    mean_steps: float
    fingerprint: str
    dtg_excluded: int = 0

    def summary(self) -> dict:
        return {
            "episodes": len(self.records),
            "sr": self.sr,
            "spl": self.spl,
            "dtg": self.dtg,
            "dtg_failed_only": self.dtg_failed,
            "dtg_excluded": self.dtg_excluded,
            "mean_steps_to_success": self.mean_steps,
            "errors": sum(1 for r in self.records if r.error),
            "fingerprint": self.fingerprint,
            "schema_version": SCHEMA_VERSION,
        }


def aggregate(records: list[EpisodeRecord], fingerprint: str = "") -> BatchReport:
    return BatchReport(
        records,
        compute_sr(records),
        compute_spl(records),
        mean_dtg(records),
        mean_dtg(records, failed_only=True),
        mean_steps_to_success(records),
        fingerprint,
        sum(1 for r in records if r.dtg is None),
    )


def load_episodes(path: str | Path) -> list[EpisodeConfig]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(EpisodeConfig.from_dict(json.loads(line)))
    return out


def load_corpus(scene_dir: str | Path, categories: tuple[str, ...] = CATEGORIES) -> dict[str, Scene]:
    from .sim import load_scene

    scenes = {}
    for p in sorted(Path(scene_dir).glob("*.json")):
        sc = load_scene(p.read_text(encoding="utf-8"), categories)
        scenes[sc.scene_id] = sc
    return scenes


def _episode_job(args) -> EpisodeRecord:
    scene, cfg, planner, seed, settings, vlm_spec, render_dir = args
    client = make_client(vlm_spec, settings.endpoint()) if planner == "vlm" else None
    try:
        rec = run_episode(scene, cfg, planner, seed, settings, client, keep_map=render_dir is not None)
    except Exception as e:  # recorded, the batch carries on
        rec = EpisodeRecord(cfg, planner, seed, error={"kind": type(e).__name__, "message": str(e)})
        return rec
    if render_dir is not None:
        from .plotting import render_trajectory

        render_trajectory(rec, scene, Path(render_dir) / f"{cfg.episode_id}.png")
    rec.final_map = None
    return rec


def run_batch(
    scenes: dict[str, Scene],
    episodes: list[EpisodeConfig],
    planner: str,
    seed: int = 0,
    settings: Settings = Settings(),
    vlm_spec: str = "mock-greedy",
    out_dir: str | Path | None = None,
    render: bool = False,
    workers: int = 1,
) -> BatchReport:
    """Run every episode; each gets seed ``seed + index`` and, for scripted
    replies, a fresh client reading the script from the top."""
    render_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if render:
            render_dir = out_dir / "trajectories"
            render_dir.mkdir(exist_ok=True)
    jobs = []
    for i, cfg in enumerate(episodes):
        if cfg.scene_id not in scenes:
            raise KeyError(f"episode {cfg.episode_id}: unknown scene {cfg.scene_id!r}")
        jobs.append((scenes[cfg.scene_id], cfg, planner, seed + i, settings, vlm_spec, render_dir))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_episode_job, jobs))
    else:
        records = [_episode_job(j) for j in jobs]
    fp = settings.fingerprint(planner=planner, seed=seed, vlm=vlm_spec, episodes=[e.episode_id for e in episodes])
    report = aggregate(records, fp)
    if out_dir is not None:
        with open(out_dir / "episodes.jsonl", "w", encoding="utf-8") as fh:
            for r in records:
                fh.write(r.to_json() + "\n")
        (out_dir / "summary.json").write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    return report


def read_records(path: str | Path) -> list[EpisodeRecord]:
    with open(path, encoding="utf-8") as fh:
        return [EpisodeRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
