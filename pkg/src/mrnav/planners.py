"""Global goal assignment: greedy, cost-utility, random sample, and VLM-prompted.

Greedy and cost-utility walk the robots in id order; each robot takes its
best frontier among those still unassigned (ties -> lowest frontier id).
Unreachable frontiers are skipped. Robots left without a frontier get a
fallback cell sampled uniformly from explored free space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import GridMap, Pose, SemanticPointCloud, world_to_grid
from .frontier import FrontierCluster
from .local_policy import InvalidSourceError, fmm_field, traversable_mask
from .prompt import (
    SYSTEM_PROMPT,
    ReplyError,
    build_text_prompt,
    parse_reply,
    render_candidates,
    render_topview,
)
from .vlm import VlmClient, VlmError, VlmRequest

POLICIES = ("greedy", "costutil", "random", "vlm")


class PlannerError(RuntimeError):
    """Both the primary policy and its fallback failed; ``report`` says why."""

    def __init__(self, report: dict):
        super().__init__(report.get("message", "planner failure"))
        self.report = report


class NoExploredSpaceError(PlannerError):
    def __init__(self, message: str = "no explored free cell to sample"):
        super().__init__({"kind": "no-explored-space", "message": message})


@dataclass
class PlannerInput:
    grid_map: GridMap
    cloud: SemanticPointCloud
    poses: dict[int, Pose]
    frontiers: list[FrontierCluster]
    target: str
    step: int = 0
    seed: int = 0
    dilation: int = 2

    def __post_init__(self) -> None:
        ids = [f.id for f in self.frontiers]
        if ids != list(range(len(ids))):
            raise ValueError(f"frontier ids must be 0..k-1 in order, got {ids}")
        if not self.poses:
            raise ValueError("no robots")

    @property
    def robot_ids(self) -> list[int]:
        return sorted(self.poses)


@dataclass(frozen=True)
class Goal:
    frontier_id: int | None
    cell: tuple[int, int]


@dataclass
class Assignment:
    goals: dict[int, Goal]
    policy: str
    fallback: bool = False
    reason: str | None = None
    extra: dict = field(default_factory=dict)

    def frontier_ids(self) -> dict[int, int | None]:
        return {r: g.frontier_id for r, g in sorted(self.goals.items())}

    def to_dict(self) -> dict:
        d = {
            "policy": self.policy,
            "fallback": self.fallback,
            "reason": self.reason,
            "goals": {str(r): {"frontier": g.frontier_id, "cell": list(g.cell)} for r, g in sorted(self.goals.items())},
        }
        d.update(self.extra)
        return d


def _window(inp: PlannerInput, margin: int = 12) -> tuple[int, int, int, int]:
    explored = inp.grid_map.explored
    n0, n1 = explored.shape
    rows = np.nonzero(explored.any(axis=1))[0]
    cols = np.nonzero(explored.any(axis=0))[0]
    cells = [world_to_grid(p.xy, inp.grid_map.spec) for p in inp.poses.values()]
    rs = [c[0] for c in cells] + ([rows[0], rows[-1]] if len(rows) else [])
    cs = [c[1] for c in cells] + ([cols[0], cols[-1]] if len(cols) else [])
    return max(0, min(rs) - margin), min(n0, max(rs) + margin + 1), max(0, min(cs) - margin), min(n1, max(cs) + margin + 1)


def robot_field(inp: PlannerInput, robot_id: int):
    """Distance field from one robot over the dilated obstacle map (unknown = free),
    cropped to a window around explored space. Returns (field, (row0, col0))."""
    r0, r1, c0, c1 = _window(inp)
    cell = world_to_grid(inp.poses[robot_id].xy, inp.grid_map.spec)
    local = (cell[0] - r0, cell[1] - c0)
    trav = traversable_mask(inp.grid_map.obstacle[r0:r1, c0:c1], inp.dilation, local)
    try:
        return fmm_field(trav, local, inp.grid_map.spec.resolution), (r0, c0)
    except InvalidSourceError:
        return None, (r0, c0)


def frontier_distances(inp: PlannerInput) -> dict[int, np.ndarray]:
    """Robot id -> geodesic meters to each frontier representative (inf if unreachable)."""
    out = {}
    for rid in inp.robot_ids:
        fld, (r0, c0) = robot_field(inp, rid)
        d = np.full(len(inp.frontiers), math.inf)
        if fld is not None:
            h, w = fld.values.shape
            for f in inp.frontiers:
                r, c = f.representative[0] - r0, f.representative[1] - c0
                if 0 <= r < h and 0 <= c < w:
                    d[f.id] = fld.values[r, c]
        out[rid] = d
    return out


def cost_utility_score(
    f: FrontierCluster, pose: Pose, gmap: GridMap, lam: float = 1.0, distance: float | None = None, dilation: int = 2
) -> float:
    """Frontier size (cells) minus ``lam`` times travel distance (meters); -inf if unreachable."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if distance is None:
        inp = PlannerInput(gmap, SemanticPointCloud.empty(), {0: pose}, [], "", dilation=dilation)
        fld, (r0, c0) = robot_field(inp, 0)
        r, c = f.representative[0] - r0, f.representative[1] - c0
        if fld is None or not (0 <= r < fld.values.shape[0] and 0 <= c < fld.values.shape[1]):
            distance = math.inf
        else:
            distance = float(fld.values[r, c])
    if not math.isfinite(distance):
        return -math.inf
    return float(f.size) - lam * distance


def fallback_rng(seed: int, step: int, robot_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(step), int(robot_id)])


def sample_free_cells(gmap: GridMap, rng: np.random.Generator, n: int = 1) -> list[tuple[int, int]]:
    """Uniform samples (with replacement) from explored, non-obstacle cells."""
    rr, cc = np.nonzero(gmap.free)
    if len(rr) == 0:
        raise NoExploredSpaceError()
    idx = rng.integers(0, len(rr), n)
    return [(int(rr[i]), int(cc[i])) for i in idx]


def _fallback_goal(inp: PlannerInput, rid: int) -> Goal:
    return Goal(None, sample_free_cells(inp.grid_map, fallback_rng(inp.seed, inp.step, rid))[0])


def sequential_argmax(scores: dict[int, np.ndarray], robot_ids: list[int]) -> dict[int, int | None]:
    """Robots in order take their best-scoring unassigned frontier; -inf means unusable."""
    taken: set[int] = set()
    out: dict[int, int | None] = {}
    for rid in robot_ids:
        s = np.asarray(scores[rid], dtype=float)
        best, best_s = None, -math.inf
        for fid in range(len(s)):
            if fid in taken or not s[fid] > best_s:
                continue
            best, best_s = fid, s[fid]
        out[rid] = best
        if best is not None:
            taken.add(best)
    return out


def _assemble(inp: PlannerInput, choice: dict[int, int | None], policy: str) -> Assignment:
    goals, fell_back = {}, False
    for rid in inp.robot_ids:
        fid = choice[rid]
        if fid is None:
            goals[rid] = _fallback_goal(inp, rid)
            fell_back = True
        else:
            goals[rid] = Goal(fid, inp.frontiers[fid].representative)
    return Assignment(goals, policy, fell_back, "exhausted" if fell_back else None)


def assign_greedy(inp: PlannerInput, distances: dict[int, np.ndarray] | None = None) -> Assignment:
    """Nearest unassigned frontier per robot, in robot-id order."""
    dist = frontier_distances(inp) if distances is None else distances
    scores = {rid: -np.asarray(dist[rid], dtype=float) for rid in inp.robot_ids}
    return _assemble(inp, sequential_argmax(scores, inp.robot_ids), "greedy")


def assign_cost_utility(
    inp: PlannerInput, lam: float = 1.0, distances: dict[int, np.ndarray] | None = None
) -> Assignment:
    """Highest size-minus-distance score per robot among unassigned frontiers."""
    dist = frontier_distances(inp) if distances is None else distances
    scores = {}
    for rid in inp.robot_ids:
        pose = inp.poses[rid]
        scores[rid] = np.array(
            [cost_utility_score(f, pose, inp.grid_map, lam, float(dist[rid][f.id])) for f in inp.frontiers]
        )
    return _assemble(inp, sequential_argmax(scores, inp.robot_ids), "costutil")


def assign_random(inp: PlannerInput, seed: int | None = None) -> Assignment:
    """Each robot gets a uniformly sampled explored free cell."""
    s = inp.seed if seed is None else seed
    goals = {
        rid: Goal(None, sample_free_cells(inp.grid_map, fallback_rng(s, inp.step, rid))[0]) for rid in inp.robot_ids
    }
    return Assignment(goals, "random")


def build_request(inp: PlannerInput, mode: str = "topview", distance_hints: bool = False, model: str = "gpt-4o",
                  temperature: float = 0.0, distances: dict[int, np.ndarray] | None = None) -> VlmRequest:
    base = render_topview(inp.cloud, inp.grid_map, inp.poses, mode)
    visual = render_candidates(base, inp.frontiers)
    hints = None
    if distance_hints:
        dist = frontier_distances(inp) if distances is None else distances
        hints = {rid: {f.id: float(dist[rid][f.id]) for f in inp.frontiers if math.isfinite(dist[rid][f.id])}
                 for rid in inp.robot_ids}
    text = build_text_prompt(inp.target, inp.robot_ids, hints)
    return VlmRequest(SYSTEM_PROMPT, text, visual.images, model, temperature, context=inp)


def assign_vlm(
    inp: PlannerInput,
    client: VlmClient,
    mode: str = "topview",
    lam: float = 1.0,
    distance_hints: bool = False,
    model: str = "gpt-4o",
) -> Assignment:
    """Frontier choice by the VLM; parse or transport failures fall back to cost-utility.

    With no frontiers every robot gets a random explored cell.
    """
    if not inp.frontiers:
        try:
            a = assign_random(inp)
        except NoExploredSpaceError as e:
            raise PlannerError({"kind": "no-frontiers", "message": "no frontiers and no explored free space",
                                "fallback_error": e.report}) from e
        return Assignment(a.goals, "vlm", True, "no-frontiers")
    request = build_request(inp, mode, distance_hints, model)
    try:
        reply = client.complete(request)
        choice = parse_reply(reply.text, inp.robot_ids, len(inp.frontiers))
    except (VlmError, ReplyError) as e:
        reason = getattr(e, "category", type(e).__name__)
        try:
            a = assign_cost_utility(inp, lam)
        except NoExploredSpaceError as e2:
            raise PlannerError({"kind": reason, "message": str(e), "fallback_error": e2.report}) from e2
        return Assignment(a.goals, "vlm", True, reason, {"detail": str(e)[:200]})
    goals = {rid: Goal(fid, inp.frontiers[fid].representative) for rid, fid in choice.items()}
    return Assignment(goals, "vlm", False, None, {"reply": reply.text})
