"""Visual and textual prompts for the VLM frontier assigner, and reply parsing.

Images are RGB uint8 arrays at two pixels per map cell, row 0 at the top
(image rows follow grid rows). PNG encoding is done by :func:`to_png`.
"""

from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass

import cv2
import numpy as np
from PIL import Image

from .core import UNLABELED, GridMap, Pose, SemanticPointCloud, world_to_grid
from .frontier import FrontierCluster
from .mapping import semantic_layer

SCALE = 2

UNKNOWN_RGB = (255, 255, 255)
FREE_RGB = (200, 200, 200)
OBSTACLE_RGB = (80, 80, 80)
FRONTIER_RGB = (0, 255, 0)
TEXT_RGB = (0, 0, 0)
LABEL_BOX_RGB = (255, 255, 255)
# robot 0 red, robot 1 blue, then extras
ROBOT_RGB = ((255, 0, 0), (0, 0, 255), (255, 140, 0), (128, 0, 128), (0, 128, 128), (255, 0, 255))
CATEGORY_RGB = (
    (230, 159, 0),
    (86, 180, 233),
    (0, 158, 115),
    (240, 228, 66),
    (204, 121, 167),
    (213, 94, 0),
    (153, 102, 51),
    (102, 153, 0),
    (255, 204, 153),
    (153, 204, 255),
    (204, 255, 153),
    (160, 160, 255),
)
MODES = ("topview", "obstacle_only")

ROBOT_RADIUS_PX = 6
_FONT = cv2.FONT_HERSHEY_SIMPLEX


def _put_text(img: np.ndarray, text: str, org: tuple[int, int], scale: float) -> None:
    # some OpenCV builds blend glyph edges even with LINE_8; threshold a mask instead
    mask = np.zeros(img.shape[:2], dtype=np.uint8)
    cv2.putText(mask, text, org, _FONT, scale, 255, 1, cv2.LINE_8)
    img[mask >= 128] = TEXT_RGB


def palette() -> set[tuple[int, int, int]]:
    return {UNKNOWN_RGB, FREE_RGB, OBSTACLE_RGB, FRONTIER_RGB, TEXT_RGB, LABEL_BOX_RGB, *ROBOT_RGB, *CATEGORY_RGB}


def robot_rgb(robot_id: int) -> tuple[int, int, int]:
    return ROBOT_RGB[robot_id % len(ROBOT_RGB)]


def render_topview(
    cloud: SemanticPointCloud,
    gmap: GridMap,
    poses: dict[int, Pose],
    mode: str = "topview",
) -> np.ndarray:
    """Colour top view of the map with each robot drawn as a labelled circle."""
    if mode not in MODES:
        raise ValueError(f"unknown prompt mode {mode!r}")
    n = gmap.spec.size
    img = np.empty((n, n, 3), dtype=np.uint8)
    img[:] = UNKNOWN_RGB
    img[gmap.explored] = FREE_RGB
    img[gmap.obstacle] = OBSTACLE_RGB
    if mode == "topview":
        sem = semantic_layer(cloud, gmap.spec)
        for k in np.unique(sem[sem != UNLABELED]):
            img[sem == k] = CATEGORY_RGB[int(k) % len(CATEGORY_RGB)]
    img = np.repeat(np.repeat(img, SCALE, axis=0), SCALE, axis=1)
    for rid in sorted(poses):
        r, c = world_to_grid(poses[rid].xy, gmap.spec)
        center = (c * SCALE + SCALE // 2, r * SCALE + SCALE // 2)
        cv2.circle(img, center, ROBOT_RADIUS_PX, robot_rgb(rid), thickness=-1, lineType=cv2.LINE_8)
        _put_text(img, str(rid), (center[0] + ROBOT_RADIUS_PX + 2, center[1] - ROBOT_RADIUS_PX), 0.45)
    return img


@dataclass
class VisualPrompt:
    images: list[np.ndarray]
    base: np.ndarray
    metadata: list[dict]


def _label_box(img: np.ndarray, text: str) -> None:
    (w, h), base = cv2.getTextSize(text, _FONT, 0.6, 1)
    cv2.rectangle(img, (0, 0), (w + 8, h + base + 8), LABEL_BOX_RGB, thickness=-1, lineType=cv2.LINE_8)
    _put_text(img, text, (4, h + 4), 0.6)


def render_candidates(base: np.ndarray, frontiers: list[FrontierCluster]) -> VisualPrompt:
    """One copy of ``base`` per frontier, that frontier painted green and its id in the corner."""
    if not frontiers:
        raise ValueError("render_candidates needs at least one frontier")
    images, meta = [], []
    for f in frontiers:
        img = base.copy()
        _label_box(img, f"Frontier {f.id}")
        for dr in range(SCALE):
            for dc in range(SCALE):
                img[f.cells[:, 0] * SCALE + dr, f.cells[:, 1] * SCALE + dc] = FRONTIER_RGB
        images.append(img)
        meta.append({"frontier_id": f.id, "height": img.shape[0], "width": img.shape[1]})
    return VisualPrompt(images, base, meta)


def to_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def robot_key(robot_id: int) -> str:
    return f"robot_{robot_id}"


SYSTEM_PROMPT = "You coordinate a team of mobile robots searching a building for an object."


def build_text_prompt(
    target: str,
    robot_ids: list[int],
    distance_hints: dict[int, dict[int, float]] | None = None,
) -> str:
    """Four-part instruction text: task, context, requirements, input/output."""
    keys = ", ".join(f'"{robot_key(r)}"' for r in robot_ids)
    example = json.dumps({robot_key(r): i for i, r in enumerate(robot_ids)})
    lines = [
        f"Task: Find the {target}.",
        "",
        "Context:",
        f"There are {len(robot_ids)} robots ({', '.join(str(r) for r in robot_ids)}). "
        "Every robot can sense its surroundings and drive into unexplored space.",
        "Each attached image is the same top-down map of the area explored so far. "
        "Robots are drawn as filled circles next to their id. "
        "Each image highlights one candidate frontier in green, with the frontier id in the top-left corner.",
        "",
        "Requirements:",
        "Understand: read the room layout, where each robot is, and where each frontier leads.",
        f"Analyze: which frontiers are likely to lead to a {target}, and how the robots can split the search.",
        "Decide: give every robot one frontier, using different frontiers for different robots whenever possible.",
        "Justify: check the decision once more before answering.",
        "",
        f"Input: {{one top-down map per candidate frontier}}, target object: {target}.",
        f"Output: only a JSON object mapping each robot key ({keys}) to a frontier id, e.g. {example}.",
    ]
    if distance_hints:
        lines.append("")
        lines.append("Travel distances in meters (robot -> frontier):")
        for rid in robot_ids:
            row = distance_hints.get(rid, {})
            lines.append(f"{robot_key(rid)}: " + ", ".join(f"{fid}: {d:.1f}" for fid, d in sorted(row.items())))
    return "\n".join(lines) + "\n"


def serialize_assignment(assignment: dict[int, int]) -> str:
    return json.dumps({robot_key(r): int(f) for r, f in sorted(assignment.items())})


class ReplyError(ValueError):
    """A VLM reply that cannot be turned into an assignment.

    ``category`` is one of ``no-json``, ``bad-keys``, ``out-of-range``,
    ``duplicate-id``.
    """

    def __init__(self, category: str, detail: str = ""):
        super().__init__(f"{category}: {detail}" if detail else category)
        self.category = category


_ROBOT_KEY = re.compile(r"^robot_(\d+)$")


def first_json_object(text: str) -> dict | None:
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def parse_reply(raw: str, robot_ids: list[int], frontier_count: int) -> dict[int, int]:
    """Robot id -> frontier id from a VLM reply.

    Accepts JSON embedded in prose or code fences. Keys other than
    ``robot_<n>`` are ignored. Two robots may share a frontier only when there
    are more robots than frontiers.
    """
    obj = first_json_object(raw or "")
    if obj is None:
        raise ReplyError("no-json", "no JSON object in reply")
    found: dict[int, object] = {}
    for key, value in obj.items():
        m = _ROBOT_KEY.match(str(key))
        if m:
            found[int(m.group(1))] = value
    if set(found) != set(robot_ids):
        raise ReplyError("bad-keys", f"expected {sorted(robot_ids)}, got {sorted(found)}")
    out: dict[int, int] = {}
    for rid in robot_ids:
        v = found[rid]
        if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < frontier_count:
            raise ReplyError("out-of-range", f"{robot_key(rid)} -> {v!r} with {frontier_count} frontiers")
        out[rid] = v
    if len(set(out.values())) < len(out) and frontier_count >= len(robot_ids):
        raise ReplyError("duplicate-id", "two robots were given the same frontier")
    return out
