"""Deterministic synthetic apartment scenes and episode lists.

Each scene is a rectangle of rooms separated by 2-cell walls with one doorway
per shared wall, sprinkled with furniture-sized obstacle blocks. Goal objects
are free, labelled footprints kept clear of walls so a point robot can stand
on them.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import CATEGORIES, EpisodeConfig
from .sim import Scene, SceneObject, scene_to_text

WALL = 2
DOOR = 20  # 1.0 m
CLEAR = 8  # free margin around objects and starts


def _rooms(rng: np.random.Generator, h: int, w: int):
    """Split the interior into a rows x cols grid of rooms with jittered walls."""
    nr, nc = int(rng.integers(2, 4)), int(rng.integers(2, 4))

    def cuts(n, size):
        base = np.linspace(0, size, n + 1)[1:-1]
        jitter = rng.integers(-size // (4 * n), size // (4 * n) + 1, len(base))
        return [int(b + j) for b, j in zip(base, jitter)]

    return cuts(nr, h), cuts(nc, w)


def make_scene(scene_id: str, seed: int, resolution: float = 0.05) -> Scene:
    rng = np.random.default_rng(seed)
    h = int(rng.integers(160, 201))
    w = int(rng.integers(160, 201))
    occ = np.zeros((h, w), dtype=bool)
    occ[:WALL, :] = occ[-WALL:, :] = True
    occ[:, :WALL] = occ[:, -WALL:] = True
    rcuts, ccuts = _rooms(rng, h, w)
    rbounds = [0] + rcuts + [h]
    cbounds = [0] + ccuts + [w]
    doors = np.zeros_like(occ)
    for r in rcuts:
        occ[r : r + WALL, :] = True
        for a, b in zip(cbounds[:-1], cbounds[1:]):
            lo, hi = a + WALL + 4, b - DOOR - 4
            if hi > lo:
                d = int(rng.integers(lo, hi))
                doors[r : r + WALL, d : d + DOOR] = True
    for c in ccuts:
        occ[:, c : c + WALL] = True
        for a, b in zip(rbounds[:-1], rbounds[1:]):
            lo, hi = a + WALL + 4, b - DOOR - 4
            if hi > lo:
                d = int(rng.integers(lo, hi))
                doors[d : d + DOOR, c : c + WALL] = True
    occ[doors] = False
    # keep doorway approaches open
    keep_open = np.zeros_like(occ)
    for r, c in np.argwhere(doors):
        keep_open[max(0, r - 12) : r + 13, max(0, c - 12) : c + 13] = True

    rooms = [
        (a + WALL, b, cc + WALL, d)
        for a, b in zip(rbounds[:-1], rbounds[1:])
        for cc, d in zip(cbounds[:-1], cbounds[1:])
    ]

    # clutter: 1-3 blocks per room against or near walls
    for r0, r1, c0, c1 in rooms:
        for _ in range(int(rng.integers(1, 4))):
            bh, bw = int(rng.integers(6, 16)), int(rng.integers(6, 16))
            if r1 - r0 - bh < 4 or c1 - c0 - bw < 4:
                continue
            rr = int(rng.integers(r0, r1 - bh))
            cc = int(rng.integers(c0, c1 - bw))
            if keep_open[rr : rr + bh, cc : cc + bw].any():
                continue
            occ[rr : rr + bh, cc : cc + bw] = True

    # goal objects: 3-5 distinct categories, each in a different room when possible
    taken = occ.copy()
    objects = []
    ncat = int(rng.integers(3, 6))
    cats = rng.choice(len(CATEGORIES), ncat, replace=False)
    order = rng.permutation(len(rooms))
    for k, cat in enumerate(cats):
        r0, r1, c0, c1 = rooms[order[k % len(rooms)]]
        size = int(rng.integers(6, 11))
        for _ in range(50):
            rr = int(rng.integers(r0, max(r0 + 1, r1 - size)))
            cc = int(rng.integers(c0, max(c0 + 1, c1 - size)))
            win = (slice(max(0, rr - CLEAR), rr + size + CLEAR), slice(max(0, cc - CLEAR), cc + size + CLEAR))
            if rr + size + CLEAR > h or cc + size + CLEAR > w or taken[win].any():
                continue
            cells = [(i, j) for i in range(rr, rr + size) for j in range(cc, cc + size)]
            taken[win] = True
            objects.append(SceneObject(int(cat), np.array(cells, dtype=np.int64)))
            break
    return Scene(scene_id, resolution, occ, tuple(objects))


def free_start_cells(scene: Scene, clear: int = CLEAR) -> np.ndarray:
    """Free cells with ``clear`` free cells in every direction, outside every object."""
    from scipy import ndimage

    ok = ndimage.binary_erosion(scene.free, np.ones((2 * clear + 1, 2 * clear + 1), dtype=bool), border_value=0)
    ok &= scene.semantic == -1
    return np.argwhere(ok)


def make_episodes(scene: Scene, n: int, seed: int, n_robots: int = 2) -> list[EpisodeConfig]:
    from .sim import geodesic_field

    rng = np.random.default_rng(seed)
    starts = free_start_cells(scene)
    present = sorted({o.category for o in scene.objects})
    out = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 1000:
            raise RuntimeError(f"could not place episodes in {scene.scene_id}")
        start = tuple(int(v) for v in starts[rng.integers(len(starts))])
        cat = present[len(out) % len(present)]
        fld = geodesic_field(scene, start)
        d = min(float(fld.values[o.cells[:, 0], o.cells[:, 1]].min()) for o in scene.instances(cat))
        # reachable but not trivially close
        if not np.isfinite(d) or d < 2.0:
            continue
        out.append(
            EpisodeConfig(f"{scene.scene_id}_{len(out):02d}", scene.scene_id, scene.categories[cat], start, n_robots)
        )
    return out


def write_corpus(out_dir: str | Path, n_scenes: int = 10, episodes_per_scene: int = 5, seed: int = 2024) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    episodes = []
    for i in range(n_scenes):
        sid = f"apartment_{chr(ord('a') + i)}"
        scene = make_scene(sid, seed + i)
        p = out_dir / f"{sid}.json"
        p.write_text(scene_to_text(scene) + "\n", encoding="utf-8")
        written.append(p)
        episodes.extend(make_episodes(scene, episodes_per_scene, seed + 1000 + i))
    ep = out_dir / "episodes.jsonl"
    with open(ep, "w", encoding="utf-8") as fh:
        for e in episodes:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
    written.append(ep)
    return written


def corpus_dir() -> Path:
    """The checked-in corpus shipped with the package."""
    return Path(__file__).parent / "data" / "corpus"
