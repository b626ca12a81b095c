"""Per-episode trajectory figure: final map, robot paths, assigned goals, target."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core import grid_to_world  # noqa: E402
from .prompt import robot_rgb  # noqa: E402


def render_trajectory(record, scene, path: str | Path, dpi: int = 100) -> Path:
    """Write a PNG of the episode. Scene walls are drawn faintly under the
    explored map so unexplored structure is still visible."""
    path = Path(path)
    res = scene.resolution
    h, w = scene.shape
    fig, ax = plt.subplots(figsize=(6, 6 * h / max(w, 1)))
    img = np.full((h, w, 3), 1.0)
    img[scene.occupancy] = 0.85
    gmap = record.final_map
    if gmap is not None:
        off_r = gmap.spec.size // 2 - record.config.start[0]
        off_c = gmap.spec.size // 2 - record.config.start[1]
        sub = (slice(off_r, off_r + h), slice(off_c, off_c + w))
        img[gmap.explored[sub]] = 0.78
        img[gmap.obstacle[sub]] = 0.3
    for obj in scene.instances(record.config.target):
        img[obj.cells[:, 0], obj.cells[:, 1]] = (1.0, 0.75, 0.0)
    ax.imshow(img, origin="lower", extent=(0, w * res, 0, h * res), interpolation="nearest")
    for rid, traj in sorted(record.trajectories.items()):
        arr = np.asarray(traj)
        color = np.array(robot_rgb(rid)) / 255.0
        ax.plot(arr[:, 0], arr[:, 1], "-", color=color, lw=1.2, label=f"robot {rid}")
        ax.plot(arr[-1, 0], arr[-1, 1], "o", color=color, ms=5)
    if gmap is not None:
        for entry in record.assignments:
            for rid, g in entry["goals"].items():
                x, y = grid_to_world(tuple(g["cell"]), gmap.spec)
                ax.plot(x, y, "x", color=np.array(robot_rgb(int(rid))) / 255.0, ms=4, alpha=0.6)
    sx, sy = scene.cell_center(record.config.start)
    ax.plot(sx, sy, "k*", ms=9, label="start")
    status = "success" if record.success else "failure"
    ax.set_title(f"{record.config.episode_id}: {record.config.target}, {status} in {record.steps} steps", fontsize=9)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path
