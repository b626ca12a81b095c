"""Frontier extraction from the two-channel exploration map.

Pipeline: keep explored regions whose area reaches the minimum cluster size,
take their boundary (explored cells 8-adjacent to unexplored ones), remove
cells inside the dilated obstacle edge, group the rest into 8-connected
clusters, drop small clusters, and number the survivors by decreasing size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import GridMap
from .local_policy import disk

EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class FrontierParams:
    dilation_radius: int = 3
    min_size: int = 10


@dataclass(frozen=True)
class FrontierCluster:
    id: int
    cells: np.ndarray  # (k, 2) rows/cols, sorted
    representative: tuple[int, int]

    @property
    def size(self) -> int:
        return len(self.cells)


def representative_cell(cells) -> tuple[int, int]:
    """Member nearest the centroid; ties go to the smallest (row, col)."""
    arr = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    if len(arr) == 0:
        raise ValueError("empty cluster")
    centroid = arr.mean(axis=0)
    d2 = ((arr - centroid) ** 2).sum(axis=1)
    order = np.lexsort((arr[:, 1], arr[:, 0], d2))
    r, c = arr[order[0]]
    return (int(r), int(c))


def obstacle_edge(obstacle: np.ndarray) -> np.ndarray:
    """Obstacle cells with at least one 8-adjacent non-obstacle cell."""
    inner = ndimage.binary_erosion(obstacle, EIGHT, border_value=1)
    return obstacle & ~inner


def frontier_mask(gmap: GridMap, params: FrontierParams = FrontierParams()) -> np.ndarray:
    """Boolean frontier cells before clustering."""
    explored = gmap.explored
    out = np.zeros(explored.shape, dtype=bool)
    if not explored.any():
        return out
    # work on the explored bounding box plus a margin
    pad = params.dilation_radius + 2
    rows = np.nonzero(explored.any(axis=1))[0]
    cols = np.nonzero(explored.any(axis=0))[0]
    r0, r1 = max(0, rows[0] - pad), min(explored.shape[0], rows[-1] + pad + 1)
    c0, c1 = max(0, cols[0] - pad), min(explored.shape[1], cols[-1] + pad + 1)
    exp = explored[r0:r1, c0:c1]
    obs = gmap.obstacle[r0:r1, c0:c1]

    labels, n = ndimage.label(exp, structure=EIGHT)
    if n == 0:
        return out
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    big = areas >= params.min_size
    big[0] = False
    regions = big[labels]

    boundary = regions & ~ndimage.binary_erosion(exp, EIGHT, border_value=1)
    edge = obstacle_edge(obs)
    if params.dilation_radius > 0:
        edge = ndimage.binary_dilation(edge, disk(params.dilation_radius).astype(bool))
    out[r0:r1, c0:c1] = boundary & ~obs & ~edge
    return out


def extract_frontiers(gmap: GridMap, params: FrontierParams = FrontierParams()) -> list[FrontierCluster]:
    mask = frontier_mask(gmap, params)
    labels, n = ndimage.label(mask, structure=EIGHT)
    if n == 0:
        return []
    clusters = []
    rr, cc = np.nonzero(labels)
    lab = labels[rr, cc]
    order = np.argsort(lab, kind="stable")
    rr, cc, lab = rr[order], cc[order], lab[order]
    bounds = np.searchsorted(lab, np.arange(1, n + 2))
    for k in range(n):
        cells = np.column_stack([rr[bounds[k] : bounds[k + 1]], cc[bounds[k] : bounds[k + 1]]])
        if len(cells) >= params.min_size:
            clusters.append(cells)
    # largest first; equal sizes by first cell in raster order
    clusters.sort(key=lambda cells: (-len(cells), int(cells[0, 0]), int(cells[0, 1])))
    return [FrontierCluster(i, cells, representative_cell(cells)) for i, cells in enumerate(clusters)]
