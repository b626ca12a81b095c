"""Compiled inner loops (numba): fast marching, grid traversal, visibility."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

SQRT2 = math.sqrt(2.0)
_TIE = 1e-12


# --- fast marching ------------------------------------------------------------


@njit(cache=True, inline="always")
def quad_update(a, b, d):
    """Upwind solve of ((t-a)/d)^2 + ((t-b)/d)^2 = 1, falling back to 1D."""
    if a > b:
        a, b = b, a
    if a == np.inf:
        return np.inf
    if b - a >= d:
        return a + d
    return 0.5 * (a + b + math.sqrt(2.0 * d * d - (a - b) * (a - b)))


@njit(cache=True)
def fmm(trav, sr, sc, h, diagonal, stop_r, stop_c):
    """Arrival times from (sr, sc) over ``trav``; unaccepted cells stay inf.

    With ``stop_r >= 0`` marching halts once that cell is accepted; every
    cell with a smaller arrival time is final at that point. Works on a
    one-cell padded copy so neighbour reads need no bounds checks.
    """
    H, W = trav.shape
    Wp = W + 2
    N = (H + 2) * Wp
    tp = np.zeros(N, dtype=np.bool_)
    for r in range(H):
        for c in range(W):
            tp[(r + 1) * Wp + c + 1] = trav[r, c]
    T = np.full(N, np.inf)  # final values; inf until accepted
    tent = np.full(N, np.inf)
    cap = 8 * H * W + 8
    keys = np.empty(cap, dtype=np.float64)
    vals = np.empty(cap, dtype=np.int64)
    size = 0
    d2 = h * math.sqrt(2.0)
    offs = np.array([-Wp, Wp, -1, 1, -Wp - 1, -Wp + 1, Wp - 1, Wp + 1])
    nbr = 8 if diagonal else 4
    src = (sr + 1) * Wp + sc + 1
    stop = (stop_r + 1) * Wp + stop_c + 1 if stop_r >= 0 else -1
    tent[src] = 0.0
    keys[0] = 0.0
    vals[0] = src
    size = 1
    while size > 0:
        # pop
        t = keys[0]
        i = vals[0]
        size -= 1
        keys[0] = keys[size]
        vals[0] = vals[size]
        j = 0
        while True:
            left = 2 * j + 1
            if left >= size:
                break
            m = left
            if left + 1 < size and keys[left + 1] < keys[left]:
                m = left + 1
            if keys[j] <= keys[m]:
                break
            keys[m], keys[j] = keys[j], keys[m]
            vals[m], vals[j] = vals[j], vals[m]
            j = m
        if T[i] != np.inf or t > tent[i]:
            continue
        T[i] = t
        if i == stop:
            break
        for k in range(nbr):
            q = i + offs[k]
            if not tp[q] or T[q] != np.inf:
                continue
            a = min(T[q - Wp], T[q + Wp])
            b = min(T[q - 1], T[q + 1])
            nt = quad_update(a, b, h)
            if diagonal:
                # diagonal neighbours only count when both shared sides are open
                v1 = T[q - Wp - 1] if (tp[q - Wp] and tp[q - 1]) else np.inf
                v2 = T[q + Wp + 1] if (tp[q + Wp] and tp[q + 1]) else np.inf
                v3 = T[q - Wp + 1] if (tp[q - Wp] and tp[q + 1]) else np.inf
                v4 = T[q + Wp - 1] if (tp[q + Wp] and tp[q - 1]) else np.inf
                nt = min(nt, quad_update(min(v1, v2), min(v3, v4), d2))
            if nt < tent[q]:
                tent[q] = nt
                # push
                j = size
                keys[j] = nt
                vals[j] = q
                size += 1
                while j > 0:
                    p = (j - 1) >> 1
                    if keys[p] <= keys[j]:
                        break
                    keys[p], keys[j] = keys[j], keys[p]
                    vals[p], vals[j] = vals[j], vals[p]
                    j = p
    out = np.empty((H, W))
    for r in range(H):
        for c in range(W):
            out[r, c] = T[(r + 1) * Wp + c + 1]
    return out


@njit(cache=True)
def descend(T, trav, gr, gc):
    """Steepest descent from (gr, gc) to the zero of ``T``; returns (n, 2) cells."""
    H, W = T.shape
    out = np.empty((H * W, 2), dtype=np.int64)
    n = 0
    r, c = gr, gc
    out[n, 0] = r
    out[n, 1] = c
    n += 1
    dr8 = np.array([-1, 1, 0, 0, -1, -1, 1, 1])
    dc8 = np.array([0, 0, -1, 1, -1, 1, -1, 1])
    while T[r, c] > 0.0:
        best = T[r, c]
        br = -1
        bc = -1
        for k in range(8):
            rr = r + dr8[k]
            cc = c + dc8[k]
            if rr < 0 or rr >= H or cc < 0 or cc >= W:
                continue
            if rr != r and cc != c and not (trav[r, cc] and trav[rr, c]):
                continue
            if T[rr, cc] < best:
                best = T[rr, cc]
                br = rr
                bc = cc
        if br < 0:
            return out[:0]
        r, c = br, bc
        out[n, 0] = r
        out[n, 1] = c
        n += 1
    return out[:n]


# --- grid traversal -------------------------------------------------------------


@njit(cache=True)
def segment_cells(x0, y0, x1, y1, out):
    """Cells whose interior the segment crosses, in order (cell units, x=col).

    Exact vertex crossings step diagonally so corner-touching cells are skipped.
    Returns the number of cells written to ``out``.
    """
    c = int(math.floor(x0))
    r = int(math.floor(y0))
    tc = int(math.floor(x1))
    tr = int(math.floor(y1))
    dx = x1 - x0
    dy = y1 - y0
    if dx > 0:
        sc = 1
        tmx = (c + 1 - x0) / dx
        tdx = 1.0 / dx
    elif dx < 0:
        sc = -1
        tmx = (x0 - c) / -dx
        tdx = -1.0 / dx
    else:
        sc = 0
        tmx = np.inf
        tdx = np.inf
    if dy > 0:
        sr = 1
        tmy = (r + 1 - y0) / dy
        tdy = 1.0 / dy
    elif dy < 0:
        sr = -1
        tmy = (y0 - r) / -dy
        tdy = -1.0 / dy
    else:
        sr = 0
        tmy = np.inf
        tdy = np.inf
    n = 0
    out[n, 0] = r
    out[n, 1] = c
    n += 1
    while (r != tr or c != tc) and n < out.shape[0]:
        if min(tmx, tmy) >= 1.0:
            break
        if abs(tmx - tmy) <= _TIE:
            c += sc
            r += sr
            tmx += tdx
            tmy += tdy
        elif tmx < tmy:
            c += sc
            tmx += tdx
        else:
            r += sr
            tmy += tdy
        out[n, 0] = r
        out[n, 1] = c
        n += 1
    return n


@njit(cache=True)
def swept_clear(occ, x0, y0, x1, y1):
    """True when the segment stays in bounds and crosses no occupied cell."""
    H, W = occ.shape
    buf = np.empty((int(abs(x1 - x0) + abs(y1 - y0)) + 4, 2), dtype=np.int64)
    n = segment_cells(x0, y0, x1, y1, buf)
    for i in range(n):
        r = buf[i, 0]
        c = buf[i, 1]
        if r < 0 or r >= H or c < 0 or c >= W or occ[r, c]:
            return False
    # the end point may sit exactly on a cell boundary the traversal stopped short of
    r = int(math.floor(y1))
    c = int(math.floor(x1))
    if r < 0 or r >= H or c < 0 or c >= W or occ[r, c]:
        return False
    return True


@njit(cache=True)
def visible_cells(occ, px, py, theta, range_cells, half_fov):
    """Per-cell line of sight: cells whose centre lies in the wedge and is
    reachable by a straight segment that crosses no earlier occupied cell."""
    H, W = occ.shape
    r0 = max(0, int(math.floor(py - range_cells)) - 1)
    r1 = min(H - 1, int(math.floor(py + range_cells)) + 1)
    c0 = max(0, int(math.floor(px - range_cells)) - 1)
    c1 = min(W - 1, int(math.floor(px + range_cells)) + 1)
    out = np.empty(((r1 - r0 + 1) * (c1 - c0 + 1), 2), dtype=np.int64)
    buf = np.empty((int(4 * range_cells) + 8, 2), dtype=np.int64)
    n = 0
    pr = int(math.floor(py))
    pc = int(math.floor(px))
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            cx = c + 0.5
            cy = r + 0.5
            dx = cx - px
            dy = cy - py
            d = math.sqrt(dx * dx + dy * dy)
            if d > range_cells:
                continue
            if not (r == pr and c == pc):
                err = math.atan2(dy, dx) - theta
                err = (err + math.pi) % (2.0 * math.pi) - math.pi
                if abs(err) > half_fov + 1e-9:
                    continue
            m = segment_cells(px, py, cx, cy, buf)
            ok = True
            for i in range(m - 1):
                if occ[buf[i, 0], buf[i, 1]]:
                    ok = False
                    break
            if ok:
                out[n, 0] = r
                out[n, 1] = c
                n += 1
    return out[:n]


@njit(cache=True)
def ray_fan_cells(occ, px, py, angles, range_cells):
    """Classic fan of rays; each stops at (and includes) its first obstacle."""
    H, W = occ.shape
    hit = np.zeros((H, W), dtype=np.bool_)
    buf = np.empty((int(4 * range_cells) + 8, 2), dtype=np.int64)
    for k in range(angles.shape[0]):
        ex = px + range_cells * math.cos(angles[k])
        ey = py + range_cells * math.sin(angles[k])
        m = segment_cells(px, py, ex, ey, buf)
        for i in range(m):
            r = buf[i, 0]
            c = buf[i, 1]
            if r < 0 or r >= H or c < 0 or c >= W:
                break
            hit[r, c] = True
            if occ[r, c]:
                break
    return np.argwhere(hit)
