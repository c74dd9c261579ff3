"""Polygon rasterization and convex-hull helpers for mask handling.

The scanline even-odd rasterizer here is the reference implementation: the
inference service uses it to rasterize polygon mask payloads, and the browser
mask editor ships a line-for-line port so client previews match server-side
masks pixel-exactly. Pixel (i, j) is covered iff its center (j+0.5, i+0.5)
lies inside the polygon under even-odd parity.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import ConvexHull, QhullError


def rasterize_polygons(polygons: list[list[tuple[float, float]]], h: int, w: int) -> np.ndarray:
    """Fill polygons (lists of (x, y) vertices) into an HxW boolean mask."""
    out = np.zeros((h, w), dtype=bool)
    edges = []
    for poly in polygons:
        n = len(poly)
        if n < 3:
            continue
        for a in range(n):
            x1, y1 = poly[a]
            x2, y2 = poly[(a + 1) % n]
            edges.append((float(x1), float(y1), float(x2), float(y2)))
    if not edges:
        return out
    for i in range(h):
        y = i + 0.5
        xs = []
        for x1, y1, x2, y2 in edges:
            if (y1 <= y) != (y2 <= y):
                t = (y - y1) / (y2 - y1)
                xs.append(x1 + t * (x2 - x1))
        xs.sort()
        for a in range(0, len(xs) - 1, 2):
            j0 = max(0, math.ceil(xs[a] - 0.5))
            j1 = min(w, math.ceil(xs[a + 1] - 0.5))
            if j1 > j0:
                out[i, j0:j1] = True
    return out


def convex_hull_polygon(
    support: np.ndarray, max_vertices: int, rng: np.random.Generator
) -> list[tuple[float, float]] | None:
    """Convex hull of a boolean mask's support as an (x, y) vertex list.

    Hull points are the four corners of each support pixel so the filled
    polygon covers the pixels themselves, not just their centers. Returns
    None for degenerate supports (fewer than 3 hull points / collinear).
    """
    rows, cols = np.nonzero(support)
    if rows.size == 0:
        return None
    if rows.size > 4096:
        # hull only depends on boundary pixels; thin large supports first
        from scipy.ndimage import binary_erosion

        boundary = support & ~binary_erosion(support)
        rows, cols = np.nonzero(boundary)
    pts = np.concatenate(
        [
            np.stack([cols, rows], axis=1),
            np.stack([cols + 1, rows], axis=1),
            np.stack([cols, rows + 1], axis=1),
            np.stack([cols + 1, rows + 1], axis=1),
        ]
    ).astype(float)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return None
    verts = pts[hull.vertices]
    if len(verts) > max_vertices:
        keep = np.sort(rng.choice(len(verts), size=max_vertices, replace=False))
        verts = verts[keep]
    if len(verts) < 3:
        return None
    return [(float(x), float(y)) for x, y in verts]
