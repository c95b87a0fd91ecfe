"""Planar geometry helpers: oriented rectangles and overlap tests."""

from __future__ import annotations

import numpy as np


def rect_corners(cx: float, cy: float, heading: float, length: float, width: float) -> np.ndarray:
    """Corners of an oriented rectangle, counterclockwise, shape (4, 2)."""
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def rects_overlap(corners_a: np.ndarray, corners_b: np.ndarray) -> bool:
    """Separating-axis overlap test for two convex quadrilaterals.

    Touching counts as overlap. Symmetric in its arguments: the candidate
    axes are the edge normals of both rectangles and each projection test
    treats the two corner sets identically.
    """
    for corners in (corners_a, corners_b):
        edges = np.roll(corners, -1, axis=0) - corners
        # Two parallel edge pairs per rectangle; two unique normals suffice.
        for edge in edges[:2]:
            axis = np.array([-edge[1], edge[0]])
            pa = corners_a @ axis
            pb = corners_b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True
