"""Grid and pose geometry shared across the pipeline.

Conventions used everywhere in this package:

* World positions are ``(x, y)`` in meters; ``x`` runs along array columns,
  ``y`` along array rows, so grids are indexed ``grid[row, col]``.
* Cell ``(r, c)`` of a grid with resolution ``res`` covers
  ``[c*res, (c+1)*res) x [r*res, (r+1)*res)``; its center is
  ``((c+0.5)*res, (r+0.5)*res)``.
* Headings are degrees; the forward direction of heading ``theta`` is
  ``(cos(theta), sin(theta))`` in ``(x, y)``.
* "Cell units" means continuous coordinates measured in cells, where the
  center of cell index ``i`` sits at ``i + 0.5``.
"""

from __future__ import annotations

import math

import numpy as np

SQRT2 = math.sqrt(2.0)


_EXACT_ROT = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}


def rotation_matrix(theta_deg: float) -> np.ndarray:
    """2x2 rotation acting on (x, y) column vectors.

    Multiples of 90 degrees use exact entries so that warps at those angles
    are exact cell permutations rather than floor()-fragile float rotations.
    """
    r = theta_deg % 360.0
    if r in _EXACT_ROT:
        c, s = _EXACT_ROT[r]
    else:
        c, s = math.cos(math.radians(r)), math.sin(math.radians(r))
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def round_up_multiple(n: int, m: int) -> int:
    return ((n + m - 1) // m) * m


def alignment_padding(max_disp_cells: float, max_feat_dim: int) -> int:
    """Per-side padding that keeps any translated+rotated map inside the canvas.

    ``max_disp_cells`` is the largest |x|/res or |y|/res over the sequence,
    ``max_feat_dim`` the larger spatial dimension of the map being aligned.
    """
    return int(math.ceil(max_disp_cells)) + int(math.ceil(max_feat_dim * SQRT2))


def compute_canvas(h: int, w: int, rel_poses: list[tuple[float, float, float]],
                   res: float) -> tuple[int, int]:
    """Canvas dims (H', W') for aligning h x w maps over a whole sequence.

    Computed once per sequence from all relative poses, then rounded up to a
    multiple of 8 so the stride-2 encoder and x2 decoder shapes compose.
    """
    if res <= 0:
        raise InvalidResolutionError(f"resolution must be positive, got {res}")
    max_disp = 0.0
    for x, y, _ in rel_poses:
        max_disp = max(max_disp, abs(x) / res, abs(y) / res)
    pad = alignment_padding(max_disp, max(h, w))
    return (round_up_multiple(h + 2 * pad, 8), round_up_multiple(w + 2 * pad, 8))


class InvalidResolutionError(ValueError):
    pass


def warp_coords(out_hw: tuple[int, int], in_hw: tuple[int, int],
                tx_cells: float, ty_cells: float, theta_deg: float) -> np.ndarray:
    """Continuous input coordinates (cell units) for each output cell.

    Inverse map of: center the input in the output canvas, translate its
    content by ``(tx, ty)`` cells, then rotate by ``theta`` about the canvas
    center. Returns an array of shape (out_h, out_w, 2) holding (x, y).
    """
    out_h, out_w = out_hw
    in_h, in_w = in_hw
    qc, qr = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    qx = qc + 0.5 - out_w / 2.0
    qy = qr + 0.5 - out_h / 2.0
    rot = rotation_matrix(-theta_deg)
    px = rot[0, 0] * qx + rot[0, 1] * qy + in_w / 2.0 - tx_cells
    py = rot[1, 0] * qx + rot[1, 1] * qy + in_h / 2.0 - ty_cells
    return np.stack([px, py], axis=-1)


def warp_nearest(arr: np.ndarray, out_hw: tuple[int, int], tx_cells: float,
                 ty_cells: float, theta_deg: float, fill=0) -> np.ndarray:
    """Pad/translate/rotate a label map onto a canvas with nearest-neighbor
    sampling (labels stay categorical). Cells mapping outside get ``fill``."""
    coords = warp_coords(out_hw, arr.shape[:2], tx_cells, ty_cells, theta_deg)
    cols = np.floor(coords[..., 0]).astype(np.int64)
    rows = np.floor(coords[..., 1]).astype(np.int64)
    inside = (rows >= 0) & (rows < arr.shape[0]) & (cols >= 0) & (cols < arr.shape[1])
    out = np.full(out_hw, fill, dtype=arr.dtype)
    out[inside] = arr[rows[inside], cols[inside]]
    return out


def traverse_cells(p0: tuple[float, float], p1: tuple[float, float], res: float):
    """Yield (row, col, t_entry) for every grid cell the segment p0->p1 passes
    through, in order. ``t_entry`` is the distance in meters from p0 at which
    the segment enters the cell (0 for the starting cell). Cells may lie
    outside any particular grid; callers bound-check.

    Standard incremental grid traversal; robust to axis-aligned segments.
    """
    x0, y0 = p0[0] / res, p0[1] / res
    x1, y1 = p1[0] / res, p1[1] / res
    dx, dy = x1 - x0, y1 - y0
    length = math.hypot(dx, dy) * res
    col, row = int(math.floor(x0)), int(math.floor(y0))
    end_col, end_row = int(math.floor(x1)), int(math.floor(y1))
    yield row, col, 0.0
    if length == 0.0:
        return
    inv_len = 1.0 / math.hypot(dx, dy)
    step_c = 1 if dx > 0 else -1
    step_r = 1 if dy > 0 else -1
    # Parametric distance (in cell units along the segment) to the next
    # vertical/horizontal cell boundary, and per-cell increments.
    if dx != 0:
        t_max_x = ((col + (step_c > 0)) - x0) / dx
        t_dx = abs(1.0 / dx)
    else:
        t_max_x, t_dx = math.inf, math.inf
    if dy != 0:
        t_max_y = ((row + (step_r > 0)) - y0) / dy
        t_dy = abs(1.0 / dy)
    else:
        t_max_y, t_dy = math.inf, math.inf
    # Guard against pathological float loops: the cell count along a segment
    # is bounded by the Manhattan cell distance.
    max_steps = abs(end_col - col) + abs(end_row - row) + 4
    for _ in range(max_steps):
        if col == end_col and row == end_row:
            return
        if t_max_x < t_max_y:
            t = t_max_x
            t_max_x += t_dx
            col += step_c
        else:
            t = t_max_y
            t_max_y += t_dy
            row += step_r
        if t > 1.0:
            return
        yield row, col, t * length
