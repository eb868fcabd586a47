"""Egocentric rendering by 2D raycasting: toy RGB frames, per-column depth,
and the projected-depth occupancy baseline.

Frames are 3x64x64 with one ray per image column over a 90 degree field of
view. Each column shows the first wall hit, colored by the room adjacent to
the hit and vertically scaled by inverse distance; fixed gray tones fill the
ceiling and floor. Depth is the same raycast's per-column hit distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .floorplan import Floorplan, InvalidPoseError, Pose, world_to_canvas_coords
from .grids import traverse_cells

FRAME_SIZE = 64
DEFAULT_FOV_DEG = 90.0
DEFAULT_MAX_RANGE = 10.0
CEILING_GRAY = 0.35
FLOOR_GRAY = 0.55

# One fixed color per room label 1..13 (indexable by label-1), values in [0,1].
ROOM_PALETTE = np.array([
    (0.894, 0.102, 0.110), (0.216, 0.494, 0.722), (0.302, 0.686, 0.290),
    (0.596, 0.306, 0.639), (1.000, 0.498, 0.000), (0.969, 0.867, 0.200),
    (0.651, 0.337, 0.157), (0.969, 0.506, 0.749), (0.600, 0.600, 0.600),
    (0.090, 0.745, 0.812), (0.737, 0.741, 0.133), (0.478, 0.404, 0.933),
    (0.122, 0.471, 0.706),
])


@dataclass
class Frame:
    pixels: np.ndarray  # (3, 64, 64) float32 in [0, 1]
    pose: Pose


@dataclass
class DepthScan:
    distances: np.ndarray  # (64,) meters, one per image column
    max_range: float = DEFAULT_MAX_RANGE


def _column_angles(pose: Pose, fov_deg: float, n_cols: int) -> np.ndarray:
    """World heading of each column's ray, left edge of the image first."""
    half = fov_deg / 2.0
    offsets = half - (np.arange(n_cols) + 0.5) * fov_deg / n_cols
    return np.radians(pose.theta + offsets)


def cast_ray(fp: Floorplan, origin: tuple[float, float], angle_rad: float,
             max_range: float) -> tuple[float, int]:
    """Distance to the first wall cell along a ray, and the room label of the
    last interior cell in front of it (0 when nothing is hit in range)."""
    end = (origin[0] + math.cos(angle_rad) * (max_range + 1.0),
           origin[1] + math.sin(angle_rad) * (max_range + 1.0))
    h, w = fp.dims
    last_label = 0
    for row, col, t_entry in traverse_cells(origin, end, fp.cell_size):
        if t_entry > max_range:
            break
        if not (0 <= row < h and 0 <= col < w):
            break
        if fp.interior_grid[row, col] == 0:
            return max(t_entry, 1e-6), last_label
        last_label = int(fp.room_grid[row, col])
    return max_range, 0


def render_depth(fp: Floorplan, pose: Pose, fov: float = DEFAULT_FOV_DEG,
                 max_range: float = DEFAULT_MAX_RANGE) -> DepthScan:
    if not fp.is_interior_pos(pose.x, pose.y):
        raise InvalidPoseError(f"camera pose {(pose.x, pose.y)} is inside a wall")
    angles = _column_angles(pose, fov, FRAME_SIZE)
    distances = np.empty(FRAME_SIZE, dtype=np.float64)
    for i, ang in enumerate(angles):
        distances[i], _ = cast_ray(fp, (pose.x, pose.y), float(ang), max_range)
    return DepthScan(distances=distances, max_range=max_range)


def render_rgb(fp: Floorplan, pose: Pose, fov: float = DEFAULT_FOV_DEG,
               max_range: float = DEFAULT_MAX_RANGE) -> Frame:
    if not fp.is_interior_pos(pose.x, pose.y):
        raise InvalidPoseError(f"camera pose {(pose.x, pose.y)} is inside a wall")
    angles = _column_angles(pose, fov, FRAME_SIZE)
    pixels = np.empty((3, FRAME_SIZE, FRAME_SIZE), dtype=np.float32)
    pixels[:, : FRAME_SIZE // 2, :] = CEILING_GRAY
    pixels[:, FRAME_SIZE // 2:, :] = FLOOR_GRAY
    for i, ang in enumerate(angles):
        dist, label = cast_ray(fp, (pose.x, pose.y), float(ang), max_range)
        if label == 0:
            continue
        height = min(FRAME_SIZE, int(round(FRAME_SIZE / dist)))
        if height <= 0:
            continue
        top = (FRAME_SIZE - height) // 2
        color = ROOM_PALETTE[label - 1]
        pixels[:, top:top + height, i] = color[:, None]
    return Frame(pixels=pixels, pose=pose)


def project_depth_to_ground(scan: DepthScan, pose: Pose, canvas: tuple[int, int],
                            res: float, first_pose: Pose | None = None,
                            fov: float = DEFAULT_FOV_DEG) -> np.ndarray:
    """Binary canvas map of cells traversed by each depth ray, exclusive of
    the hit cell, aligned into the sequence canvas frame.

    The canvas frame is anchored at ``first_pose`` (the pose itself for a
    single step). Rays that end at max range mark the full traversed run.
    """
    anchor = first_pose or pose
    angles = _column_angles(pose, fov, scan.distances.shape[0])
    traversed: set[tuple[int, int]] = set()
    for ang, dist in zip(angles, scan.distances):
        if dist <= 0:
            continue
        end = (pose.x + math.cos(ang) * dist, pose.y + math.sin(ang) * dist)
        cells = list(traverse_cells((pose.x, pose.y), end, res))
        # drop the final cell: it is the wall hit unless the ray was clamped
        if dist < scan.max_range and len(cells) > 1:
            cells = cells[:-1]
        traversed.update((r, c) for r, c, _ in cells)
    coords = world_to_canvas_coords(canvas, anchor, res)
    cols = np.floor(coords[..., 0]).astype(np.int64)
    rows = np.floor(coords[..., 1]).astype(np.int64)
    if not traversed:
        return np.zeros(canvas, dtype=np.uint8)
    # membership test against the traversed set via packed cell ids
    offset = 1 << 20  # keeps negative row/col ids distinct
    ids = (rows + offset) * (offset * 2) + (cols + offset)
    wanted = np.array([(r + offset) * (offset * 2) + (c + offset) for r, c in traversed])
    return np.isin(ids, wanted).astype(np.uint8)
