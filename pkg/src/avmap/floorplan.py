"""Procedural multi-room floorplans, camera trajectories, and map alignment.

A floorplan is a pair of top-down grids at a fixed metric resolution: a binary
interior grid (1 = floor/furniture/objects, 0 = walls and exterior) and a room
grid holding one semantic label per interior cell (0 elsewhere). Environments
are generated by recursive axis-aligned splits with 1-cell walls and 2-cell
door openings, which keeps the interior a single connected component.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grids import compute_canvas, rotation_matrix, warp_nearest

NUM_ROOM_LABELS = 13
ROTATION_STEP_DEG = 30
POSITION_GRID_M = 1.0


class GenerationInfeasibleError(ValueError):
    pass


class NoValidStartError(ValueError):
    pass


class InvalidPoseError(ValueError):
    pass


@dataclass(frozen=True)
class Pose:
    """Camera pose: position in meters, heading in degrees.

    Headings are multiples of 30 degrees; positions lie on the 1 m grid of
    meter-block centers (i + 0.5, j + 0.5).
    """
    x: float
    y: float
    theta: float

    def forward(self) -> tuple[float, float]:
        t = math.radians(self.theta)
        return (math.cos(t), math.sin(t))


@dataclass
class RoomSpec:
    label: int
    extent: tuple[int, int, int, int]  # (row0, col0, row1, col1), half-open
    door_cells: list[tuple[int, int]] = field(default_factory=list)
    sound_anchor: tuple[int, int] = (0, 0)


@dataclass
class Floorplan:
    interior_grid: np.ndarray  # uint8, HxW
    room_grid: np.ndarray      # uint8, HxW, values in {0..NUM_ROOM_LABELS}
    cell_size: float
    rooms: list[RoomSpec]
    seed: int

    @property
    def dims(self) -> tuple[int, int]:
        return self.interior_grid.shape

    def cell_at(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor(y / self.cell_size)), int(math.floor(x / self.cell_size)))

    def in_bounds(self, row: int, col: int) -> bool:
        h, w = self.interior_grid.shape
        return 0 <= row < h and 0 <= col < w

    def is_interior_pos(self, x: float, y: float) -> bool:
        row, col = self.cell_at(x, y)
        return self.in_bounds(row, col) and bool(self.interior_grid[row, col])

    def room_label_pos(self, x: float, y: float) -> int:
        row, col = self.cell_at(x, y)
        if not self.in_bounds(row, col):
            return 0
        return int(self.room_grid[row, col])

    def interior_bbox_m(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) in meters of the tight interior bounding box."""
        rows, cols = np.nonzero(self.interior_grid)
        if rows.size == 0:
            raise ValueError("floorplan has no interior cells")
        return (cols.min() * self.cell_size, rows.min() * self.cell_size,
                (cols.max() + 1) * self.cell_size, (rows.max() + 1) * self.cell_size)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        doc = {
            "cell_size": self.cell_size,
            "dims": list(self.interior_grid.shape),
            "seed": self.seed,
            "rooms": [
                {
                    "label": r.label,
                    "extent": list(r.extent),
                    "doors": [list(d) for d in r.door_cells],
                    "anchor": list(r.sound_anchor),
                }
                for r in self.rooms
            ],
        }
        (directory / "floorplan.json").write_text(json.dumps(doc, sort_keys=True, indent=1))
        self.interior_grid.astype(np.uint8).tofile(directory / "interior.bin")
        self.room_grid.astype(np.uint8).tofile(directory / "rooms.bin")

    @classmethod
    def load(cls, directory) -> "Floorplan":
        directory = Path(directory)
        doc = json.loads((directory / "floorplan.json").read_text())
        h, w = doc["dims"]
        interior = np.fromfile(directory / "interior.bin", dtype=np.uint8)
        rooms_grid = np.fromfile(directory / "rooms.bin", dtype=np.uint8)
        if interior.size != h * w or rooms_grid.size != h * w:
            raise ValueError(f"floorplan grids in {directory} do not match dims {h}x{w}")
        rooms = [
            RoomSpec(label=r["label"], extent=tuple(r["extent"]),
                     door_cells=[tuple(d) for d in r["doors"]],
                     sound_anchor=tuple(r["anchor"]))
            for r in doc["rooms"]
        ]
        return cls(interior.reshape(h, w), rooms_grid.reshape(h, w),
                   doc["cell_size"], rooms, doc["seed"])


@dataclass
class Trajectory:
    poses: list[Pose]
    relative_poses: list[tuple[float, float, float]]

    def __len__(self) -> int:
        return len(self.poses)


@dataclass
class GenConfig:
    rows: int = 80
    cols: int = 80
    cell_size: float = 0.25
    min_rooms: int = 3
    max_rooms: int = 8
    num_labels: int = NUM_ROOM_LABELS
    min_room_side: int = 8   # cells; 2 m at the default resolution
    door_width: int = 2      # cells


def generate_floorplan(seed: int, config: GenConfig | None = None) -> Floorplan:
    """Generate a multi-room floorplan by recursive axis-aligned splits.

    Deterministic given ``seed``. Raises GenerationInfeasibleError when the
    grid cannot host ``config.min_rooms`` rooms at the minimum room size.
    """
    cfg = config or GenConfig()
    rng = np.random.default_rng(seed)
    if cfg.max_rooms > cfg.num_labels:
        raise GenerationInfeasibleError(
            f"room count {cfg.max_rooms} exceeds label vocabulary {cfg.num_labels}")

    inner = (1, 1, cfg.rows - 1, cfg.cols - 1)  # interior region inside the wall ring
    if inner[2] - inner[0] < 1 or inner[3] - inner[1] < 1:
        raise GenerationInfeasibleError(
            f"{cfg.rows}x{cfg.cols} grid has no interior inside the wall ring")
    target = int(rng.integers(cfg.min_rooms, cfg.max_rooms + 1))

    leaves = [inner]
    splits = []  # (axis, line, lo, hi): wall cells at grid[line, lo:hi] or grid[lo:hi, line]
    while len(leaves) < target:
        splittable = [
            i for i, (r0, c0, r1, c1) in enumerate(leaves)
            if max(r1 - r0, c1 - c0) >= 2 * cfg.min_room_side + 1
        ]
        if not splittable:
            break
        areas = [(leaves[i][2] - leaves[i][0]) * (leaves[i][3] - leaves[i][1])
                 for i in splittable]
        idx = splittable[int(np.argmax(areas))]
        r0, c0, r1, c1 = leaves.pop(idx)
        h, w = r1 - r0, c1 - c0
        if w >= h and w >= 2 * cfg.min_room_side + 1:
            k = int(rng.integers(c0 + cfg.min_room_side, c1 - cfg.min_room_side))
            leaves.append((r0, c0, r1, k))
            leaves.append((r0, k + 1, r1, c1))
            splits.append(("col", k, r0, r1))
        else:
            k = int(rng.integers(r0 + cfg.min_room_side, r1 - cfg.min_room_side))
            leaves.append((r0, c0, k, c1))
            leaves.append((k + 1, c0, r1, c1))
            splits.append(("row", k, c0, c1))

    if len(leaves) < cfg.min_rooms:
        raise GenerationInfeasibleError(
            f"grid {cfg.rows}x{cfg.cols} hosts only {len(leaves)} rooms, "
            f"config requires at least {cfg.min_rooms}")

    labels = rng.choice(np.arange(1, cfg.num_labels + 1), size=len(leaves), replace=False)
    interior = np.zeros((cfg.rows, cfg.cols), dtype=np.uint8)
    room = np.zeros((cfg.rows, cfg.cols), dtype=np.uint8)
    rooms = []
    for (r0, c0, r1, c1), label in zip(leaves, labels):
        interior[r0:r1, c0:c1] = 1
        room[r0:r1, c0:c1] = label
        rooms.append(RoomSpec(label=int(label), extent=(r0, c0, r1, c1)))

    by_label = {spec.label: spec for spec in rooms}

    # One door per split wall: a run of door_width consecutive wall cells with
    # interior on both sides, carved open and labeled after one adjacent room.
    for axis, line, lo, hi in splits:
        candidates = []
        for pos in range(lo, hi - cfg.door_width + 1):
            run = range(pos, pos + cfg.door_width)
            if axis == "col":
                ok = all(interior[r, line - 1] and interior[r, line + 1] for r in run)
            else:
                ok = all(interior[line - 1, c] and interior[line + 1, c] for c in run)
            if ok:
                candidates.append(pos)
        if not candidates:
            raise GenerationInfeasibleError("no door position on a split wall")
        pos = int(candidates[int(rng.integers(len(candidates)))])
        for off in range(cfg.door_width):
            if axis == "col":
                cell, nbr = (pos + off, line), (pos + off, line - 1)
                far = (pos + off, line + 1)
            else:
                cell, nbr = (line, pos + off), (line - 1, pos + off)
                far = (line + 1, pos + off)
            interior[cell] = 1
            room[cell] = room[nbr]
            by_label[int(room[nbr])].door_cells.append(cell)
            by_label[int(room[far])].door_cells.append(cell)

    for spec in rooms:
        r0, c0, r1, c1 = spec.extent
        spec.sound_anchor = (int(rng.integers(r0, r1)), int(rng.integers(c0, c1)))

    fp = Floorplan(interior, room, cfg.cell_size, rooms, seed)
    assert _interior_connected(fp), "generator produced a disconnected interior"
    return fp


def _interior_connected(fp: Floorplan) -> bool:
    interior = fp.interior_grid
    start = np.argwhere(interior)
    if start.size == 0:
        return False
    seen = np.zeros_like(interior, dtype=bool)
    stack = [tuple(start[0])]
    seen[tuple(start[0])] = True
    h, w = interior.shape
    while stack:
        r, c = stack.pop()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and interior[nr, nc] and not seen[nr, nc]:
                seen[nr, nc] = True
                stack.append((nr, nc))
    return bool(np.all(seen[interior.astype(bool)]))


def grid_positions(fp: Floorplan) -> list[tuple[float, float]]:
    """All 1 m grid positions (meter-block centers) whose cell is interior."""
    h, w = fp.dims
    out = []
    for j in range(int(w * fp.cell_size / POSITION_GRID_M)):
        for i in range(int(h * fp.cell_size / POSITION_GRID_M)):
            x = j * POSITION_GRID_M + 0.5
            y = i * POSITION_GRID_M + 0.5
            if fp.is_interior_pos(x, y):
                out.append((x, y))
    return out


def _forward_clear(fp: Floorplan, pose: Pose) -> bool:
    """True when the 1 m step ahead lands on the grid and crosses no wall."""
    dx, dy = pose.forward()
    nx, ny = pose.x + dx * POSITION_GRID_M, pose.y + dy * POSITION_GRID_M
    if not fp.is_interior_pos(nx, ny):
        return False
    steps = int(round(POSITION_GRID_M / fp.cell_size))
    for k in range(1, steps + 1):
        if not fp.is_interior_pos(pose.x + dx * k * fp.cell_size,
                                  pose.y + dy * k * fp.cell_size):
            return False
    return True


def relative_pose(first: Pose, pose: Pose) -> tuple[float, float, float]:
    """Displacement from the first pose, expressed in ``pose``'s own heading
    frame, plus relative heading. This is the frame in which the
    pad/translate/rotate alignment composes into a consistent first-step map.
    """
    rot = rotation_matrix(-pose.theta)
    dx, dy = pose.x - first.x, pose.y - first.y
    rx = rot[0, 0] * dx + rot[0, 1] * dy
    ry = rot[1, 0] * dx + rot[1, 1] * dy
    return (float(rx), float(ry), float((pose.theta - first.theta) % 360.0))


def sample_trajectory(fp: Floorplan, t_v: int, seed: int) -> Trajectory:
    """Random walk on the 1 m position grid with 30 degree rotations.

    Each step moves 1 m in the facing direction when that step stays inside
    the interior (only possible from axis-aligned headings), otherwise turns
    +-30 degrees. Deterministic given ``seed``.
    """
    if t_v < 1:
        raise ValueError(f"t_v must be >= 1, got {t_v}")
    rng = np.random.default_rng(seed)
    starts = grid_positions(fp)
    if not starts:
        raise NoValidStartError("no 1 m grid position lies inside the interior")
    x, y = starts[int(rng.integers(len(starts)))]
    theta = float(rng.integers(12) * ROTATION_STEP_DEG)
    poses = [Pose(x, y, theta)]
    while len(poses) < t_v:
        cur = poses[-1]
        can_move = cur.theta % 90.0 == 0.0 and _forward_clear(fp, cur)
        if can_move and rng.random() < 0.6:
            dx, dy = cur.forward()
            nxt = Pose(round(cur.x + dx * POSITION_GRID_M, 6),
                       round(cur.y + dy * POSITION_GRID_M, 6), cur.theta)
        else:
            sign = 1 if rng.random() < 0.5 else -1
            nxt = Pose(cur.x, cur.y, (cur.theta + sign * ROTATION_STEP_DEG) % 360.0)
        poses.append(nxt)
    rel = [relative_pose(poses[0], p) for p in poses]
    return Trajectory(poses=poses, relative_poses=rel)


def crop_ground_truth(fp: Floorplan, pose: Pose, h: int, w: int,
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth interior/room crops of the h x w cell window around the
    camera, in the camera's heading frame (world rotated by -theta).

    Cells outside the floorplan grid are 0 (exterior). Nearest-neighbor
    sampling keeps labels categorical.
    """
    if h % 2 or w % 2:
        raise ValueError(f"window dims must be even, got {h}x{w}")
    res = fp.cell_size
    rot = rotation_matrix(pose.theta)
    bc, br = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    ux = bc + 0.5 - w / 2.0
    uy = br + 0.5 - h / 2.0
    crow, ccol = fp.cell_at(pose.x, pose.y)
    px = (ccol + 0.5) + rot[0, 0] * ux + rot[0, 1] * uy
    py = (crow + 0.5) + rot[1, 0] * ux + rot[1, 1] * uy
    cols = np.floor(px).astype(np.int64)
    rows = np.floor(py).astype(np.int64)
    hh, ww = fp.dims
    inside = (rows >= 0) & (rows < hh) & (cols >= 0) & (cols < ww)
    y_int = np.zeros((h, w), dtype=np.uint8)
    y_room = np.zeros((h, w), dtype=np.uint8)
    y_int[inside] = fp.interior_grid[rows[inside], cols[inside]]
    y_room[inside] = fp.room_grid[rows[inside], cols[inside]]
    return y_int, y_room


def align_ground_truth(y_t: np.ndarray, r_t: tuple[float, float, float], res: float,
                       canvas: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Align a per-step map into the sequence canvas: zero-pad, translate by
    (x/res, y/res) cells, rotate by theta about the canvas center.

    Returns the aligned map and a mask of canvas cells covered by the
    original window (padding cells carry mask 0 and must be ignored).
    """
    if res <= 0:
        from .grids import InvalidResolutionError
        raise InvalidResolutionError(f"resolution must be positive, got {res}")
    x, y, theta = r_t
    aligned = warp_nearest(y_t, canvas, x / res, y / res, theta, fill=0)
    ones = np.ones(y_t.shape, dtype=np.uint8)
    valid = warp_nearest(ones, canvas, x / res, y / res, theta, fill=0)
    return aligned, valid


def sequence_canvas(h: int, w: int, rel_poses, res: float) -> tuple[int, int]:
    """Canvas dims for a whole sequence (see grids.compute_canvas)."""
    return compute_canvas(h, w, rel_poses, res)


def world_to_canvas_coords(canvas: tuple[int, int], first_pose: Pose,
                           res: float) -> np.ndarray:
    """Continuous floorplan coordinates (cell units) of each canvas cell.

    The canvas frame is centered on the first pose's cell with its axes
    rotated by the first heading; this is the frame every aligned per-step
    map lives in. Shape (H', W', 2) holding (x_cells, y_cells).
    """
    ch, cw = canvas
    rot = rotation_matrix(first_pose.theta)
    qc, qr = np.meshgrid(np.arange(cw, dtype=np.float64), np.arange(ch, dtype=np.float64))
    ux = qc + 0.5 - cw / 2.0
    uy = qr + 0.5 - ch / 2.0
    crow, ccol = (int(math.floor(first_pose.y / res)), int(math.floor(first_pose.x / res)))
    px = (ccol + 0.5) + rot[0, 0] * ux + rot[0, 1] * uy
    py = (crow + 0.5) + rot[1, 0] * ux + rot[1, 1] * uy
    return np.stack([px, py], axis=-1)


def canvas_world_crop(fp: Floorplan, canvas: tuple[int, int], first_pose: Pose,
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Direct world-frame ground truth on the sequence canvas (single
    resample; used for evaluation and visualization)."""
    coords = world_to_canvas_coords(canvas, first_pose, fp.cell_size)
    cols = np.floor(coords[..., 0]).astype(np.int64)
    rows = np.floor(coords[..., 1]).astype(np.int64)
    hh, ww = fp.dims
    inside = (rows >= 0) & (rows < hh) & (cols >= 0) & (cols < ww)
    g_int = np.zeros(canvas, dtype=np.uint8)
    g_room = np.zeros(canvas, dtype=np.uint8)
    g_int[inside] = fp.interior_grid[rows[inside], cols[inside]]
    g_room[inside] = fp.room_grid[rows[inside], cols[inside]]
    return g_int, g_room
