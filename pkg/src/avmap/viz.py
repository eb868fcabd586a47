"""PNG map rendering: predicted-vs-truth interior maps and room-label maps.

Interior comparison legend: correct interior green, correct exterior black,
false interior red, missed interior blue. Room maps use the renderer's
13-color palette masked by the predicted interior, with camera positions
marked as green dots.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .dataset import VideoSequence, read_sample
from .floorplan import Floorplan, canvas_world_crop, Pose
from .grids import rotation_matrix
from .model import aggregate, predict_interior, predict_rooms
from .render import ROOM_PALETTE
from .training import load_checkpoint, sequence_losses

LEGEND = {
    "correct_interior": (0, 170, 0),
    "correct_exterior": (0, 0, 0),
    "false_interior": (220, 40, 40),
    "missed_interior": (60, 80, 230),
}
CAMERA_DOT = (0, 255, 0)


def interior_comparison_image(pred_int: np.ndarray, gt_int: np.ndarray,
                              scale: int = 4) -> np.ndarray:
    pred = pred_int.astype(bool)
    gt = gt_int.astype(bool)
    img = np.zeros((*pred.shape, 3), dtype=np.uint8)
    img[pred & gt] = LEGEND["correct_interior"]
    img[~pred & ~gt] = LEGEND["correct_exterior"]
    img[pred & ~gt] = LEGEND["false_interior"]
    img[~pred & gt] = LEGEND["missed_interior"]
    return np.kron(img, np.ones((scale, scale, 1), dtype=np.uint8))


def room_map_image(rooms: np.ndarray, camera_cells=(), scale: int = 4) -> np.ndarray:
    img = np.zeros((*rooms.shape, 3), dtype=np.uint8)
    for label in range(1, ROOM_PALETTE.shape[0] + 1):
        img[rooms == label] = (ROOM_PALETTE[label - 1] * 255).astype(np.uint8)
    img = np.kron(img, np.ones((scale, scale, 1), dtype=np.uint8))
    r_dot = max(1, scale)
    for (r, c) in camera_cells:
        rr = int(r * scale + scale // 2)
        cc = int(c * scale + scale // 2)
        img[max(0, rr - r_dot):rr + r_dot, max(0, cc - r_dot):cc + r_dot] = CAMERA_DOT
    return img


def camera_canvas_cells(seq: VideoSequence) -> list[tuple[int, int]]:
    """Canvas cell of each camera pose (inverse of the canvas->world map)."""
    first = seq.poses[0]
    res = seq.cell_size
    ch, cw = seq.canvas
    rot = rotation_matrix(-first.theta)
    c_cell = (math.floor(first.x / res) + 0.5, math.floor(first.y / res) + 0.5)
    out = []
    for p in seq.poses:
        dx = (p.x / res) - c_cell[0]
        dy = (p.y / res) - c_cell[1]
        ux = rot[0, 0] * dx + rot[0, 1] * dy + cw / 2.0
        uy = rot[1, 0] * dx + rot[1, 1] * dy + ch / 2.0
        out.append((int(math.floor(uy)), int(math.floor(ux))))
    return out


def render_maps(checkpoint, sample_dir, out_dir, device: str = "cpu",
                scale: int = 4) -> list[Path]:
    """Write interior and room map PNGs for one stored sample."""
    if isinstance(checkpoint, (str, Path)):
        net, _, _, _ = load_checkpoint(checkpoint)
    else:
        net = checkpoint
    net.eval()
    sample_dir = Path(sample_dir)
    seq = read_sample(sample_dir)
    fp = Floorplan.load(sample_dir.parent)
    with torch.no_grad():
        scores, _, _ = sequence_losses(net, seq, device)
    pred = aggregate(scores)
    pred_int = predict_interior(pred)
    pred_rooms = predict_rooms(pred)
    gt_int, gt_rooms = canvas_world_crop(fp, seq.canvas, seq.poses[0])

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cams = camera_canvas_cells(seq)
    outputs = []
    for name, img in (
        ("interior_pred_vs_gt.png", interior_comparison_image(pred_int, gt_int, scale)),
        ("rooms_pred.png", room_map_image(pred_rooms, cams, scale)),
        ("rooms_gt.png", room_map_image(gt_rooms * gt_int, cams, scale)),
    ):
        path = out_dir / name
        Image.fromarray(img).save(path)
        outputs.append(path)
    return outputs
