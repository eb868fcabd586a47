"""Metric suite and benchmark evaluation.

All ranking metrics are class-balanced: cells are reweighted so both classes
contribute equal total weight, which puts constant predictors at exactly 50.
Average precision integrates the weighted precision-recall curve with
trapezoids (flat extension to zero recall). Edge AP ranks cells by the
highest threshold at which the thresholded score map disagrees with a
4-neighbor, compared against the ground-truth boundary cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import DatasetManifest, load_floorplan, read_sample
from .floorplan import canvas_world_crop, world_to_canvas_coords
from .model import aggregate, predict_interior, predict_rooms
from .render import project_depth_to_ground, render_depth
from .training import load_checkpoint, sequence_losses

NEG_INF_SCORE = -1e30


class UndefinedMetricError(ValueError):
    pass


def balance_weights(gt) -> np.ndarray:
    """Per-cell weights giving positives and negatives equal total mass."""
    gt = np.asarray(gt).astype(bool)
    w = np.zeros(gt.shape, dtype=np.float64)
    n_pos = int(gt.sum())
    n_neg = gt.size - n_pos
    if n_pos:
        w[gt] = 0.5 / n_pos
    if n_neg:
        w[~gt] = 0.5 / n_neg
    return w


def average_precision(scores, gt, weights) -> float:
    """Area under the weighted PR curve over all thresholds, in percent."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    gt = np.asarray(gt).ravel().astype(bool)
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if gt.all() or not gt.any():
        raise UndefinedMetricError("AP needs both classes in the ground truth")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(weights[order] * gt[order])
    fp = np.cumsum(weights[order] * ~gt[order])
    last = np.append(np.nonzero(np.diff(s))[0], s.size - 1)
    recall = tp[last] / tp[-1]
    precision = tp[last] / (tp[last] + fp[last])
    r = np.concatenate([[0.0], recall])
    p = np.concatenate([[precision[0]], precision])
    return float(100.0 * np.sum((r[1:] - r[:-1]) * (p[1:] + p[:-1]) / 2.0))


def balanced_accuracy(pred, gt) -> float:
    """Mean of true-positive and true-negative rates, in percent. With a
    one-class ground truth this is the rate on the present class."""
    pred = np.asarray(pred).ravel().astype(bool)
    gt = np.asarray(gt).ravel().astype(bool)
    rates = []
    if gt.any():
        rates.append((pred & gt).sum() / gt.sum())
    if (~gt).any():
        rates.append((~pred & ~gt).sum() / (~gt).sum())
    return float(100.0 * np.mean(rates))


def gt_edge_map(gt) -> np.ndarray:
    """Cells whose label differs from any 4-neighbor."""
    gt = np.asarray(gt).astype(np.int64)
    edges = np.zeros(gt.shape, dtype=bool)
    edges[:-1, :] |= gt[:-1, :] != gt[1:, :]
    edges[1:, :] |= gt[1:, :] != gt[:-1, :]
    edges[:, :-1] |= gt[:, :-1] != gt[:, 1:]
    edges[:, 1:] |= gt[:, 1:] != gt[:, :-1]
    return edges


def edge_scores(scores) -> np.ndarray:
    """Edge strength: the highest threshold at which the thresholded map makes
    the cell an edge, i.e. max over differing 4-neighbors of max(s_i, s_j).
    Cells with uniform neighborhoods rank strictly below everything else."""
    s = np.asarray(scores, dtype=np.float64)
    out = np.full(s.shape, -np.inf)
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        nbr = np.roll(s, shift, axis=axis)
        if axis == 0 and shift == 1:
            nbr[0, :] = s[0, :]
        elif axis == 0 and shift == -1:
            nbr[-1, :] = s[-1, :]
        elif axis == 1 and shift == 1:
            nbr[:, 0] = s[:, 0]
        else:
            nbr[:, -1] = s[:, -1]
        cand = np.where(nbr != s, np.maximum(s, nbr), -np.inf)
        out = np.maximum(out, cand)
    lowest = s.min() - 1.0
    return np.where(np.isneginf(out), lowest, out)


def edge_ap(scores, gt, region=None) -> float:
    """Class-balanced AP of the edge ranking against ground-truth edges.

    Edges are extracted on the full 2D arrays; ``region`` optionally
    restricts which cells are scored.
    """
    e = edge_scores(scores)
    ge = gt_edge_map(gt)
    if region is not None:
        region = np.asarray(region).astype(bool)
        e, ge = e[region], ge[region]
    return average_precision(e, ge, balance_weights(ge))


def room_mean_ap(room_probs, gt_room, interior_gt) -> tuple[np.ndarray, float]:
    """One-vs-rest balanced AP per room label over interior cells, averaged
    over labels with support (NaN for labels skipped)."""
    room_probs = np.asarray(room_probs, dtype=np.float64)
    gt_room = np.asarray(gt_room)
    cells = np.asarray(interior_gt).astype(bool) & (gt_room > 0)
    num_rooms = room_probs.shape[0]
    per_room = np.full(num_rooms, np.nan)
    labels = gt_room[cells]
    for k in range(1, num_rooms + 1):
        pos = labels == k
        if not pos.any() or pos.all():
            continue
        per_room[k - 1] = average_precision(room_probs[k - 1][cells], pos,
                                            balance_weights(pos))
    mean = float(np.nanmean(per_room)) if np.isfinite(per_room).any() else float("nan")
    return per_room, mean


def confusion_matrix(pred_rooms, gt_room, region) -> np.ndarray:
    """(num_rooms+1)^2 row-normalized confusion over ``region`` cells; rows
    without support stay zero."""
    pred = np.asarray(pred_rooms).astype(np.int64)
    gt = np.asarray(gt_room).astype(np.int64)
    region = np.asarray(region).astype(bool)
    n = int(max(pred.max(initial=0), gt.max(initial=0))) + 1
    counts = np.zeros((n, n), dtype=np.float64)
    np.add.at(counts, (gt[region], pred[region]), 1.0)
    sums = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


@dataclass
class MetricReport:
    trajectory_length: int
    scoring_region: str
    ap: float
    acc: float
    edge_ap: float
    per_room_ap: list
    mean_room_ap: float
    interior_only_acc: float
    projected_depth_acc: float
    n_samples: int
    confusion: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "trajectory_length": self.trajectory_length,
            "scoring_region": self.scoring_region,
            "AP": self.ap, "Acc": self.acc, "EdgeAP": self.edge_ap,
            "per_room_AP": self.per_room_ap, "mean_room_AP": self.mean_room_ap,
            "baselines": {"interior_only_Acc": self.interior_only_acc,
                          "projected_depth_Acc": self.projected_depth_acc},
            "n_samples": self.n_samples,
            "confusion": self.confusion,
        }


def splat_canvas_to_world(values: np.ndarray, canvas, first_pose, res, dims,
                          fill: float) -> np.ndarray:
    """Max-splat canvas cell values into the floorplan grid; uncovered world
    cells keep ``fill``."""
    coords = world_to_canvas_coords(canvas, first_pose, res)
    cols = np.floor(coords[..., 0]).astype(np.int64)
    rows = np.floor(coords[..., 1]).astype(np.int64)
    inside = (rows >= 0) & (rows < dims[0]) & (cols >= 0) & (cols < dims[1])
    out = np.full(dims, fill, dtype=np.float64)
    np.maximum.at(out, (rows[inside], cols[inside]), values[inside])
    return out


def _evaluate_sample(net, seq, fp, region: str, device: str) -> dict:
    with torch.no_grad():
        scores, _, _ = sequence_losses(net, seq, device)
    pred = aggregate(scores)
    interior_scores = pred["scores"][0].cpu().numpy().astype(np.float64)
    pred_int = predict_interior(pred)
    pred_room = predict_rooms(pred)
    room_probs = pred["p_room"].cpu().numpy().astype(np.float64)

    gt_int_canvas, gt_room_canvas = canvas_world_crop(fp, seq.canvas, seq.poses[0])
    depth_union = np.zeros(seq.canvas, dtype=np.uint8)
    for pose in seq.poses:
        scan = render_depth(fp, pose)
        depth_union |= project_depth_to_ground(scan, pose, seq.canvas, fp.cell_size,
                                               first_pose=seq.poses[0])

    if region == "window_union":
        mask = seq.valid.max(axis=0).astype(bool)
        flat = {
            "scores": interior_scores[mask], "gt": gt_int_canvas[mask].astype(bool),
            "pred_int": pred_int[mask].astype(bool),
            "depth": depth_union[mask].astype(bool),
        }
        out = {
            "edge_args": (interior_scores, gt_int_canvas, mask),
            "room_args": (room_probs, gt_room_canvas * mask, gt_int_canvas * mask),
            "conf_args": (pred_room, gt_room_canvas, mask),
        }
    else:  # full_house: score the entire floorplan grid
        dims = fp.dims
        world_scores = splat_canvas_to_world(interior_scores, seq.canvas, seq.poses[0],
                                             fp.cell_size, dims, NEG_INF_SCORE)
        world_pred_int = splat_canvas_to_world(pred_int.astype(np.float64), seq.canvas,
                                               seq.poses[0], fp.cell_size, dims, 0.0) > 0.5
        world_room = splat_canvas_to_world(pred_room.astype(np.float64), seq.canvas,
                                           seq.poses[0], fp.cell_size, dims, 0.0)
        world_probs = np.stack([
            splat_canvas_to_world(room_probs[k], seq.canvas, seq.poses[0],
                                  fp.cell_size, dims, 0.0)
            for k in range(room_probs.shape[0])
        ])
        world_depth = splat_canvas_to_world(depth_union.astype(np.float64), seq.canvas,
                                            seq.poses[0], fp.cell_size, dims, 0.0) > 0.5
        full = np.ones(dims, dtype=bool)
        flat = {
            "scores": world_scores[full], "gt": fp.interior_grid.astype(bool)[full],
            "pred_int": world_pred_int[full], "depth": world_depth[full],
        }
        out = {
            "edge_args": (world_scores, fp.interior_grid, None),
            "room_args": (world_probs, fp.room_grid, fp.interior_grid),
            "conf_args": (world_room.astype(np.int64), fp.room_grid, full),
        }

    gt_flat = flat["gt"]
    metrics = {"defined": not (gt_flat.all() or not gt_flat.any())}
    if metrics["defined"]:
        w = balance_weights(gt_flat)
        metrics["ap"] = average_precision(flat["scores"], gt_flat, w)
        ge = gt_edge_map(out["edge_args"][1])
        reg = out["edge_args"][2]
        ge_sel = ge[reg] if reg is not None else ge
        if ge_sel.any() and not ge_sel.all():
            metrics["edge_ap"] = edge_ap(*out["edge_args"])
    metrics["acc"] = balanced_accuracy(flat["pred_int"], gt_flat)
    metrics["interior_only_acc"] = balanced_accuracy(np.ones_like(gt_flat), gt_flat)
    metrics["depth_acc"] = balanced_accuracy(flat["depth"], gt_flat)
    metrics["per_room"], metrics["mean_room"] = room_mean_ap(*out["room_args"])
    metrics["confusion_counts"] = confusion_matrix(*out["conf_args"])
    return metrics


def evaluate_checkpoint(checkpoint, data_root, split: str = "test",
                        lengths=(1, 2, 4, 8, 16), region: str = "window_union",
                        setting: str = "dev_gen", device: str = "cpu",
                        max_samples: int | None = None) -> dict[int, MetricReport]:
    """Run the model and the baselines over stored evaluation trajectories."""
    if isinstance(checkpoint, (str, Path)):
        net, _, _, _ = load_checkpoint(checkpoint)
    else:
        net = checkpoint
    net.eval()
    manifest = DatasetManifest.load(data_root)
    if split not in manifest.samples or not manifest.samples[split]:
        raise ValueError(f"split {split!r} missing from dataset {data_root}")
    num_rooms = net.cfg.num_rooms
    reports = {}
    for t_v in lengths:
        dirs = manifest.sample_dirs(data_root, split, setting=setting, t_v=t_v)
        if max_samples:
            dirs = dirs[:max_samples]
        if not dirs:
            continue
        rows = []
        conf_sum = np.zeros((num_rooms + 1, num_rooms + 1))
        for d in dirs:
            seq = read_sample(d)
            fp = load_floorplan(data_root, split, seq.env_id)
            m = _evaluate_sample(net, seq, fp, region, device)
            rows.append(m)
            c = m["confusion_counts"]
            conf_sum[: c.shape[0], : c.shape[1]] += c
        ap = [r["ap"] for r in rows if "ap" in r]
        eap = [r["edge_ap"] for r in rows if "edge_ap" in r]
        stacked = np.stack([r["per_room"] for r in rows])
        support = np.isfinite(stacked).sum(axis=0)
        per_room = np.where(support > 0,
                            np.nansum(stacked, axis=0) / np.maximum(support, 1), np.nan)
        sums = conf_sum.sum(axis=1, keepdims=True)
        conf = np.divide(conf_sum, sums, out=np.zeros_like(conf_sum), where=sums > 0)
        reports[t_v] = MetricReport(
            trajectory_length=t_v, scoring_region=region,
            ap=float(np.mean(ap)) if ap else float("nan"),
            acc=float(np.mean([r["acc"] for r in rows])),
            edge_ap=float(np.mean(eap)) if eap else float("nan"),
            per_room_ap=[None if not np.isfinite(v) else float(v) for v in per_room],
            mean_room_ap=float(np.nanmean(per_room)) if np.isfinite(per_room).any()
            else float("nan"),
            interior_only_acc=float(np.mean([r["interior_only_acc"] for r in rows])),
            projected_depth_acc=float(np.mean([r["depth_acc"] for r in rows])),
            n_samples=len(rows),
            confusion=[[float(v) for v in row] for row in conf],
        )
    return reports


def report_table(reports: dict[int, MetricReport], model_name: str = "AV-Map") -> str:
    """Plain-text table with one block per trajectory length."""
    lines = []
    for t_v, rep in sorted(reports.items()):
        lines.append(f"t_V = {t_v}  ({rep.scoring_region}, {rep.n_samples} trajectories)")
        lines.append(f"{'':24s}{'AP':>8s}{'Acc.':>8s}{'Edge AP':>9s}")
        lines.append(f"{'Interior-only':24s}{'NA':>8s}{rep.interior_only_acc:8.2f}{'NA':>9s}")
        lines.append(f"{'Projected Depth':24s}{'NA':>8s}{rep.projected_depth_acc:8.2f}{'NA':>9s}")
        lines.append(f"{model_name:24s}{rep.ap:8.2f}{rep.acc:8.2f}{rep.edge_ap:9.2f}")
        if np.isfinite(rep.mean_room_ap):
            lines.append(f"{'mean room AP':24s}{rep.mean_room_ap:8.2f}")
        lines.append("")
    return "\n".join(lines)


def write_report(reports: dict[int, MetricReport], path) -> None:
    doc = {str(t): rep.to_json() for t, rep in reports.items()}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))
