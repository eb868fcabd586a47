"""Independent brute-force oracles used by the test suite.

These deliberately re-derive expected values through different algorithms
than the package implementations (recursive mirroring instead of lattice
closed forms, explicit threshold sweeps instead of cumulative sums, scalar
loops instead of vectorized code).
"""

import math

import numpy as np


def mirror_images(box, source, max_order):
    """All distinct image-source positions of ``source`` in a rectangular
    ``box`` = (x0, y0, x1, y1), found by recursively reflecting across the
    four walls. Returns {position: reflection count} with minimal counts."""
    x0, y0, x1, y1 = box

    def reflections(p):
        x, y = p
        return [(2 * x0 - x, y), (2 * x1 - x, y), (x, 2 * y0 - y), (x, 2 * y1 - y)]

    key = lambda p: (round(p[0], 9), round(p[1], 9))
    images = {key(source): (source, 0)}
    frontier = [source]
    for order in range(1, max_order + 1):
        nxt = []
        for p in frontier:
            for q in reflections(p):
                k = key(q)
                if k not in images:
                    images[k] = (q, order)
                    nxt.append(q)
        frontier = nxt
    return list(images.values())


def omni_ir_oracle(box, source, receiver_xy, cfg):
    """Omni-channel tapped delay line for an empty rectangular room, from the
    recursive mirror enumeration. Matches the amplitude law of the simulator
    (no interior walls, so no transmission loss)."""
    taps = np.zeros(cfg.num_samples, dtype=np.float64)
    for pos, order in mirror_images(box, source, cfg.max_reflection_order):
        dist = math.hypot(pos[0] - receiver_xy[0], pos[1] - receiver_xy[1])
        amp = cfg.wall_reflection ** order / max(dist, 0.1)
        if abs(amp) < cfg.min_amplitude:
            continue
        k = int(round(dist / cfg.speed_of_sound * cfg.sample_rate))
        if k < cfg.num_samples:
            taps[k] += amp
    return taps


def average_precision_sweep_oracle(scores, gt, weights):
    """Weighted AP by explicitly sweeping every distinct threshold and
    trapezoid-integrating the PR curve (flat extension to recall 0)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    gt = np.asarray(gt).ravel().astype(bool)
    weights = np.asarray(weights, dtype=np.float64).ravel()
    total_pos = weights[gt].sum()
    points = []
    for tau in sorted(set(scores.tolist()), reverse=True):
        sel = scores >= tau
        tp = weights[sel & gt].sum()
        fp = weights[sel & ~gt].sum()
        points.append((tp / total_pos, tp / (tp + fp)))
    area = 0.0
    prev_r, prev_p = 0.0, points[0][1]
    for r, p in points:
        area += (r - prev_r) * (p + prev_p) / 2.0
        prev_r, prev_p = r, p
    return 100.0 * area


def balanced_weights(gt):
    gt = np.asarray(gt).astype(bool)
    w = np.zeros(gt.shape, dtype=np.float64)
    n_pos, n_neg = gt.sum(), (~gt).sum()
    if n_pos:
        w[gt] = 0.5 / n_pos
    if n_neg:
        w[~gt] = 0.5 / n_neg
    return w


def edge_scores_sweep_oracle(scores):
    """Edge strength per cell by literally sweeping all thresholds: the
    highest tau at which the thresholded map differs from a 4-neighbor."""
    scores = np.asarray(scores, dtype=np.float64)
    h, w = scores.shape
    lowest = scores.min() - 1.0
    out = np.full((h, w), lowest, dtype=np.float64)
    for tau in sorted(set(scores.ravel().tolist()), reverse=True):
        binm = scores >= tau
        for r in range(h):
            for c in range(w):
                if out[r, c] != lowest:
                    continue
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    nr, nc = r + dr, c + dc
                    if 0 <= nr < h and 0 <= nc < w and binm[nr, nc] != binm[r, c]:
                        out[r, c] = tau
                        break
    return out


def gt_edges_oracle(gt):
    gt = np.asarray(gt).astype(np.int64)
    h, w = gt.shape
    out = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nr, nc = r + dr, c + dc
                if 0 <= nr < h and 0 <= nc < w and gt[nr, nc] != gt[r, c]:
                    out[r, c] = True
    return out
