"""Objectives and the optimization loop.

The interior objective is class-balanced binary cross-entropy on the first
score channel; the room objective is class-rebalanced softmax cross-entropy
over the room channels, evaluated only on interior cells. Both ignore canvas
cells not covered by any step's window. Training is plain SGD with momentum
and weight decay, with one learning-rate drop.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .dataset import DatasetManifest, read_sample
from .model import AVMapNet, ModelConfig, aggregate, build_model

log = logging.getLogger(__name__)


class DegenerateBatchError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr_initial: float = 0.1
    lr_drop_to: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    steps_phase1: int = 3000
    steps_phase2: int = 2000
    t_v_train: int = 4
    seed: int = 0
    log_every: int = 50
    val_every: int = 500
    val_samples: int = 16

    def __post_init__(self):
        for name in ("batch_size", "lr_initial", "lr_drop_to", "momentum",
                     "steps_phase1", "steps_phase2", "t_v_train"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


@dataclass
class LossReport:
    l_int: float
    l_room: float
    per_step_int: list[float] = field(default_factory=list)

    @property
    def l_total(self) -> float:
        return self.l_int + self.l_room


def loss_interior(score_maps: torch.Tensor, gt_int: torch.Tensor,
                  valid_masks: torch.Tensor) -> torch.Tensor:
    """Class-balanced binary cross-entropy on sigmoid(scores[:, 0]).

    Positive and negative cells contribute equally regardless of their
    frequency; cells with valid mask 0 contribute nothing.
    """
    logits = score_maps[:, 0]
    valid = valid_masks.bool()
    if not bool(valid.any()):
        raise DegenerateBatchError("no valid cells in the batch")
    target = (gt_int > 0)
    bce = F.binary_cross_entropy_with_logits(
        logits, target.to(logits.dtype), reduction="none")
    pos = valid & target
    neg = valid & ~target
    terms = []
    if bool(pos.any()):
        terms.append(bce[pos].mean())
    if bool(neg.any()):
        terms.append(bce[neg].mean())
    return sum(terms) / len(terms)


def loss_room(score_maps: torch.Tensor, gt_room: torch.Tensor,
              valid_masks: torch.Tensor) -> torch.Tensor:
    """Masked softmax cross-entropy over room channels on valid interior
    cells, reweighted by inverse label frequency (mean of per-class means)."""
    logits = score_maps[:, 1:]
    valid = valid_masks.bool() & (gt_room > 0)
    if not bool(valid.any()):
        raise DegenerateBatchError("no valid interior cells in the batch")
    num_rooms = logits.shape[1]
    flat_logits = logits.permute(0, 2, 3, 1)[valid]        # (n, num_rooms)
    flat_labels = gt_room[valid].long() - 1                # (n,)
    ce = F.cross_entropy(flat_logits, flat_labels, reduction="none")
    terms = []
    for k in range(num_rooms):
        sel = flat_labels == k
        if bool(sel.any()):
            terms.append(ce[sel].mean())
    return sum(terms) / len(terms)


def sequence_losses(net: AVMapNet, seq, device="cpu") -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Forward one sequence and compute both objectives. Returns
    (scores, l_int, l_room)."""
    dtype = next(net.parameters()).dtype
    frames = torch.from_numpy(seq.frames).to(device=device, dtype=dtype)
    audio = torch.from_numpy(seq.audio).to(device=device, dtype=dtype)
    scores = net(frames if net.use_rgb else None, audio if net.use_audio else None,
                 seq.relative_poses, seq.canvas)
    gt_int = torch.from_numpy(seq.gt_int.astype(np.int64)).to(device)
    gt_room = torch.from_numpy(seq.gt_room.astype(np.int64)).to(device)
    valid = torch.from_numpy(seq.valid.astype(bool)).to(device)
    return scores, loss_interior(scores, gt_int, valid), loss_room(scores, gt_room, valid)


def save_checkpoint(path, net: AVMapNet, step: int, seed: int,
                    optimizer: torch.optim.SGD | None = None) -> None:
    """All parameters as named float32 arrays plus a JSON header; reloads
    bit-exactly."""
    arrays = {}
    for name, p in net.named_parameters():
        arrays[f"param/{name}"] = p.detach().cpu().numpy().astype("<f4")
    if optimizer is not None:
        for (name, p) in net.named_parameters():
            state = optimizer.state.get(p, {})
            buf = state.get("momentum_buffer")
            if buf is not None:
                arrays[f"momentum/{name}"] = buf.detach().cpu().numpy().astype("<f4")
    header = {"model_config": net.cfg.to_json(), "step": step, "seed": seed}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(),
                                     dtype=np.uint8).copy()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[AVMapNet, int, int, dict]:
    data = np.load(path)
    header = json.loads(bytes(data["header"]).decode())
    cfg = ModelConfig.from_json(header["model_config"])
    net = AVMapNet(cfg)
    state = {}
    momentum = {}
    for key in data.files:
        if key.startswith("param/"):
            state[key[len("param/"):]] = torch.from_numpy(data[key])
        elif key.startswith("momentum/"):
            momentum[key[len("momentum/"):]] = torch.from_numpy(data[key])
    net.load_state_dict(state, strict=True)
    return net, header["step"], header["seed"], momentum


def restore_momentum(net: AVMapNet, optimizer: torch.optim.SGD, momentum: dict) -> None:
    for name, p in net.named_parameters():
        if name in momentum:
            optimizer.state[p] = {"momentum_buffer": momentum[name].clone()}


class SampleCache:
    """Read-through cache of decoded samples, bounded by entry count."""

    def __init__(self, dirs, max_items=2048):
        self.dirs = list(dirs)
        self.max_items = max_items
        self._cache = {}

    def __len__(self):
        return len(self.dirs)

    def __getitem__(self, idx):
        if idx not in self._cache:
            if len(self._cache) >= self.max_items:
                self._cache.pop(next(iter(self._cache)))
            self._cache[idx] = read_sample(self.dirs[idx])
        return self._cache[idx]


def train(data_root, model_cfg: ModelConfig, train_cfg: TrainConfig, out_dir,
          setting: str = "dev_gen", device: str = "cpu",
          val_metric_fn=None) -> Path:
    """SGD training over the train split; emits JSONL logs plus best-by-val
    and final checkpoints. Returns the final checkpoint path.
    """
    torch.manual_seed(train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    manifest = DatasetManifest.load(data_root)
    train_dirs = manifest.sample_dirs(data_root, "train", setting=setting,
                                      t_v=train_cfg.t_v_train)
    if not train_dirs:
        raise ValueError(f"no training samples for setting={setting!r}, "
                         f"t_v={train_cfg.t_v_train} under {data_root}")
    val_dirs = manifest.sample_dirs(data_root, "val", setting=setting)
    store = SampleCache(train_dirs)

    net = build_model(model_cfg).to(device)
    optimizer = torch.optim.SGD(net.parameters(), lr=train_cfg.lr_initial,
                                momentum=train_cfg.momentum,
                                weight_decay=train_cfg.weight_decay)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "log.jsonl"
    total_steps = train_cfg.steps_phase1 + train_cfg.steps_phase2
    best_val = -1.0
    t0 = time.time()
    with log_path.open("w") as log_file:
        for step in range(1, total_steps + 1):
            lr = train_cfg.lr_initial if step <= train_cfg.steps_phase1 \
                else train_cfg.lr_drop_to
            for group in optimizer.param_groups:
                group["lr"] = lr
            idxs = rng.choice(len(store), size=min(train_cfg.batch_size, len(store)),
                              replace=len(store) < train_cfg.batch_size)
            optimizer.zero_grad()
            l_int_sum, l_room_sum = 0.0, 0.0
            batch_losses = []
            for idx in idxs:
                seq = store[int(idx)]
                _, l_int, l_room = sequence_losses(net, seq, device)
                batch_losses.append((l_int + l_room) / len(idxs))
                l_int_sum += float(l_int.detach())
                l_room_sum += float(l_room.detach())
            loss = sum(batch_losses)
            if not torch.isfinite(loss):
                raise NonFiniteLossError(
                    f"non-finite loss at step {step}; batch dirs: "
                    f"{[str(store.dirs[int(i)]) for i in idxs]}")
            loss.backward()
            optimizer.step()

            if step % train_cfg.log_every == 0 or step == 1:
                rec = {"step": step, "L_int": l_int_sum / len(idxs),
                       "L_room": l_room_sum / len(idxs), "lr": lr}
                log_file.write(json.dumps(rec) + "\n")
                log_file.flush()
                log.info("step %d/%d L_int %.4f L_room %.4f (%.1fs)", step,
                         total_steps, rec["L_int"], rec["L_room"], time.time() - t0)
            if (val_metric_fn is not None and val_dirs
                    and step % train_cfg.val_every == 0):
                val_ap = val_metric_fn(net, val_dirs[: train_cfg.val_samples])
                log_file.write(json.dumps({"step": step, "val_AP": val_ap}) + "\n")
                log_file.flush()
                if val_ap > best_val:
                    best_val = val_ap
                    save_checkpoint(out_dir / "best.npz", net, step,
                                    train_cfg.seed, optimizer)
    final = out_dir / "final.npz"
    save_checkpoint(final, net, total_steps, train_cfg.seed, optimizer)
    if best_val < 0:
        save_checkpoint(out_dir / "best.npz", net, total_steps, train_cfg.seed, optimizer)
    return final


def quick_val_interior_ap(net: AVMapNet, sample_dirs, device="cpu") -> float:
    """Mean window-union interior AP over a few validation samples (used as
    the model-selection signal during training)."""
    from .evaluation import average_precision, balance_weights

    scores_all = []
    with torch.no_grad():
        for d in sample_dirs:
            seq = read_sample(d)
            s, _, _ = sequence_losses(net, seq, device)
            pred = aggregate(s)
            union = seq.valid.max(axis=0).astype(bool)
            gt = seq.gt_int.max(axis=0).astype(bool)
            flat_scores = pred["scores"][0].cpu().numpy()[union]
            flat_gt = gt[union]
            if flat_gt.all() or not flat_gt.any():
                continue
            w = balance_weights(flat_gt)
            scores_all.append(average_precision(flat_scores, flat_gt, w))
    return float(np.mean(scores_all)) if scores_all else 0.0
