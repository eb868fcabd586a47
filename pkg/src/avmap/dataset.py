"""Sample assembly and on-disk dataset layout.

One sample is a camera trajectory through one environment: egocentric frames,
per-step ambisonic audio, relative poses, and per-step ground-truth maps
aligned into the sequence canvas. Datasets are split at the environment
level; every array is stored as a raw little-endian binary next to a JSON
meta document, so samples round-trip losslessly.

Layout:
    root/manifest.json
    root/{split}/{env_id}/floorplan.json + interior.bin + rooms.bin
    root/{split}/{env_id}/{traj_id}/meta.json, frames.bin, audio.bin,
        gt_int.bin, gt_room.bin, valid.bin
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .acoustics import AcousticConfig, SourcePlacement, place_sources, render_audio
from .floorplan import (
    Floorplan,
    GenConfig,
    Pose,
    Trajectory,
    align_ground_truth,
    crop_ground_truth,
    generate_floorplan,
    sample_trajectory,
    sequence_canvas,
)
from .render import FRAME_SIZE, render_rgb

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


class InputFormatError(ValueError):
    pass


@dataclass
class DatasetConfig:
    train_envs: int = 60
    val_envs: int = 10
    test_envs: int = 15
    train_traj_per_env: int = 40
    eval_traj_per_env: int = 2
    eval_lengths: tuple[int, ...] = (1, 2, 4, 8, 16)
    t_v_train: int = 4
    extra_train_lengths: tuple[int, ...] = ()
    settings: tuple[str, ...] = ("dev_gen",)
    window_h: int = 24
    window_w: int = 24
    seed: int = 0
    retry_limit: int = 5
    floorplan: GenConfig = field(default_factory=GenConfig)
    acoustic: AcousticConfig = field(default_factory=AcousticConfig)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["settings"] = list(self.settings)
        doc["eval_lengths"] = list(self.eval_lengths)
        doc["extra_train_lengths"] = list(self.extra_train_lengths)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetConfig":
        doc = dict(doc)
        doc["floorplan"] = GenConfig(**doc.get("floorplan", {}))
        doc["acoustic"] = AcousticConfig(**doc.get("acoustic", {}))
        doc["settings"] = tuple(doc.get("settings", ("dev_gen",)))
        doc["eval_lengths"] = tuple(doc.get("eval_lengths", (1, 2, 4, 8, 16)))
        doc["extra_train_lengths"] = tuple(doc.get("extra_train_lengths", ()))
        return cls(**doc)


@dataclass
class VideoSequence:
    frames: np.ndarray        # (t, 3, 64, 64) float32
    audio: np.ndarray         # (t, T, 9) float32
    poses: list[Pose]
    relative_poses: list[tuple[float, float, float]]
    gt_int: np.ndarray        # (t, H', W') uint8
    gt_room: np.ndarray       # (t, H', W') uint8
    valid: np.ndarray         # (t, H', W') uint8
    canvas: tuple[int, int]
    env_id: str
    setting: str
    placements: list[SourcePlacement]
    seed: int
    cell_size: float
    window: tuple[int, int]

    def __post_init__(self):
        t = self.frames.shape[0]
        shapes_ok = (self.audio.shape[0] == t == len(self.poses)
                     == len(self.relative_poses) == self.gt_int.shape[0]
                     == self.gt_room.shape[0] == self.valid.shape[0])
        if not shapes_ok:
            raise InputFormatError("per-step arrays disagree on sequence length")
        if self.canvas[0] % 8 or self.canvas[1] % 8:
            raise InputFormatError(f"canvas {self.canvas} not a multiple of 8")

    def __len__(self) -> int:
        return self.frames.shape[0]


def derive_seed(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def build_sample(fp: Floorplan, traj: Trajectory, setting: str, cfg: DatasetConfig,
                 seed: int, env_id: str = "") -> VideoSequence:
    """Render one trajectory into a full sample (frames, audio, aligned gt)."""
    t_v = len(traj)
    frames = np.stack([render_rgb(fp, p).pixels for p in traj.poses])
    placements = place_sources(fp, traj, setting, seed, window_cells=cfg.window_h)
    clips = []
    for i, pose in enumerate(traj.poses):
        active = [placements[i]] if setting == "dev_gen" else placements
        clips.append(render_audio(fp, active, pose, cfg.acoustic, seed, step_index=i))
    audio = np.stack([c.samples for c in clips]).astype(np.float32)

    canvas = sequence_canvas(cfg.window_h, cfg.window_w, traj.relative_poses, fp.cell_size)
    gt_int = np.zeros((t_v, *canvas), dtype=np.uint8)
    gt_room = np.zeros((t_v, *canvas), dtype=np.uint8)
    valid = np.zeros((t_v, *canvas), dtype=np.uint8)
    for i, (pose, rel) in enumerate(zip(traj.poses, traj.relative_poses)):
        y_int, y_room = crop_ground_truth(fp, pose, cfg.window_h, cfg.window_w)
        gt_int[i], valid[i] = align_ground_truth(y_int, rel, fp.cell_size, canvas)
        gt_room[i], _ = align_ground_truth(y_room, rel, fp.cell_size, canvas)

    return VideoSequence(
        frames=frames.astype(np.float32), audio=audio, poses=list(traj.poses),
        relative_poses=list(traj.relative_poses), gt_int=gt_int, gt_room=gt_room,
        valid=valid, canvas=canvas, env_id=env_id, setting=setting,
        placements=placements, seed=seed, cell_size=fp.cell_size,
        window=(cfg.window_h, cfg.window_w))


def write_sample(seq: VideoSequence, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "env_id": seq.env_id,
        "setting": seq.setting,
        "seed": seq.seed,
        "cell_size": seq.cell_size,
        "window": list(seq.window),
        "canvas": list(seq.canvas),
        "t_v": len(seq),
        "num_audio_samples": int(seq.audio.shape[1]),
        "poses": [[p.x, p.y, p.theta] for p in seq.poses],
        "relative_poses": [list(r) for r in seq.relative_poses],
        "placements": [p.to_json() for p in seq.placements],
    }
    (path / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    seq.frames.astype("<f4").tofile(path / "frames.bin")
    # audio on disk is (t, 9, T)
    np.ascontiguousarray(seq.audio.transpose(0, 2, 1)).astype("<f4").tofile(path / "audio.bin")
    seq.gt_int.astype(np.uint8).tofile(path / "gt_int.bin")
    seq.gt_room.astype(np.uint8).tofile(path / "gt_room.bin")
    seq.valid.astype(np.uint8).tofile(path / "valid.bin")


def _read_array(path: Path, dtype, shape, name: str) -> np.ndarray:
    expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
    if not path.exists():
        raise InputFormatError(f"missing {name} at {path} (expected {expected} bytes)")
    raw = np.fromfile(path, dtype=dtype)
    if raw.nbytes != expected:
        raise InputFormatError(
            f"{name} at {path} holds {raw.nbytes} bytes, expected {expected} "
            f"for shape {tuple(shape)}")
    return raw.reshape(shape)


def read_sample(path) -> VideoSequence:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise InputFormatError(f"missing meta.json in {path}")
    meta = json.loads(meta_path.read_text())
    t_v = meta["t_v"]
    n = meta["num_audio_samples"]
    ch, cw = meta["canvas"]
    frames = _read_array(path / "frames.bin", "<f4", (t_v, 3, FRAME_SIZE, FRAME_SIZE),
                         "frames.bin")
    audio = _read_array(path / "audio.bin", "<f4", (t_v, 9, n), "audio.bin")
    gt_int = _read_array(path / "gt_int.bin", np.uint8, (t_v, ch, cw), "gt_int.bin")
    gt_room = _read_array(path / "gt_room.bin", np.uint8, (t_v, ch, cw), "gt_room.bin")
    valid = _read_array(path / "valid.bin", np.uint8, (t_v, ch, cw), "valid.bin")
    return VideoSequence(
        frames=frames, audio=np.ascontiguousarray(audio.transpose(0, 2, 1)),
        poses=[Pose(*p) for p in meta["poses"]],
        relative_poses=[tuple(r) for r in meta["relative_poses"]],
        gt_int=gt_int, gt_room=gt_room, valid=valid, canvas=(ch, cw),
        env_id=meta["env_id"], setting=meta["setting"],
        placements=[SourcePlacement.from_json(p) for p in meta["placements"]],
        seed=meta["seed"], cell_size=meta["cell_size"], window=tuple(meta["window"]))


@dataclass
class DatasetManifest:
    splits: dict        # env_id -> split
    config: DatasetConfig
    seed: int
    samples: dict       # split -> [relative sample dirs]

    def validate(self) -> None:
        for env_id, split in self.splits.items():
            if split not in SPLITS:
                raise InputFormatError(f"unknown split {split!r} for {env_id}")
        for split, dirs in self.samples.items():
            for d in dirs:
                env = d.split("/")[1]
                if self.splits.get(env) != split:
                    raise InputFormatError(
                        f"sample {d} listed under {split} but {env} belongs to "
                        f"{self.splits.get(env)!r}: environment splits must be disjoint")

    def save(self, root) -> None:
        doc = {"splits": self.splits, "config": self.config.to_json(),
               "seed": self.seed, "samples": self.samples}
        (Path(root) / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=1))

    @classmethod
    def load(cls, root) -> "DatasetManifest":
        p = Path(root) / "manifest.json"
        if not p.exists():
            raise InputFormatError(f"missing manifest.json in {root}")
        doc = json.loads(p.read_text())
        man = cls(splits=doc["splits"], config=DatasetConfig.from_json(doc["config"]),
                  seed=doc["seed"], samples=doc["samples"])
        man.validate()
        return man

    def sample_dirs(self, root, split: str, setting: str | None = None,
                    t_v: int | None = None) -> list[Path]:
        out = []
        for rel in self.samples.get(split, ()):
            p = Path(root) / rel
            if setting is not None or t_v is not None:
                meta = json.loads((p / "meta.json").read_text())
                if setting is not None and meta["setting"] != setting:
                    continue
                if t_v is not None and meta["t_v"] != t_v:
                    continue
            out.append(p)
        return out


def generate_dataset(cfg: DatasetConfig, out_dir, force: bool = False) -> DatasetManifest:
    """Generate environments, trajectories, and samples for all splits and all
    requested audio settings. Deterministic given cfg.seed."""
    root = Path(out_dir)
    if root.exists() and any(root.iterdir()):
        if not force:
            raise FileExistsError(f"{root} is not empty; pass force to overwrite")
    root.mkdir(parents=True, exist_ok=True)

    counts = {"train": cfg.train_envs, "val": cfg.val_envs, "test": cfg.test_envs}
    splits = {}
    samples = {s: [] for s in SPLITS}
    env_index = 0
    for split in SPLITS:
        for _ in range(counts[split]):
            env_id = f"env{env_index:04d}"
            env_index += 1
            splits[env_id] = split
            fp = generate_floorplan(derive_seed(cfg.seed, 0, env_index), cfg.floorplan)
            env_dir = root / split / env_id
            fp.save(env_dir)
            plan = _trajectory_plan(cfg, split)
            for setting, tag, t_v, k in plan:
                traj_id = f"{setting}_{tag}_{k:03d}"
                seed = derive_seed(cfg.seed, 1, env_index, t_v, k, SPLITS.index(split),
                                   cfg.settings.index(setting))
                seq = _build_with_retries(fp, t_v, setting, cfg, seed, env_id)
                if seq is None:
                    log.warning("skipping %s/%s/%s after %d failed trajectories",
                                split, env_id, traj_id, cfg.retry_limit)
                    continue
                write_sample(seq, env_dir / traj_id)
                samples[split].append(f"{split}/{env_id}/{traj_id}")
    manifest = DatasetManifest(splits=splits, config=cfg, seed=cfg.seed, samples=samples)
    manifest.validate()
    manifest.save(root)
    return manifest


def _trajectory_plan(cfg: DatasetConfig, split: str):
    plan = []
    for setting in cfg.settings:
        if split == "train":
            for t_v in (cfg.t_v_train, *cfg.extra_train_lengths):
                for k in range(cfg.train_traj_per_env):
                    plan.append((setting, f"tv{t_v:02d}", t_v, k))
        else:
            for t_v in cfg.eval_lengths:
                for k in range(cfg.eval_traj_per_env):
                    plan.append((setting, f"tv{t_v:02d}", t_v, k))
    return plan


def _build_with_retries(fp, t_v, setting, cfg, seed, env_id):
    for attempt in range(cfg.retry_limit):
        try:
            traj = sample_trajectory(fp, t_v, derive_seed(seed, attempt))
            return build_sample(fp, traj, setting, cfg, seed, env_id=env_id)
        except ValueError as exc:
            log.warning("trajectory attempt %d failed for %s: %s", attempt, env_id, exc)
    return None


def load_floorplan(root, split: str, env_id: str) -> Floorplan:
    return Floorplan.load(Path(root) / split / env_id)
