import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from avmap.acoustics import AcousticConfig
from avmap.dataset import (
    DatasetConfig,
    DatasetManifest,
    InputFormatError,
    build_sample,
    generate_dataset,
    read_sample,
    write_sample,
)
from avmap.floorplan import GenConfig, generate_floorplan, sample_trajectory, sequence_canvas


def tiny_config(**overrides):
    base = dict(
        train_envs=2, val_envs=1, test_envs=1, train_traj_per_env=2,
        eval_traj_per_env=1, eval_lengths=(1, 2), t_v_train=2,
        window_h=16, window_w=16, seed=0,
        floorplan=GenConfig(rows=40, cols=40, min_rooms=2, max_rooms=3),
        acoustic=AcousticConfig(clip_duration=0.5),
    )
    base.update(overrides)
    return DatasetConfig(**base)


def build_one(t_v=2, setting="dev_gen", seed=3):
    cfg = tiny_config()
    fp = generate_floorplan(1, cfg.floorplan)
    traj = sample_trajectory(fp, t_v, seed=seed)
    return build_sample(fp, traj, setting, cfg, seed=seed, env_id="env0000"), cfg


def tree_hash(root):
    digest = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            digest.update(str(p.relative_to(root)).encode())
            digest.update(p.read_bytes())
    return digest.hexdigest()


def test_single_step_sample_shapes():
    seq, cfg = build_one(t_v=1)
    assert len(seq) == 1
    assert seq.audio.shape == (1, cfg.acoustic.num_samples, 9)
    assert seq.frames.shape == (1, 3, 64, 64)
    expected_canvas = sequence_canvas(16, 16, [(0.0, 0.0, 0.0)], cfg.floorplan.cell_size)
    assert seq.canvas == expected_canvas
    assert seq.gt_int.shape == (1, *expected_canvas)


def test_sample_deterministic_bytes(tmp_path):
    a, _ = build_one(seed=11)
    b, _ = build_one(seed=11)
    write_sample(a, tmp_path / "a")
    write_sample(b, tmp_path / "b")
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")


def test_valid_mask_union_bounds():
    seq, _ = build_one(t_v=4)
    union = seq.valid.max(axis=0)
    per_step = [int(m.sum()) for m in seq.valid]
    assert union.sum() >= per_step[0]
    assert union.sum() <= 4 * max(per_step)


def test_gt_room_consistent_with_interior_on_valid():
    seq, _ = build_one(t_v=4)
    for t in range(len(seq)):
        m = seq.valid[t] == 1
        assert np.array_equal(seq.gt_room[t][m] > 0, seq.gt_int[t][m] == 1)


def test_round_trip_equality(tmp_path):
    seq, _ = build_one(t_v=2)
    write_sample(seq, tmp_path / "s")
    back = read_sample(tmp_path / "s")
    assert np.array_equal(back.frames, seq.frames)
    assert np.allclose(back.audio, seq.audio.astype(np.float32))
    assert np.array_equal(back.gt_int, seq.gt_int)
    assert np.array_equal(back.gt_room, seq.gt_room)
    assert np.array_equal(back.valid, seq.valid)
    assert back.poses == seq.poses
    assert back.relative_poses == [tuple(r) for r in seq.relative_poses]
    assert back.canvas == seq.canvas
    assert back.placements == seq.placements
    assert (back.env_id, back.setting, back.seed) == (seq.env_id, seq.setting, seq.seed)


def test_truncated_audio_reports_expected_bytes(tmp_path):
    seq, cfg = build_one(t_v=2)
    write_sample(seq, tmp_path / "s")
    audio_path = tmp_path / "s" / "audio.bin"
    audio_path.write_bytes(audio_path.read_bytes()[:100])
    with pytest.raises(InputFormatError) as err:
        read_sample(tmp_path / "s")
    expected = 2 * 9 * cfg.acoustic.num_samples * 4
    assert str(expected) in str(err.value)
    assert "audio.bin" in str(err.value)


def test_missing_file_is_descriptive(tmp_path):
    seq, _ = build_one(t_v=1)
    write_sample(seq, tmp_path / "s")
    (tmp_path / "s" / "gt_int.bin").unlink()
    with pytest.raises(InputFormatError, match="gt_int.bin"):
        read_sample(tmp_path / "s")


def test_manifest_rejects_overlapping_splits():
    man = DatasetManifest(
        splits={"env0000": "train"},
        config=tiny_config(), seed=0,
        samples={"train": ["train/env0000/x"], "val": ["val/env0000/y"]})
    with pytest.raises(InputFormatError, match="disjoint"):
        man.validate()


def test_generate_dataset_counts_and_hygiene(tmp_path):
    cfg = tiny_config()
    man = generate_dataset(cfg, tmp_path / "d")
    # 2 train envs x 2 trajs; eval envs x 2 lengths x 1 traj
    assert len(man.samples["train"]) == 4
    assert len(man.samples["val"]) == 2
    assert len(man.samples["test"]) == 2
    assert set(man.splits.values()) == {"train", "val", "test"}
    loaded = DatasetManifest.load(tmp_path / "d")
    assert loaded.splits == man.splits
    for split in ("train", "val", "test"):
        for d in loaded.sample_dirs(tmp_path / "d", split):
            seq = read_sample(d)
            assert seq.setting == "dev_gen"


def test_generate_dataset_refuses_nonempty(tmp_path):
    out = tmp_path / "d"
    out.mkdir()
    (out / "junk.txt").write_text("x")
    with pytest.raises(FileExistsError):
        generate_dataset(tiny_config(), out)
    generate_dataset(tiny_config(), out, force=True)


def test_generate_dataset_reproducible(tmp_path):
    cfg = tiny_config()
    generate_dataset(cfg, tmp_path / "a")
    generate_dataset(cfg, tmp_path / "b")
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")


def test_config_round_trip():
    cfg = tiny_config()
    doc = json.loads(json.dumps(cfg.to_json()))
    back = DatasetConfig.from_json(doc)
    assert back == cfg
