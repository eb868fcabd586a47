import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from avmap.cli import main
from avmap.config import ConfigError, load_run_config

RUNNER = CliRunner()

TINY_RUN = {
    "dataset": {
        "train_envs": 2, "val_envs": 1, "test_envs": 1, "train_traj_per_env": 2,
        "eval_traj_per_env": 1, "eval_lengths": [1, 2], "t_v_train": 2,
        "window_h": 16, "window_w": 16, "seed": 0,
        "floorplan": {"rows": 40, "cols": 40, "min_rooms": 2, "max_rooms": 3},
        "acoustic": {"clip_duration": 0.5},
    },
    "model": {
        "feature_channels": 8, "pe_channels": 8, "enc1_channels": 8,
        "enc2_channels": 8, "dec_channels": 8, "attention_dim": 8,
        "audio_hidden": 8, "window_h": 16, "window_w": 16,
    },
    "train": {"batch_size": 2, "steps_phase1": 2, "steps_phase2": 1,
              "t_v_train": 2, "log_every": 1, "val_every": 100},
}


def write_cfg(tmp_path, doc=None):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc or TINY_RUN))
    return p


def manifest_hash(root):
    return hashlib.sha256((Path(root) / "manifest.json").read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data + short train once; reused by eval and render tests."""
    base = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(base)
    data = base / "data"
    res = RUNNER.invoke(main, ["gen-data", "--config", str(cfg), "--out", str(data)])
    assert res.exit_code == 0, res.output
    run = base / "run"
    res = RUNNER.invoke(main, ["train", "--config", str(cfg), "--data", str(data),
                               "--out", str(run)])
    assert res.exit_code == 0, res.output
    return {"cfg": cfg, "data": data, "run": run, "base": base}


def test_gen_data_counts_and_refusal(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "d"
    res = RUNNER.invoke(main, ["gen-data", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "train=4" in res.output  # 2 envs x 2 trajectories
    res2 = RUNNER.invoke(main, ["gen-data", "--config", str(cfg), "--out", str(out)])
    assert res2.exit_code != 0
    res3 = RUNNER.invoke(main, ["gen-data", "--config", str(cfg), "--out", str(out),
                                "--force"])
    assert res3.exit_code == 0, res3.output


def test_gen_data_deterministic_manifest(tmp_path):
    cfg = write_cfg(tmp_path)
    RUNNER.invoke(main, ["gen-data", "--config", str(cfg), "--out", str(tmp_path / "a")])
    RUNNER.invoke(main, ["gen-data", "--config", str(cfg), "--out", str(tmp_path / "b")])
    assert manifest_hash(tmp_path / "a") == manifest_hash(tmp_path / "b")


def test_gen_data_all_settings_multiplies_samples(tmp_path):
    doc = json.loads(json.dumps(TINY_RUN))
    doc["dataset"]["train_envs"] = 1
    doc["dataset"]["val_envs"] = 1
    doc["dataset"]["test_envs"] = 1
    cfg = write_cfg(tmp_path, doc)
    out_one = tmp_path / "one"
    out_all = tmp_path / "all"
    RUNNER.invoke(main, ["gen-data", "--config", str(cfg), "--out", str(out_one)])
    res = RUNNER.invoke(main, ["gen-data", "--config", str(cfg), "--out", str(out_all),
                               "--settings", "all"])
    assert res.exit_code == 0, res.output
    one = json.loads((out_one / "manifest.json").read_text())["samples"]
    both = json.loads((out_all / "manifest.json").read_text())["samples"]
    for split in ("train", "val", "test"):
        assert len(both[split]) == 4 * len(one[split])


def test_train_and_eval_pipeline(pipeline):
    run = pipeline["run"]
    assert (run / "final.npz").exists()
    assert (run / "best.npz").exists()
    assert (run / "config.json").exists()
    assert (run / "log.jsonl").exists()

    out = pipeline["base"] / "eval"
    res = RUNNER.invoke(main, ["eval", "--checkpoint", str(run / "final.npz"),
                               "--data", str(pipeline["data"]), "--out", str(out),
                               "--tv-eval", "1,2"])
    assert res.exit_code == 0, res.output
    report = json.loads((out / "report.json").read_text())
    assert set(report.keys()) == {"1", "2"}
    for rep in report.values():
        assert rep["baselines"]["interior_only_Acc"] == pytest.approx(50.0)
    assert "Interior-only" in (out / "report.txt").read_text()


def test_eval_emits_one_report_per_length(pipeline):
    out = pipeline["base"] / "eval_tv"
    res = RUNNER.invoke(main, ["eval", "--checkpoint", str(pipeline["run"] / "final.npz"),
                               "--data", str(pipeline["data"]), "--out", str(out),
                               "--tv-eval", "1,2,4,8,16"])
    # the tiny fixture dataset only stores lengths 1 and 2
    assert res.exit_code == 0, res.output
    report = json.loads((out / "report.json").read_text())
    assert set(report.keys()) == {"1", "2"}


def test_modality_flag_produces_rgb_only_checkpoint(pipeline, tmp_path):
    run = tmp_path / "rgb_run"
    res = RUNNER.invoke(main, ["train", "--config", str(pipeline["cfg"]),
                               "--data", str(pipeline["data"]), "--out", str(run),
                               "--modality", "rgb"])
    assert res.exit_code == 0, res.output
    from avmap.training import load_checkpoint
    net, _, _, _ = load_checkpoint(run / "final.npz")
    assert net.cfg.modality == "rgb"
    assert not net.use_audio
    names = [n for n, _ in net.named_parameters()]
    assert not any("audio" in n for n in names)


def test_render_maps_outputs(pipeline):
    data = pipeline["data"]
    manifest = json.loads((data / "manifest.json").read_text())
    sample = data / manifest["samples"]["test"][0]
    out = pipeline["base"] / "maps_run"
    res = RUNNER.invoke(main, ["render-maps", "--checkpoint",
                               str(pipeline["run"] / "final.npz"),
                               "--sample", str(sample), "--out", str(out)])
    assert res.exit_code == 0, res.output
    maps = sorted((out / "maps").glob("*.png"))
    assert len(maps) == 3
    meta = json.loads((sample / "meta.json").read_text())
    ch, cw = meta["canvas"]
    img = np.asarray(Image.open(out / "maps" / "interior_pred_vs_gt.png"))
    assert img.shape == (ch * 4, cw * 4, 3)
    # legend colors only
    colors = {tuple(c) for c in img.reshape(-1, 3)}
    allowed = {(0, 170, 0), (0, 0, 0), (220, 40, 40), (60, 80, 230)}
    assert colors <= allowed
    rooms = np.asarray(Image.open(out / "maps" / "rooms_pred.png"))
    assert rooms.shape == (ch * 4, cw * 4, 3)


def test_unknown_config_key_rejected(tmp_path):
    doc = json.loads(json.dumps(TINY_RUN))
    doc["model"]["banana"] = 1
    cfg = write_cfg(tmp_path, doc)
    res = RUNNER.invoke(main, ["gen-data", "--config", str(cfg), "--out",
                               str(tmp_path / "x")])
    assert res.exit_code != 0
    assert "banana" in res.output
    with pytest.raises(ConfigError, match="banana"):
        load_run_config(cfg)


def test_incompatible_checkpoint_rejected(pipeline, tmp_path):
    doc = json.loads(json.dumps(TINY_RUN))
    doc["dataset"]["window_h"] = 24
    doc["dataset"]["window_w"] = 24
    doc["model"]["window_h"] = 24
    doc["model"]["window_w"] = 24
    doc["dataset"]["train_envs"] = 1
    doc["dataset"]["val_envs"] = 1
    doc["dataset"]["test_envs"] = 1
    doc["dataset"]["train_traj_per_env"] = 1
    cfg = write_cfg(tmp_path, doc)
    data24 = tmp_path / "d24"
    res = RUNNER.invoke(main, ["gen-data", "--config", str(cfg), "--out", str(data24)])
    assert res.exit_code == 0, res.output
    res = RUNNER.invoke(main, ["eval", "--checkpoint",
                               str(pipeline["run"] / "final.npz"),
                               "--data", str(data24), "--out", str(tmp_path / "e")])
    assert res.exit_code != 0
    assert "window" in res.output


def test_run_config_round_trip(tmp_path):
    cfg_path = write_cfg(tmp_path)
    cfg = load_run_config(cfg_path)
    saved = tmp_path / "saved.json"
    cfg.save(saved)
    again = load_run_config(saved)
    assert again == cfg
