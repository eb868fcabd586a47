"""Pilot run: small dataset, three modalities, one seed; prints test AP."""
import json
import sys
import time
from pathlib import Path

import torch

torch.set_num_threads(2)

from avmap.acoustics import AcousticConfig
from avmap.dataset import DatasetConfig, generate_dataset
from avmap.evaluation import evaluate_checkpoint
from avmap.floorplan import GenConfig
from avmap.model import ModelConfig
from avmap.training import TrainConfig, train

BASE = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("/tmp/pilot")
BASE.mkdir(parents=True, exist_ok=True)

ds_cfg = DatasetConfig(
    train_envs=12, val_envs=3, test_envs=6, train_traj_per_env=6,
    eval_traj_per_env=3, eval_lengths=(4,), t_v_train=4,
    window_h=16, window_w=16, seed=1,
    floorplan=GenConfig(), acoustic=AcousticConfig())

data = BASE / "data"
if not (data / "manifest.json").exists():
    t0 = time.time()
    generate_dataset(ds_cfg, data, force=True)
    print(f"dataset in {time.time()-t0:.0f}s", flush=True)

results = {}
for modality in ("av", "rgb", "audio"):
    mc = ModelConfig(feature_channels=32, pe_channels=16, enc1_channels=32,
                     enc2_channels=48, dec_channels=16, attention_dim=16,
                     audio_hidden=32, window_h=16, window_w=16,
                     modality=modality, param_seed=0)
    tc = TrainConfig(batch_size=4, steps_phase1=260, steps_phase2=90,
                     t_v_train=4, seed=0, log_every=25, val_every=10**6)
    out = BASE / f"run_{modality}"
    t0 = time.time()
    final = train(data, mc, tc, out)
    print(f"{modality}: trained in {time.time()-t0:.0f}s", flush=True)
    reports = evaluate_checkpoint(final, data, split="test", lengths=(4,),
                                  region="window_union")
    rep = reports[4]
    results[modality] = rep.ap
    print(f"{modality}: AP {rep.ap:.2f} Acc {rep.acc:.2f} EdgeAP {rep.edge_ap:.2f} "
          f"(depth {rep.projected_depth_acc:.2f})", flush=True)

print(json.dumps(results))
