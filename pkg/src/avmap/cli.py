"""Command-line entry points: dataset generation, training, evaluation, and
map rendering. All outputs land in run directories holding the exact config
and seeds they were produced from."""

from __future__ import annotations

import logging
import os
import sys
from pathlib import Path

import click

from .config import ConfigError, load_run_config

log = logging.getLogger("avmap")


def _data_root(value):
    if value:
        return Path(value)
    env = os.environ.get("AVMAP_DATA_ROOT")
    if env:
        return Path(env)
    raise click.UsageError("no data directory: pass --data or set AVMAP_DATA_ROOT")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable info logging.")
def main(verbose):
    """Audio-visual floorplan mapping pipeline."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--settings", default=None,
              help="Comma list of dev_gen,env_telephone,env_nearby,env_all_room or 'all'.")
@click.option("--force", is_flag=True, help="Overwrite a nonempty output directory.")
def cmd_gen_data(config_path, out_dir, seed, settings, force):
    """Generate environments and trajectory samples for all splits."""
    from .dataset import generate_dataset

    overrides = {}
    if seed is not None:
        overrides.setdefault("dataset", {})["seed"] = seed
    if settings:
        names = ("dev_gen", "env_telephone", "env_nearby", "env_all_room") \
            if settings == "all" else tuple(settings.split(","))
        overrides.setdefault("dataset", {})["settings"] = names
    try:
        run_cfg = load_run_config(config_path, overrides)
    except ConfigError as exc:
        raise click.UsageError(str(exc))
    try:
        manifest = generate_dataset(run_cfg.dataset, out_dir, force=force)
    except FileExistsError as exc:
        raise click.ClickException(f"{exc} (use --force)")
    run_cfg.save(Path(out_dir) / "config.json")
    counts = {s: len(d) for s, d in manifest.samples.items()}
    click.echo(f"wrote dataset to {out_dir}: "
               + ", ".join(f"{s}={n} samples" for s, n in counts.items()))


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--modality", type=click.Choice(["av", "rgb", "audio"]), default=None)
@click.option("--setting", default="dev_gen")
@click.option("--seed", type=int, default=None)
def cmd_train(config_path, data_dir, out_dir, modality, setting, seed):
    """Train a model on a generated dataset."""
    from .training import quick_val_interior_ap, train

    overrides = {}
    if modality:
        overrides.setdefault("model", {})["modality"] = modality
    if seed is not None:
        overrides.setdefault("train", {})["seed"] = seed
        overrides.setdefault("model", {})["param_seed"] = seed
    try:
        run_cfg = load_run_config(config_path, overrides)
    except ConfigError as exc:
        raise click.UsageError(str(exc))
    data_root = _data_root(data_dir)
    _check_dataset_compat(run_cfg, data_root)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_cfg.save(out / "config.json")
    final = train(data_root, run_cfg.model, run_cfg.train, out, setting=setting,
                  val_metric_fn=quick_val_interior_ap)
    click.echo(f"final checkpoint: {final}")


def _check_dataset_compat(run_cfg, data_root):
    from .dataset import DatasetManifest

    manifest = DatasetManifest.load(data_root)
    ds = manifest.config
    model = run_cfg.model
    problems = []
    if ds.window_h != model.window_h or ds.window_w != model.window_w:
        problems.append(f"window {ds.window_h}x{ds.window_w} (dataset) vs "
                        f"{model.window_h}x{model.window_w} (model)")
    if ds.floorplan.num_labels != model.num_rooms:
        problems.append(f"room vocabulary {ds.floorplan.num_labels} (dataset) vs "
                        f"{model.num_rooms} (model)")
    if abs(ds.floorplan.cell_size - model.cell_size) > 1e-9:
        problems.append(f"cell size {ds.floorplan.cell_size} (dataset) vs "
                        f"{model.cell_size} (model)")
    if problems:
        raise click.ClickException("dataset/model config mismatch: " + "; ".join(problems))


@main.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--split", type=click.Choice(["train", "val", "test"]), default="test")
@click.option("--tv-eval", default="1,2,4,8,16", help="Comma list of trajectory lengths.")
@click.option("--region", type=click.Choice(["window_union", "full_house"]),
              default="window_union")
@click.option("--setting", default="dev_gen")
@click.option("--max-samples", type=int, default=None)
def cmd_eval(checkpoint, data_dir, out_dir, split, tv_eval, region, setting, max_samples):
    """Evaluate a checkpoint and its baselines on stored trajectories."""
    from .evaluation import evaluate_checkpoint, report_table, write_report
    from .training import load_checkpoint

    data_root = _data_root(data_dir)
    lengths = tuple(int(x) for x in tv_eval.split(","))
    net, step, seed, _ = load_checkpoint(checkpoint)
    _check_eval_compat(net, data_root)
    reports = evaluate_checkpoint(net, data_root, split=split, lengths=lengths,
                                  region=region, setting=setting,
                                  max_samples=max_samples)
    if not reports:
        raise click.ClickException(
            f"no samples for split={split!r} setting={setting!r} lengths={lengths}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report(reports, out / "report.json")
    table = report_table(reports)
    (out / "report.txt").write_text(table)
    click.echo(table)


def _check_eval_compat(net, data_root):
    from .dataset import DatasetManifest

    ds = DatasetManifest.load(data_root).config
    cfg = net.cfg
    if (ds.window_h, ds.window_w) != (cfg.window_h, cfg.window_w) \
            or ds.floorplan.num_labels != cfg.num_rooms:
        raise click.ClickException(
            f"checkpoint expects window {cfg.window_h}x{cfg.window_w}, "
            f"{cfg.num_rooms} rooms; dataset has {ds.window_h}x{ds.window_w}, "
            f"{ds.floorplan.num_labels} rooms")


@main.command("render-maps")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--sample", "sample_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--scale", type=int, default=4)
def cmd_render_maps(checkpoint, sample_dir, out_dir, scale):
    """Render predicted-vs-truth interior and room map PNGs for one sample."""
    from .viz import render_maps

    try:
        outputs = render_maps(checkpoint, sample_dir, Path(out_dir) / "maps", scale=scale)
    except OSError as exc:
        raise click.ClickException(str(exc))
    for p in outputs:
        click.echo(str(p))


if __name__ == "__main__":
    sys.exit(main())
