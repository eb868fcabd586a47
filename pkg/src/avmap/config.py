"""Merged run configuration: dataset, model, and training sections loaded
from one JSON document with strict key checking."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .dataset import DatasetConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_json(self) -> dict:
        return {"dataset": self.dataset.to_json(), "model": self.model.to_json(),
                "train": self.train.to_json()}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=1))


def _check_keys(doc: dict, cls, section: str, nested=()) -> None:
    known = {f.name for f in fields(cls)}
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in config section {section!r}; "
                              f"known keys: {sorted(known)}")
    for name, sub_cls in nested:
        if name in doc and isinstance(doc[name], dict):
            _check_keys(doc[name], sub_cls, f"{section}.{name}")


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Load a RunConfig from JSON, applying {section: {key: value}} overrides.
    Unknown keys anywhere are rejected."""
    from .acoustics import AcousticConfig
    from .floorplan import GenConfig

    doc = {}
    if path is not None:
        doc = json.loads(Path(path).read_text())
    for key in doc:
        if key not in ("dataset", "model", "train"):
            raise ConfigError(f"unknown top-level config key {key!r}; "
                              "expected dataset/model/train")
    for section, values in (overrides or {}).items():
        doc.setdefault(section, {}).update(values)
    _check_keys(doc.get("dataset", {}), DatasetConfig, "dataset",
                nested=[("floorplan", GenConfig), ("acoustic", AcousticConfig)])
    _check_keys(doc.get("model", {}), ModelConfig, "model")
    _check_keys(doc.get("train", {}), TrainConfig, "train")
    return RunConfig(
        dataset=DatasetConfig.from_json(doc.get("dataset", {})),
        model=ModelConfig.from_json(doc.get("model", {})),
        train=TrainConfig.from_json(doc.get("train", {})),
    )
