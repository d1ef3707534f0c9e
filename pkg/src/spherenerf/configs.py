"""Training configuration files.

A config file is JSON with up to three sections, each mirroring the
corresponding dataclass field for field:

    {
      "train": { "iterations": 5000, "batch_rays": 100, ... },
      "mask":  { "epsilon": 2, "clip_mode": "off", ... },
      "loss":  { "temperature": 0.1, "lambda_rc": 0.1, ... },
      "dataset": "path/to/dataset-dir"
    }

Unknown keys are rejected so typos fail loudly.
"""

import dataclasses
import json
from pathlib import Path

from .consistency import MaskConfig
from .errors import BadConfig
from .losses import LossConfig
from .trainer import TrainConfig


def _build(cls, values: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise BadConfig(f"unknown {section} keys: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise BadConfig(f"bad {section} config: {exc}") from exc


def train_config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    mask = _build(MaskConfig, data.pop("mask", {}), "mask")
    loss = _build(LossConfig, data.pop("loss", {}), "loss")
    data.pop("dataset", None)
    train = dict(data.pop("train", {}))
    if data:
        raise BadConfig(f"unknown top-level keys: {sorted(data)}")
    overlap = {"mask", "loss"} & set(train)
    if overlap:
        raise BadConfig(f"mask/loss belong at the top level, not under train: {sorted(overlap)}")
    cfg = _build(TrainConfig, train, "train")
    return dataclasses.replace(cfg, mask=mask, loss=loss)


def load_train_config(path) -> tuple[TrainConfig, str | None]:
    """Read a config file; returns (config, dataset path or None)."""
    p = Path(path)
    if not p.exists():
        raise BadConfig(f"config file not found: {p}")
    try:
        with open(p) as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise BadConfig(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise BadConfig("config root must be a JSON object")
    dataset = data.get("dataset")
    return train_config_from_dict(data), dataset


def train_config_to_dict(cfg: TrainConfig, dataset: str | None = None) -> dict:
    body = dataclasses.asdict(cfg)
    mask = body.pop("mask")
    loss = body.pop("loss")
    out = {"train": body, "mask": mask, "loss": loss}
    if dataset is not None:
        out["dataset"] = dataset
    return out


def save_train_config(cfg: TrainConfig, path, dataset: str | None = None) -> None:
    with open(path, "w") as f:
        json.dump(train_config_to_dict(cfg, dataset), f, indent=2, sort_keys=True)
        f.write("\n")
