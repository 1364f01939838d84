"""Model artifact directory: cache and ψ snapshots, feature matrix, config echo, training log."""

import csv
import json
import logging
import math
from dataclasses import fields
from enum import Enum
from pathlib import Path

from .cache import NodeStateCache, read_matrix, write_matrix
from .config import CACHE_FILE, CONFIG_FILE, FEATURES_FILE, PSI_FILE, TRAIN_LOG_FILE
from .errors import ArtifactError
from .models import (
    CandidateStrategy, ClearUnit, Directions, EpochRecord, Mode, NodeFeatures, OptimizerKind,
    ScoreKind, TrainConfig, TrainedModel,
)

logger = logging.getLogger(__name__)

_ENUM_FIELDS = {
    "score": ScoreKind,
    "optimizer": OptimizerKind,
    "mode": Mode,
    "candidates": CandidateStrategy,
    "directions": Directions,
    "clear_unit": ClearUnit,
}
_LOG_COLUMNS = ("epoch", "loss", "valid_mrr", "seconds", "cache_event")


def train_config_to_dict(cfg: TrainConfig) -> dict:
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, Enum):
            value = value.value
        elif isinstance(value, float) and math.isinf(value):
            value = "inf"
        out[f.name] = value
    return out


def train_config_from_dict(data: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ArtifactError(f"unknown key {key!r} in saved config")
        if key in _ENUM_FIELDS:
            value = _ENUM_FIELDS[key](value)
        elif key == "layers":
            value = math.inf if value == "inf" else int(value)
        kwargs[key] = value
    return TrainConfig(**kwargs)


def save_model(model: TrainedModel, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache: NodeStateCache = model.cache
    write_matrix(out_dir / CACHE_FILE, cache.states)
    write_matrix(out_dir / PSI_FILE, model.psi)
    write_matrix(out_dir / FEATURES_FILE, cache.initial.matrix)

    echo = {
        "train": train_config_to_dict(model.config),
        "cache_step": cache.step,
        "features_source": cache.initial.source,
        "n_parameters": model.n_parameters,
    }
    (out_dir / CONFIG_FILE).write_text(json.dumps(echo, indent=2, sort_keys=True), encoding="utf-8")

    with open(out_dir / TRAIN_LOG_FILE, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_LOG_COLUMNS)
        for rec in model.log:
            writer.writerow([rec.epoch, f"{rec.loss:.6f}",
                             "" if rec.valid_mrr is None else f"{rec.valid_mrr:.6f}",
                             f"{rec.seconds:.3f}", rec.cache_event])
    logger.info("Saved model to %s", out_dir)
    return out_dir


def load_model(model_dir: str | Path) -> TrainedModel:
    model_dir = Path(model_dir)
    config_path = model_dir / CONFIG_FILE
    if not config_path.exists():
        raise ArtifactError(f"not a model directory (no {CONFIG_FILE}): {model_dir}")
    try:
        echo = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ArtifactError(f"{config_path}: {e}")

    cfg = train_config_from_dict(echo["train"])
    states = read_matrix(model_dir / CACHE_FILE)
    psi = read_matrix(model_dir / PSI_FILE)
    features = read_matrix(model_dir / FEATURES_FILE)
    if states.shape != features.shape or psi.shape[1] != states.shape[1]:
        raise ArtifactError(f"inconsistent snapshot shapes in {model_dir}")

    initial = NodeFeatures(matrix=features, source=echo.get("features_source", "random"), seed=cfg.seed)
    layers = math.inf if cfg.mode is Mode.PURE_FM else cfg.layers
    cache = NodeStateCache(initial, layers, cfg.clear_unit)
    cache.restore(states, int(echo.get("cache_step", 0)))

    log = []
    log_path = model_dir / TRAIN_LOG_FILE
    if log_path.exists():
        with open(log_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                log.append(EpochRecord(
                    epoch=int(row["epoch"]), loss=float(row["loss"]),
                    valid_mrr=float(row["valid_mrr"]) if row["valid_mrr"] else None,
                    seconds=float(row["seconds"]), cache_event=row["cache_event"],
                ))
    return TrainedModel(psi=psi, cache=cache, config=cfg, log=log)
