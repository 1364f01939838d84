import json
import math

import numpy as np
import pytest

from refactor_kgc.artifacts import load_model, save_model, train_config_from_dict, train_config_to_dict
from refactor_kgc.errors import ArtifactError
from refactor_kgc.graph import load_bundle, random_features
from refactor_kgc.models import ClearUnit, Mode, OptimizerKind, ScoreKind, TrainConfig
from refactor_kgc.trainer import fit


def test_train_config_dict_round_trip():
    cfg = TrainConfig(score=ScoreKind.COMPLEX, dim=6, layers=math.inf, optimizer=OptimizerKind.SGD,
                      mode=Mode.PURE_FM, clear_unit=ClearUnit.BATCH)
    data = train_config_to_dict(cfg)
    assert data["layers"] == "inf" and data["score"] == "complex"
    json.dumps(data)
    assert train_config_from_dict(data) == cfg
    assert train_config_from_dict({**data, "layers": 3}).layers == 3


def test_train_config_rejects_unknown_key():
    with pytest.raises(ArtifactError, match="unknown"):
        train_config_from_dict({"depth": 3})


def test_save_and_load_model(ring_dataset, tmp_path):
    bundle = load_bundle(ring_dataset["train"], ring_dataset["valid"], ring_dataset["test"])
    cfg = TrainConfig(dim=4, epochs=2, batch_size=8, layers=2, seed=1)
    model = fit(bundle, random_features(bundle.train.n_entities, cfg.dim, cfg.seed), cfg)

    out = save_model(model, tmp_path / "model")
    assert {p.name for p in out.iterdir()} == {
        "cache.bin", "psi.bin", "features.bin", "config.json", "train_log.csv",
    }
    echo = json.loads((out / "config.json").read_text())
    assert echo["n_parameters"] == model.n_parameters
    assert echo["train"]["layers"] == 2

    loaded = load_model(out)
    assert np.array_equal(loaded.psi, model.psi)
    assert np.array_equal(loaded.cache.states, model.cache.states)
    assert np.array_equal(loaded.cache.initial.matrix, model.cache.initial.matrix)
    assert loaded.cache.step == model.cache.step
    assert loaded.config == model.config
    assert [r.epoch for r in loaded.log] == [r.epoch for r in model.log]


def test_load_model_errors(tmp_path):
    with pytest.raises(ArtifactError, match="not a model directory"):
        load_model(tmp_path)
    (tmp_path / "config.json").write_text("{not json")
    with pytest.raises(ArtifactError):
        load_model(tmp_path)
