import json
import math
from pathlib import Path

import pytest

from refactor_kgc.config import RunConfig, load_run_config, parse_layers
from refactor_kgc.errors import ConfigError
from refactor_kgc.models import Mode, OptimizerKind, ScoreKind
from refactor_kgc.pipeline import protocol_from_run, train_config_from_run


def write_config(tmp_path, data) -> Path:
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


@pytest.mark.parametrize("value, expected", [
    (None, math.inf), ("inf", math.inf), ("Infinity", math.inf), (math.inf, math.inf),
    (3, 3), ("6", 6), (0, 0),
])
def test_parse_layers(value, expected):
    assert parse_layers(value) == expected


@pytest.mark.parametrize("value", ["deep", -1, 2.5, True])
def test_parse_layers_rejects(value):
    with pytest.raises(ConfigError):
        parse_layers(value)


def test_relative_paths_resolve_against_config(tmp_path):
    cfg = load_run_config(write_config(tmp_path, {"train": "data/train.txt", "layers": "inf"}))
    assert Path(cfg.train) == tmp_path / "data" / "train.txt"
    assert cfg.layers == math.inf
    assert cfg.source_path.endswith("run.json")


def test_overrides_win_over_file(tmp_path):
    cfg = load_run_config(write_config(tmp_path, {"seed": 1, "epochs": 9}),
                          {"seed": 5, "epochs": None, "layers": "3"})
    assert (cfg.seed, cfg.epochs, cfg.layers) == (5, 9, 3)


@pytest.mark.parametrize("data, message", [
    ({"depth": 3}, "Unknown config keys"),
    ([1, 2], "JSON object"),
])
def test_load_rejects_bad_files(tmp_path, data, message):
    with pytest.raises(ConfigError, match=message):
        load_run_config(write_config(tmp_path, data))


def test_load_rejects_missing_and_invalid(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError, match="valid JSON"):
        load_run_config(bad)


@pytest.mark.parametrize("changes", [
    {"score": "transe"},
    {"score": "complex", "dim": 7},
    {"beta": -0.1},
    {"n3_lambda": math.nan},
    {"partial_negatives": 0},
])
def test_validate_rejects(changes):
    with pytest.raises(ConfigError):
        RunConfig(**changes).validate(require_data=False)


def test_validate_checks_data_paths(tmp_path, ring_dataset):
    with pytest.raises(ConfigError, match="train path"):
        RunConfig().validate()
    with pytest.raises(ConfigError, match="does not exist"):
        RunConfig(train=str(tmp_path / "missing.txt")).validate()
    with pytest.raises(ConfigError, match="together"):
        RunConfig(train=str(ring_dataset["train"]), inductive_graph=str(ring_dataset["test"])).validate()


def test_to_dict_writes_inf_as_string():
    assert RunConfig().to_dict()["layers"] == "inf"
    assert "source_path" not in RunConfig().to_dict()


def test_train_config_from_run():
    cfg = RunConfig(score="complex", dim=8, optimizer="sgd", mode="pure_fm", layers=4)
    train_cfg = train_config_from_run(cfg)
    assert train_cfg.score is ScoreKind.COMPLEX
    assert train_cfg.optimizer is OptimizerKind.SGD
    assert train_cfg.mode is Mode.PURE_FM
    assert train_cfg.layers == 4


@pytest.mark.parametrize("changes", [
    {"layers": 0},
    {"optimizer": "adagrad", "alpha": 0.1},
    {"optimizer": "adagrad", "adagrad_eps": 0.0},
    {"batch_size": 0},
])
def test_train_config_from_run_rejects(changes):
    with pytest.raises(ConfigError):
        train_config_from_run(RunConfig(**changes))


def test_protocol_from_run():
    assert protocol_from_run(RunConfig()).label == "full"
    partial = protocol_from_run(RunConfig(protocol="partial", partial_negatives=20, filtered=False))
    assert partial.label == "partial-20" and not partial.filtered


def test_shipped_configs_load():
    root = Path(__file__).parent.parent / "configs"
    for path in sorted(root.glob("*.json")):
        cfg = load_run_config(path)
        cfg.validate(require_data=False)
        train_config_from_run(cfg)


@pytest.mark.parametrize("data, key", [
    ({"dim": "eight"}, "dim"),
    ({"beta": "0.1"}, "beta"),
    ({"epochs": True}, "epochs"),
    ({"filtered": 1}, "filtered"),
    ({"train": 5}, "train"),
    ({"eta": [0.1]}, "eta"),
    ({"layers": [3]}, "layers"),
])
def test_load_rejects_wrong_value_types(tmp_path, data, key):
    with pytest.raises(ConfigError, match=key):
        load_run_config(write_config(tmp_path, data))


def test_int_accepted_for_float_fields(tmp_path):
    cfg = load_run_config(write_config(tmp_path, {"beta": 1, "eta": None, "n3_lambda": 0}))
    assert cfg.beta == 1 and cfg.eta is None


def test_validate_rejects_wrong_value_types():
    with pytest.raises(ConfigError, match="dim"):
        RunConfig(dim="8").validate(require_data=False)
