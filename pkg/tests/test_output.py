import csv
import json

import pytest

from refactor_kgc.errors import ArtifactError
from refactor_kgc.models import Metrics
from refactor_kgc.output import emit_metrics, emit_metrics_by_relation, metrics_json, read_metrics


@pytest.fixture
def sample():
    return Metrics(mrr=7 / 12, hits1=1 / 3, hits3=2 / 3, hits10=1.0, n_queries=3)


def test_metrics_json_is_canonical(sample):
    assert json.loads(metrics_json(sample)) == {
        "filtered": True, "hits@1": 0.333333, "hits@10": 1.0, "hits@3": 0.666667,
        "mrr": 0.583333, "n_queries": 3, "protocol": "full",
    }
    text = metrics_json(sample)
    assert text.index('"filtered"') < text.index('"mrr"') < text.index('"protocol"')


def test_emit_metrics_appends_results_rows(tmp_path, sample):
    emit_metrics(sample, tmp_path / "metrics.json", label="test")
    emit_metrics(Metrics(0.5, 0.0, 1.0, 1.0, 2, protocol="partial-50", filtered=False),
                 tmp_path / "metrics_valid.json")

    with open(tmp_path / "results.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["label"] for r in rows] == ["test", "metrics_valid"]
    assert rows[0]["mrr"] == "0.583333"
    assert rows[1]["protocol"] == "partial-50"
    assert rows[1]["filtered"] == "False"


def test_read_metrics_round_trip(tmp_path, sample):
    path = emit_metrics(sample, tmp_path / "out" / "metrics.json")
    again = read_metrics(path)
    assert again.mrr == pytest.approx(sample.mrr, abs=1e-6)
    assert again.n_queries == 3


def test_read_metrics_errors(tmp_path):
    with pytest.raises(ArtifactError):
        read_metrics(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text('{"mrr": 1.0}')
    with pytest.raises(ArtifactError):
        read_metrics(bad)


def test_by_relation_file(tmp_path, sample):
    path = emit_metrics_by_relation({"next": sample}, tmp_path / "by_rel.json")
    assert json.loads(path.read_text())["next"]["n_queries"] == 3
