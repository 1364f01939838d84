import math
import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from refactor_kgc.cache import NodeStateCache, read_matrix, write_matrix
from refactor_kgc.errors import ArtifactError
from refactor_kgc.graph import random_features
from refactor_kgc.models import CacheEvent


@pytest.fixture
def features():
    return random_features(10, 4, seed=0)


def test_fresh_cache_returns_features(features):
    cache = NodeStateCache(features)
    assert np.array_equal(cache.pull([3, 7]), features.matrix[[3, 7]])
    assert np.array_equal(cache.pull(np.arange(10)), cache.snapshot())


def test_push_pull_round_trip(features):
    cache = NodeStateCache(features)
    rows = np.arange(8, dtype=float).reshape(2, 4)
    cache.push([1, 5], rows)
    assert np.array_equal(cache.pull([1, 5]), rows)
    assert cache.step == 0
    cache.push([], np.empty((0, 4)))


@pytest.mark.parametrize("ids, rows, error", [
    ([0], np.ones((1, 3)), ValueError),
    ([0, 0], np.ones((2, 4)), ValueError),
    ([0], np.full((1, 4), np.nan), ValueError),
    ([10], np.ones((1, 4)), IndexError),
])
def test_push_rejects_bad_input(features, ids, rows, error):
    with pytest.raises(error):
        NodeStateCache(features).push(ids, rows)


def test_pull_out_of_range(features):
    with pytest.raises(IndexError):
        NodeStateCache(features).pull([-1])


def test_view_is_read_only(features):
    view = NodeStateCache(features).view()
    with pytest.raises(ValueError):
        view[0, 0] = 1.0


def test_clears_every_l_steps(features):
    cache = NodeStateCache(features, layer_budget=3)
    cache.push([0], np.zeros((1, 4)))
    assert cache.advance_and_maybe_clear() is CacheEvent.KEPT
    assert cache.advance_and_maybe_clear() is CacheEvent.KEPT
    assert cache.advance_and_maybe_clear() is CacheEvent.CLEARED
    assert cache.step == 3
    assert np.array_equal(cache.states, features.matrix)


def test_single_layer_clears_every_call(features):
    cache = NodeStateCache(features, layer_budget=1)
    assert all(cache.advance_and_maybe_clear() is CacheEvent.CLEARED for _ in range(5))


def test_infinite_budget_never_clears(features):
    cache = NodeStateCache(features, layer_budget=math.inf)
    cache.push([2], np.zeros((1, 4)))
    assert all(cache.advance_and_maybe_clear() is CacheEvent.KEPT for _ in range(10_000))
    assert np.array_equal(cache.pull([2]), np.zeros((1, 4)))


@pytest.mark.parametrize("budget", [0, 2.5, -1])
def test_rejects_bad_budget(features, budget):
    with pytest.raises(ValueError):
        NodeStateCache(features, layer_budget=budget)


def test_disjoint_concurrent_pushes(features):
    rng = np.random.default_rng(1)
    updates = [(np.array([i, i + 5]), rng.normal(size=(2, 4))) for i in range(5)]
    sequential = NodeStateCache(features)
    for ids, rows in updates:
        sequential.push(ids, rows)
    concurrent = NodeStateCache(features)
    with ThreadPoolExecutor(max_workers=5) as pool:
        list(pool.map(lambda u: concurrent.push(*u), updates[::-1]))
    assert np.array_equal(sequential.states, concurrent.states)


def test_snapshot_codec(tmp_path, features):
    path = tmp_path / "cache.bin"
    write_matrix(path, features.matrix)
    data = path.read_bytes()
    assert data[:4] == b"RFGN"
    assert struct.unpack_from("<IQQ", data, 4) == (1, 10, 4)
    assert len(data) == 4 + 4 + 8 + 8 + 10 * 4 * 8
    assert np.array_equal(read_matrix(path), features.matrix)


def test_snapshot_codec_rejects_bad_files(tmp_path, features):
    path = tmp_path / "cache.bin"
    write_matrix(path, features.matrix)
    good = path.read_bytes()

    path.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(ArtifactError, match="magic"):
        read_matrix(path)
    path.write_bytes(good[:4] + struct.pack("<I", 9) + good[8:])
    with pytest.raises(ArtifactError, match="version"):
        read_matrix(path)
    path.write_bytes(good[:-8])
    with pytest.raises(ArtifactError, match="payload"):
        read_matrix(path)
    with pytest.raises(ArtifactError):
        read_matrix(tmp_path / "missing.bin")
