import math

import numpy as np
import pytest

from refactor_kgc.errors import ConfigError, NumericalError, VocabularyError
from refactor_kgc.evaluation import FilterIndex, evaluate
from refactor_kgc.graph import build_graph, load_bundle, load_inductive, load_triples, random_features
from refactor_kgc.models import (
    CandidateStrategy, DatasetBundle, Mode, NodeFeatures, OptimizerKind, Protocol, TrainConfig, Vocabulary,
)
from refactor_kgc.trainer import (
    candidate_set, fit, inductive_infer, iter_batches, propagate, psi_step, sample_batch,
    transductive_states,
)

EMPTY = np.empty((0, 3), dtype=np.int64)


@pytest.fixture
def ring_bundle(ring_dataset):
    return load_bundle(ring_dataset["train"], ring_dataset["valid"], ring_dataset["test"])


def small_config(**kwargs) -> TrainConfig:
    defaults = dict(dim=8, beta=0.1, epochs=2, batch_size=8, seed=3)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


def features_for(bundle: DatasetBundle, cfg: TrainConfig) -> NodeFeatures:
    return random_features(bundle.train.n_entities, cfg.dim, cfg.seed)


def without_valid(bundle: DatasetBundle) -> DatasetBundle:
    return DatasetBundle(train=bundle.train, valid_triples=EMPTY, test_triples=bundle.test_triples)


# ---------------------------------------------------------------------------
# Batches and candidates
# ---------------------------------------------------------------------------

def test_iter_batches_covers_every_triple():
    batches = list(iter_batches(10, np.random.default_rng(0), 3))
    assert [b.size for b in batches] == [3, 3, 3, 1]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))


def test_full_candidates_are_every_entity():
    batch = np.array([[0, 0, 1]])
    cands = candidate_set(batch, 5, np.random.default_rng(0), small_config())
    assert cands.tolist() == [0, 1, 2, 3, 4]


def test_sampled_candidates(ring_bundle):
    g = ring_bundle.train
    cfg = small_config(candidates=CandidateStrategy.SAMPLED, global_negatives=2)
    rng = np.random.default_rng(5)
    for _ in range(20):
        batch, cands = sample_batch(g, rng, cfg)
        endpoints = np.unique(batch[:, [0, 2]])
        assert np.unique(cands).size == cands.size
        assert np.all(np.isin(batch[:, 2], cands))
        assert np.all(np.isin(endpoints, cands))
        assert cands.size <= endpoints.size + 2 * batch.shape[0]


def test_sampled_candidates_respect_negative_cap():
    batch = np.array([[0, 0, 1], [2, 0, 3], [4, 0, 5]])
    cfg = small_config(candidates=CandidateStrategy.SAMPLED, negatives=2, global_negatives=0)
    cands = candidate_set(batch, 10, np.random.default_rng(0), cfg)
    assert np.all(np.isin([1, 3, 5], cands))
    assert cands.size <= 2 + 3


def test_sample_batch_takes_whole_graph_when_batch_is_large(ring_bundle):
    g = ring_bundle.train
    batch, _ = sample_batch(g, np.random.default_rng(0), small_config(batch_size=10_000))
    assert sorted(map(tuple, batch.tolist())) == sorted(map(tuple, g.triples.tolist()))


def test_sample_batch_rejects_empty_graph():
    with pytest.raises(ValueError, match="empty"):
        sample_batch(load_triples(""), np.random.default_rng(0), small_config())


# ---------------------------------------------------------------------------
# Relation step
# ---------------------------------------------------------------------------

def test_psi_step_two_entity(two_entity):
    _, phi, psi = two_entity
    out = psi_step([[0, 0, 1]], [0, 1], phi, psi, eta=1.0)
    assert out[0, 0] == pytest.approx(1.268941, abs=1e-6)
    assert np.array_equal(psi_step([[0, 0, 1]], [0, 1], phi, psi, eta=0.0), psi)


def test_psi_step_leaves_untouched_relations():
    g = build_graph(Vocabulary(["a", "b", "c"], ["r", "q"]), [(0, 0, 1), (1, 1, 2)])
    h = np.random.default_rng(0).normal(size=(3, 4))
    psi = np.random.default_rng(1).normal(size=(2, 4))
    out = psi_step(g.triples[:1], np.arange(3), h, psi, eta=0.5)
    assert np.array_equal(out[1], psi[1])
    assert not np.array_equal(out[0], psi[0])


def test_psi_step_needs_gold_among_candidates(two_entity):
    _, phi, psi = two_entity
    with pytest.raises(ValueError, match="gold"):
        psi_step([[0, 0, 1]], [0], phi, psi, eta=1.0)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def test_zero_step_sizes_leave_states_unchanged(ring_bundle):
    cfg = small_config(beta=0.0, eta=0.0)
    features = features_for(ring_bundle, cfg)
    model = fit(ring_bundle, features, cfg)
    assert np.array_equal(model.cache.snapshot(), features.matrix)
    assert len(model.log) >= 1


def test_fit_is_deterministic(ring_bundle):
    cfg = small_config(epochs=3)
    a = fit(ring_bundle, features_for(ring_bundle, cfg), cfg)
    b = fit(ring_bundle, features_for(ring_bundle, cfg), cfg)
    assert np.array_equal(a.psi, b.psi)
    assert np.array_equal(a.cache.snapshot(), b.cache.snapshot())
    assert [r.loss for r in a.log] == [r.loss for r in b.log]


def test_pure_fm_matches_unbounded_refactor_under_sgd(ring_bundle):
    bundle = without_valid(ring_bundle)
    common = dict(optimizer=OptimizerKind.SGD, layers=math.inf, epochs=3, n3_lambda=0.01)
    fm_cfg = small_config(mode=Mode.PURE_FM, **common)
    rf_cfg = small_config(mode=Mode.REFACTOR, **common)
    fm = fit(bundle, features_for(bundle, fm_cfg), fm_cfg)
    rf = fit(bundle, features_for(bundle, rf_cfg), rf_cfg)
    assert np.max(np.abs(fm.psi - rf.psi)) <= 1e-9
    assert np.max(np.abs(fm.cache.snapshot() - rf.cache.snapshot())) <= 1e-9


@pytest.mark.parametrize("layers", [1, 3, 6, 9, math.inf])
def test_parameter_count_ignores_depth(ring_bundle, layers):
    cfg = small_config(layers=layers, epochs=1)
    model = fit(ring_bundle, features_for(ring_bundle, cfg), cfg)
    assert model.n_parameters == ring_bundle.train.n_relations * cfg.dim


def test_pure_fm_counts_node_parameters(ring_bundle):
    cfg = small_config(mode=Mode.PURE_FM, epochs=1)
    model = fit(ring_bundle, features_for(ring_bundle, cfg), cfg)
    g = ring_bundle.train
    assert model.n_parameters == (g.n_relations + g.n_entities) * cfg.dim


def test_initial_loss_is_near_uniform(ring_bundle):
    cfg = small_config(beta=0.0, eta=0.0, epochs=1, batch_size=10_000)
    model = fit(ring_bundle, features_for(ring_bundle, cfg), cfg)
    assert model.log[0].loss == pytest.approx(math.log(ring_bundle.train.n_entities), abs=0.1)


def test_finite_layers_clear_the_cache(ring_bundle):
    cfg = small_config(layers=1, epochs=2)
    model = fit(without_valid(ring_bundle), features_for(ring_bundle, cfg), cfg)
    assert [r.cache_event for r in model.log] == ["cleared", "cleared"]
    assert np.array_equal(model.cache.snapshot(), model.cache.initial.matrix)


def test_non_finite_loss_raises(ring_bundle):
    cfg = small_config()
    features = features_for(ring_bundle, cfg)
    features.matrix[0, 0] = np.nan
    with pytest.raises(NumericalError):
        fit(ring_bundle, features, cfg)


def test_fit_rejects_feature_shape(ring_bundle):
    cfg = small_config()
    with pytest.raises(ValueError, match="features"):
        fit(ring_bundle, random_features(3, cfg.dim, 0), cfg)


def test_on_epoch_callback(ring_bundle):
    seen = []
    cfg = small_config(epochs=2, patience=10)
    fit(ring_bundle, features_for(ring_bundle, cfg), cfg, on_epoch=seen.append)
    assert [r.epoch for r in seen] == [1, 2]
    assert all(r.valid_mrr is not None for r in seen)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def test_propagate_zero_layers_returns_features(two_entity):
    g, phi, psi = two_entity
    out = propagate(g, phi, psi, small_config(dim=1), 0)
    assert np.array_equal(out, phi)
    assert out is not phi


def test_inductive_infer(inductive_dataset):
    bundle = load_bundle(inductive_dataset["train"], inductive_dataset["valid"], inductive_dataset["test"])
    bundle = load_inductive(bundle, inductive_dataset["inductive_graph"], inductive_dataset["inductive_queries"])
    cfg = small_config(layers=2, epochs=1)
    model = fit(bundle, features_for(bundle, cfg), cfg)
    test_g = bundle.inductive_test
    x_test = random_features(test_g.n_entities, cfg.dim, cfg.seed + 7)

    assert np.array_equal(inductive_infer(model, test_g, x_test, layers=0), x_test.matrix)
    h = inductive_infer(model, test_g, x_test)
    assert h.shape == x_test.matrix.shape
    assert np.all(np.isfinite(h))

    with pytest.raises(ConfigError):
        inductive_infer(model, test_g, x_test, layers=math.inf)
    with pytest.raises(ValueError, match="features"):
        inductive_infer(model, test_g, random_features(test_g.n_entities, cfg.dim + 1, 0))
    other = load_triples("x\tq\ty\n")
    with pytest.raises(VocabularyError):
        inductive_infer(model, other, random_features(2, cfg.dim, 0))


# ---------------------------------------------------------------------------
# Learning
# ---------------------------------------------------------------------------

def ring_test_mrr(model, bundle: DatasetBundle) -> float:
    g = bundle.train
    filt = FilterIndex.from_triples(g.triples, bundle.test_triples, base_relations=g.base_relations)
    h = transductive_states(model, g)
    return evaluate(h, model.psi, bundle.test_triples, Protocol(), filt, model.config.score,
                    base_relations=g.base_relations).mrr


@pytest.mark.parametrize("mode, layers", [
    (Mode.PURE_FM, math.inf),
    (Mode.REFACTOR, math.inf),
    (Mode.REFACTOR, 3),
])
def test_training_beats_untrained_model(ring_bundle, mode, layers):
    bundle = without_valid(ring_bundle)
    cfg = small_config(dim=16, epochs=200, mode=mode, layers=layers)
    frozen_cfg = small_config(dim=16, epochs=1, mode=mode, layers=layers, beta=0.0, eta=0.0)
    trained = fit(bundle, features_for(bundle, cfg), cfg)
    frozen = fit(bundle, features_for(bundle, frozen_cfg), frozen_cfg)
    assert ring_test_mrr(trained, bundle) > ring_test_mrr(frozen, bundle)


def test_inductive_layers_beat_raw_features(inductive_dataset):
    bundle = load_bundle(inductive_dataset["train"], "", inductive_dataset["test"])
    bundle = load_inductive(bundle, inductive_dataset["inductive_graph"], inductive_dataset["inductive_queries"])
    cfg = small_config(dim=16, epochs=200, layers=2)
    model = fit(bundle, features_for(bundle, cfg), cfg)
    test_g = bundle.inductive_test
    x_test = random_features(test_g.n_entities, cfg.dim, cfg.seed + 7)
    filt = FilterIndex.from_triples(test_g.triples, bundle.inductive_queries, base_relations=test_g.base_relations)

    def mrr(layers):
        h = inductive_infer(model, test_g, x_test, layers=layers)
        return evaluate(h, model.psi, bundle.inductive_queries, Protocol(), filt,
                        base_relations=test_g.base_relations).mrr

    assert mrr(2) > mrr(0)
