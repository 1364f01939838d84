"""
Layer-wise training of ψ over the node-state cache, the pure-FM baseline, and
inference by L rounds of message passing.
"""

import logging
import math
import time
from collections.abc import Callable, Iterator

import numpy as np

from .cache import NodeStateCache
from .dynamics import adagrad_rescale, full_gd_step, n3_gradient
from .errors import ConfigError, NumericalError, VocabularyError
from .evaluation import FilterIndex, evaluate
from .layer import layer_apply
from .models import (
    CacheEvent, CandidateStrategy, ClearUnit, DatasetBundle, EpochRecord, KnowledgeGraph, Mode,
    NodeFeatures, NodeStates, OptimizerKind, OptimizerState, Protocol, RelationTable, Scope,
    ScoreKind, TrainConfig, TrainedModel,
)
from .scoring import candidate_probs, log_likelihood_loss, relation_grad

logger = logging.getLogger(__name__)

# Labels for the per-component rng streams derived from the run seed.
SHUFFLE_STREAM = 1
PSI_INIT_STREAM = 2
INFERENCE_STREAM = 3


# ---------------------------------------------------------------------------
# Batches and candidates
# ---------------------------------------------------------------------------

def iter_batches(n_triples: int, rng: np.random.Generator, batch_size: int) -> Iterator[np.ndarray]:
    """One epoch of shuffled index batches; every triple appears exactly once."""
    order = rng.permutation(n_triples)
    for start in range(0, n_triples, batch_size):
        yield order[start:start + batch_size]


def candidate_set(batch: np.ndarray, n_entities: int, rng: np.random.Generator, cfg: TrainConfig) -> np.ndarray:
    """
    Softmax candidates for a batch: every entity (full), or the in-batch endpoints
    plus global_negatives uniform draws per triple plus the gold objects (sampled).
    """
    if cfg.candidates is CandidateStrategy.FULL:
        return np.arange(n_entities)
    endpoints = np.unique(batch[:, [0, 2]])
    if cfg.negatives is not None and cfg.negatives < endpoints.size:
        endpoints = rng.choice(endpoints, size=cfg.negatives, replace=False)
    globals_ = rng.integers(0, n_entities, size=batch.shape[0] * cfg.global_negatives)
    return np.unique(np.concatenate([endpoints, globals_, batch[:, 2]]))


def sample_batch(g: KnowledgeGraph, rng: np.random.Generator, cfg: TrainConfig,
                 indices: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """A batch of triples (drawn without replacement unless indices are given) and its candidates."""
    if g.n_triples == 0:
        raise ValueError("cannot sample from an empty graph")
    if indices is None:
        indices = rng.choice(g.n_triples, size=min(cfg.batch_size, g.n_triples), replace=False)
    batch = np.asarray(g.triples[indices], dtype=np.int64)
    return batch, candidate_set(batch, g.n_entities, rng, cfg)


# ---------------------------------------------------------------------------
# Relation step
# ---------------------------------------------------------------------------

def psi_gradient(batch: np.ndarray, cands: np.ndarray, h: NodeStates, psi: RelationTable,
                 kind: ScoreKind) -> tuple[np.ndarray, float]:
    """Σ over the batch of ∇_ψ[−log P(w | v, r)] with h held fixed, and the mean loss."""
    s, r, o = batch[:, 0], batch[:, 1], batch[:, 2]
    hc = h[cands]
    probs, _ = candidate_probs(kind, h[s], psi[r], hc)
    index = np.full(h.shape[0], -1, dtype=np.int64)
    index[cands] = np.arange(cands.size)
    gold = index[o]
    if np.any(gold < 0):
        raise ValueError("gold object missing from the candidate set")
    grad = np.zeros_like(psi)
    np.add.at(grad, r, relation_grad(kind, h[s], probs @ hc - h[o]))
    return grad, log_likelihood_loss(probs, gold)


def apply_psi_gradient(psi: RelationTable, grad: np.ndarray, touched: np.ndarray, eta: float,
                       n3_lambda: float, batch_size: int, state: OptimizerState | None = None) -> RelationTable:
    out = psi.copy()
    rows = psi[touched]
    reg = n3_gradient(rows, n3_lambda)
    if state is None or state.kind is OptimizerKind.SGD:
        out[touched] = rows - eta * grad[touched] - eta * reg
        return out
    g = grad[touched] / batch_size + reg
    scaled, state.relation_accum[touched] = adagrad_rescale(g, state.relation_accum[touched], state.eps)
    out[touched] = rows - eta * scaled
    return out


def psi_step(batch: np.ndarray, cands: np.ndarray, h: NodeStates, psi: RelationTable, eta: float,
             kind: ScoreKind = ScoreKind.DISTMULT, n3_lambda: float = 0.0,
             state: OptimizerState | None = None) -> RelationTable:
    """ψ′[r] = ψ[r] − η Σ_batch ∇_ψ[r] for every relation the batch touches; other rows are untouched."""
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    cands = np.asarray(cands, dtype=np.int64)
    grad, _ = psi_gradient(batch, cands, h, psi, kind)
    return apply_psi_gradient(psi, grad, np.unique(batch[:, 1]), eta, n3_lambda, batch.shape[0], state)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def propagate(g: KnowledgeGraph, h0: NodeStates, psi: RelationTable, cfg: TrainConfig,
              layers: int, rng: np.random.Generator | None = None) -> NodeStates:
    """
    Apply `layers` ReFactor layers from h0 over g with ψ frozen.

    One layer cascades layer_apply over shuffled mini-batches of cfg.batch_size.
    """
    h = np.array(h0, dtype=np.float64, copy=True)
    if layers == 0 or g.n_triples == 0:
        return h
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, INFERENCE_STREAM])
    rcfg = cfg.refactor_config()
    state = OptimizerState.create(cfg.optimizer, cfg.adagrad_eps, g.n_entities, g.n_relations, h.shape[1])
    for layer in range(layers):
        for idx in iter_batches(g.n_triples, rng, cfg.batch_size):
            batch = g.triples[idx]
            scope = Scope(batch, candidate_set(batch, g.n_entities, rng, cfg), g.n_entities)
            h = layer_apply(scope, h, psi, rcfg, state)
        logger.debug("inference layer %d/%d done", layer + 1, layers)
    return h


def inductive_infer(model: TrainedModel, test_g: KnowledgeGraph, x_test: NodeFeatures,
                    layers: float | None = None) -> NodeStates:
    """h⁰ = X_test, then L layers over the unseen graph with the trained ψ*."""
    layers = model.config.layers if layers is None else layers
    if math.isinf(layers):
        raise ConfigError("inductive inference needs a finite layer count")
    if test_g.n_relations != model.psi.shape[0]:
        raise VocabularyError(
            f"test graph has {test_g.n_relations} relations, trained ψ has {model.psi.shape[0]}"
        )
    if x_test.matrix.shape != (test_g.n_entities, model.psi.shape[1]):
        raise ValueError(f"features must be {test_g.n_entities} x {model.psi.shape[1]}")
    return propagate(test_g, x_test.matrix, model.psi, model.config, int(layers))


def transductive_states(model: TrainedModel, g: KnowledgeGraph) -> NodeStates:
    """Cached states for L = inf or a pure FM; otherwise L fresh layers from X over the train graph."""
    if model.config.mode is Mode.PURE_FM or math.isinf(model.config.layers):
        return model.cache.snapshot()
    return propagate(g, model.cache.initial.matrix, model.psi, model.config, int(model.config.layers))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def init_psi(n_relations: int, dim: int, seed: int) -> RelationTable:
    rng = np.random.default_rng([seed, PSI_INIT_STREAM])
    return rng.normal(0.0, 1.0 / np.sqrt(dim), size=(n_relations, dim))


def _valid_mrr(model: TrainedModel, bundle: DatasetBundle, filt: FilterIndex) -> float | None:
    if bundle.valid_triples.size == 0:
        return None
    g = bundle.train
    h = transductive_states(model, g)
    metrics = evaluate(h, model.psi, bundle.valid_triples, Protocol(), filt, model.config.score,
                       base_relations=g.base_relations if g.reciprocal else None,
                       seed=model.config.seed)
    return metrics.mrr


def fit(
    bundle: DatasetBundle,
    features: NodeFeatures,
    cfg: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainedModel:
    """
    Train ψ (and φ in PURE_FM mode) for cfg.epochs passes over the training graph.

    Every batch: read states, take one node step (layer_apply or full_gd_step)
    and one ψ step from the same pre-step states, write the scope rows back.
    The cache advances once per pass (or per batch with clear_unit=batch).
    Stops early after cfg.patience epochs without a better valid MRR.
    """
    g = bundle.train
    if g.n_triples == 0:
        raise ValueError("training graph has no triples")
    if features.matrix.shape != (g.n_entities, cfg.dim):
        raise ValueError(f"features must be {g.n_entities} x {cfg.dim}, got {features.matrix.shape}")

    rng = np.random.default_rng([cfg.seed, SHUFFLE_STREAM])
    psi = init_psi(g.n_relations, cfg.dim, cfg.seed)
    if cfg.mode is Mode.PURE_FM:
        cache = NodeStateCache(features, math.inf)
    else:
        cache = NodeStateCache(features, cfg.layers, cfg.clear_unit)
    rcfg = cfg.refactor_config()
    state = OptimizerState.create(cfg.optimizer, cfg.adagrad_eps, g.n_entities, g.n_relations, cfg.dim)
    model = TrainedModel(psi=psi, cache=cache, config=cfg)

    filt = FilterIndex.from_triples(
        g.triples, bundle.valid_triples, bundle.test_triples,
        base_relations=g.base_relations if g.reciprocal else None,
    )
    best_mrr, best = -math.inf, None
    stale = 0

    def advance() -> CacheEvent:
        event = cache.advance_and_maybe_clear()
        if event is CacheEvent.CLEARED:
            state.reset_nodes()
        return event

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        losses: list[float] = []
        events: list[CacheEvent] = []

        for b, idx in enumerate(iter_batches(g.n_triples, rng, cfg.batch_size)):
            batch = np.asarray(g.triples[idx], dtype=np.int64)
            scope = Scope(batch, candidate_set(batch, g.n_entities, rng, cfg), g.n_entities)
            h = cache.view()

            grad, loss = psi_gradient(batch, scope.candidates, h, model.psi, cfg.score)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b} (β={cfg.beta})")
            losses.append(loss)

            if cfg.mode is Mode.PURE_FM:
                new = full_gd_step(scope, h, model.psi, rcfg, state)
            else:
                new = layer_apply(scope, h, model.psi, rcfg, state)
            nodes = scope.nodes
            if not np.all(np.isfinite(new[nodes])):
                raise NumericalError(f"non-finite node states at epoch {epoch}, batch {b}")
            model.psi = apply_psi_gradient(
                model.psi, grad, np.unique(batch[:, 1]), cfg.psi_rate, cfg.n3_lambda, batch.shape[0], state,
            )
            cache.push(nodes, new[nodes])
            logger.debug("epoch %d batch %d loss %.6f", epoch, b, loss)

            if cfg.clear_unit is ClearUnit.BATCH and cfg.mode is Mode.REFACTOR:
                events.append(advance())

        if cfg.clear_unit is ClearUnit.PASS or cfg.mode is Mode.PURE_FM:
            events.append(advance())

        valid_mrr = _valid_mrr(model, bundle, filt)
        event = CacheEvent.CLEARED if CacheEvent.CLEARED in events else CacheEvent.KEPT
        record = EpochRecord(epoch, float(np.mean(losses)), valid_mrr, time.perf_counter() - t0, event.value)
        model.log.append(record)
        logger.info(
            "epoch %d/%d loss %.4f valid_mrr %s %.1fs cache %s",
            epoch, cfg.epochs, record.loss,
            "-" if valid_mrr is None else f"{valid_mrr:.4f}", record.seconds, record.cache_event,
        )
        if on_epoch:
            on_epoch(record)

        if valid_mrr is None:
            continue
        if valid_mrr > best_mrr:
            best_mrr, stale = valid_mrr, 0
            best = (model.psi.copy(), cache.snapshot(), cache.step)
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info("early stop at epoch %d (best valid MRR %.4f)", epoch, best_mrr)
                break

    if best is not None:
        model.psi = best[0]
        cache.restore(best[1], best[2])
    return model
