"""Orchestration for the CLI verbs: train, eval, verify, ablate."""

import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .artifacts import load_model, save_model
from .config import METRICS_FILE, VERIFY_BOUND, RunConfig
from .errors import ArtifactError, ConfigError, VocabularyError
from .evaluation import FilterIndex, metrics_by_relation, metrics_from_ranks, query_ranks
from .graph import load_bundle, load_feature_file, load_inductive, random_features, random_graph
from .layer import verify_gd_equivalence
from .models import (
    CandidateStrategy, ClearUnit, DatasetBundle, Directions, Metrics, Mode, NodeFeatures,
    OptimizerKind, Protocol, RankMode, RefactorConfig, ScoreKind, TrainConfig, TrainedModel,
)
from .output import emit_metrics, emit_metrics_by_relation, print_divergence_table, print_rich_summary
from .trainer import fit, inductive_infer, transductive_states

logger = logging.getLogger(__name__)

INDUCTIVE_FEATURE_STREAM = 7


def _progress(step: int, total: int, msg: str) -> None:
    logger.info("[Step %d/%d] %s", step, total, msg)


# ---------------------------------------------------------------------------
# Config translation
# ---------------------------------------------------------------------------

def train_config_from_run(cfg: RunConfig) -> TrainConfig:
    try:
        train_cfg = TrainConfig(
            score=ScoreKind(cfg.score), dim=cfg.dim, beta=cfg.beta, eta=cfg.eta, alpha=cfg.alpha,
            epochs=cfg.epochs, batch_size=cfg.batch_size, negatives=cfg.negatives,
            global_negatives=cfg.global_negatives, layers=cfg.layers, n3_lambda=cfg.n3_lambda,
            optimizer=OptimizerKind(cfg.optimizer), adagrad_eps=cfg.adagrad_eps, seed=cfg.seed,
            mode=Mode(cfg.mode), candidates=CandidateStrategy(cfg.candidates),
            include_global_term=cfg.include_global_term, directions=Directions(cfg.directions),
            clear_unit=ClearUnit(cfg.clear_unit), patience=cfg.patience,
        )
        train_cfg.refactor_config()
        if train_cfg.layers < 1:
            raise ValueError("training needs at least one layer per cache cycle")
        if train_cfg.optimizer is OptimizerKind.ADAGRAD and train_cfg.adagrad_eps <= 0:
            raise ValueError("adagrad_eps must be > 0")
    except ValueError as e:
        raise ConfigError(str(e))
    return train_cfg


def protocol_from_run(cfg: RunConfig) -> Protocol:
    mode = RankMode.FULL if cfg.protocol == "full" else RankMode.PARTIAL
    return Protocol(mode=mode, k=cfg.partial_negatives, filtered=cfg.filtered)


def load_data(cfg: RunConfig) -> DatasetBundle:
    bundle = load_bundle(cfg.train, cfg.valid, cfg.test, reciprocals=cfg.reciprocals)
    if cfg.inductive_graph:
        bundle = load_inductive(bundle, cfg.inductive_graph, cfg.inductive_queries, reciprocals=cfg.reciprocals)
    return bundle


def load_node_features(cfg: RunConfig, bundle: DatasetBundle) -> NodeFeatures:
    vocab = bundle.train.vocab
    if cfg.features:
        return load_feature_file(cfg.features, vocab, cfg.dim, fill_random=cfg.fill_random, seed=cfg.seed)
    return random_features(vocab.n_entities, cfg.dim, cfg.seed)


def inductive_features(cfg: RunConfig, bundle: DatasetBundle) -> NodeFeatures:
    return random_features(bundle.inductive_test.n_entities, cfg.dim, cfg.seed + INDUCTIVE_FEATURE_STREAM)


# ---------------------------------------------------------------------------
# Evaluation over every available split
# ---------------------------------------------------------------------------

def evaluate_model(model: TrainedModel, bundle: DatasetBundle, cfg: RunConfig,
                   splits: tuple[str, ...] = ("valid", "test", "inductive")) -> tuple[dict, dict]:
    """Metrics per split, plus per-relation breakdowns when cfg.by_relation is set."""
    protocol = protocol_from_run(cfg)
    kind = model.config.score
    g = bundle.train
    base = g.base_relations if g.reciprocal else None
    labels = g.base_relation_labels
    results: dict[str, Metrics] = {}
    breakdown: dict[str, dict[str, Metrics]] = {}

    def run(name, h, triples, filt, base_rel):
        ranks, rels = query_ranks(h, model.psi, triples, protocol, filt, kind,
                                  base_relations=base_rel, seed=cfg.seed)
        results[name] = metrics_from_ranks(ranks, protocol.label, protocol.filtered)
        if cfg.by_relation:
            breakdown[name] = metrics_by_relation(ranks, rels, labels, protocol.label, protocol.filtered)

    transductive = [s for s in ("valid", "test") if s in splits and getattr(bundle, f"{s}_triples").size]
    if transductive:
        h = transductive_states(model, g)
        filt = FilterIndex.from_triples(g.triples, bundle.valid_triples, bundle.test_triples, base_relations=base)
        for name in transductive:
            run(name, h, getattr(bundle, f"{name}_triples"), filt, base)

    if "inductive" in splits and bundle.inductive_test is not None:
        test_g = bundle.inductive_test
        h = inductive_infer(model, test_g, inductive_features(cfg, bundle))
        ind_base = test_g.base_relations if test_g.reciprocal else None
        filt = FilterIndex.from_triples(test_g.triples, bundle.inductive_queries, base_relations=ind_base)
        run("inductive", h, bundle.inductive_queries, filt, ind_base)

    return results, breakdown


def _headline(results: dict[str, Metrics]) -> str:
    """The split reported in metrics.json: inductive when present, else test, else valid."""
    for name in ("inductive", "test", "valid"):
        if name in results:
            return name
    raise ValueError("no metrics to report")


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------

def run_train(cfg: RunConfig) -> dict:
    """Train, save the artifact directory, and write metrics for every split present."""
    cfg.validate()
    train_cfg = train_config_from_run(cfg)
    out_dir = cfg.output_dir()
    t0 = time.time()

    _progress(1, 4, "Loading triples...")
    bundle = load_data(cfg)
    g = bundle.train
    logger.info("  %d entities, %d relations (reciprocal=%s), %d training triples",
                g.n_entities, g.n_relations, g.reciprocal, g.n_triples)

    _progress(2, 4, "Preparing node features...")
    features = load_node_features(cfg, bundle)
    logger.info("  %s features, K=%d", features.source, features.dim)

    _progress(3, 4, f"Training {train_cfg.mode.value} ({train_cfg.score.value}, L={train_cfg.layers})...")
    model = fit(bundle, features, train_cfg)
    save_model(model, out_dir)

    _progress(4, 4, "Evaluating...")
    results, breakdown = evaluate_model(model, bundle, cfg)
    write_metrics(results, breakdown, out_dir)

    metadata = {
        "Mode": train_cfg.mode.value, "Score": train_cfg.score.value, "Layers": train_cfg.layers,
        "Parameters": model.n_parameters, "Epochs run": len(model.log),
        "Elapsed": f"{time.time() - t0:.1f}s", "Output": str(out_dir),
    }
    print_rich_summary("ReFactor training", results, metadata)
    return {"model": model, "metrics": results, "output": out_dir}


def write_metrics(results: dict[str, Metrics], breakdown: dict, out_dir: Path, label_prefix: str = "") -> None:
    """metrics.json holds the headline split; the other splits go to metrics_<split>.json."""
    if not results:
        return
    headline = _headline(results)
    emit_metrics(results[headline], out_dir / METRICS_FILE, label=f"{label_prefix}{headline}")
    for name, m in results.items():
        if name != headline:
            emit_metrics(m, out_dir / f"metrics_{name}.json", label=f"{label_prefix}{name}")
    for name, by_rel in breakdown.items():
        emit_metrics_by_relation(by_rel, out_dir / f"metrics_by_relation_{name}.json")


def run_eval(cfg: RunConfig, model_dir: str | Path) -> dict[str, Metrics]:
    """Re-evaluate a saved artifact directory on the splits named in cfg."""
    cfg.validate()
    _progress(1, 3, f"Loading model from {model_dir}...")
    model = load_model(model_dir)

    _progress(2, 3, "Loading triples...")
    bundle = load_data(cfg)
    g = bundle.train
    if model.psi.shape[0] != g.n_relations:
        raise VocabularyError(f"model has {model.psi.shape[0]} relations, data has {g.n_relations}")
    if model.cache.n_entities != g.n_entities:
        raise ArtifactError(f"model has {model.cache.n_entities} entity rows, data has {g.n_entities}")

    _progress(3, 3, "Ranking...")
    results, breakdown = evaluate_model(model, bundle, cfg, splits=("test", "inductive"))
    if not results:
        raise ConfigError("no test or inductive split to evaluate")
    write_metrics(results, breakdown, cfg.output_dir())
    print_rich_summary("ReFactor evaluation", results, {"Model": str(model_dir)})
    return results


def verify_settings(kind: ScoreKind, beta: float) -> list[tuple[str, RefactorConfig]]:
    return [
        (f"{kind.value} sgd", RefactorConfig(score=kind, beta=beta)),
        (f"{kind.value} sgd+n3", RefactorConfig(score=kind, beta=beta, n3_lambda=0.01)),
        (f"{kind.value} adagrad", RefactorConfig(score=kind, beta=beta, optimizer=OptimizerKind.ADAGRAD,
                                                 adagrad_eps=1e-8)),
    ]


def run_verify(seed: int = 0, graphs: int = 100, steps: int = 5) -> tuple[float, list[tuple[str, float]]]:
    """
    Sweep seeded random graphs and compare layer_apply with full_gd_step.

    Returns the overall maximum divergence and the per-setting maxima. Reads no files.
    """
    if graphs < 1 or steps < 1:
        raise ConfigError("graphs and steps must be >= 1")
    worst: dict[str, float] = {}
    t0 = time.time()
    for gi in range(graphs):
        rng = np.random.default_rng([seed, gi])
        g = random_graph(rng)
        for kind in (ScoreKind.DISTMULT, ScoreKind.COMPLEX):
            dim = int(rng.integers(1, 5)) * 2
            phi = rng.normal(0.0, 1.0, size=(g.n_entities, dim))
            psi = rng.normal(0.0, 1.0, size=(g.n_relations, dim))
            beta = float(rng.uniform(0.01, 0.5))
            for name, rcfg in verify_settings(kind, beta):
                gap = verify_gd_equivalence(g, phi, psi, rcfg, steps)
                worst[name] = max(worst.get(name, 0.0), gap)
    rows = sorted(worst.items())
    overall = max(worst.values())
    for name, gap in rows:
        logger.info("  %-20s max divergence %.3e", name, gap)
    logger.info("Swept %d graphs x %d steps in %.1fs", graphs, steps, time.time() - t0)
    print_divergence_table(rows, VERIFY_BOUND)
    return overall, rows


def run_ablate(cfg: RunConfig) -> dict:
    """Train with and without the global term n[v] under one seed and report the MRR delta."""
    cfg.validate()
    base_cfg = train_config_from_run(cfg)
    out_dir = cfg.output_dir()

    _progress(1, 4, "Loading triples...")
    bundle = load_data(cfg)
    features = load_node_features(cfg, bundle)

    headline: dict[str, Metrics] = {}
    for step, (name, include) in enumerate((("with_global", True), ("without_global", False)), start=2):
        _progress(step, 4, f"Training {name}...")
        train_cfg = replace(base_cfg, include_global_term=include)
        model = fit(bundle, features, train_cfg)
        results, breakdown = evaluate_model(model, bundle, cfg, splits=("test", "inductive"))
        if not results:
            raise ConfigError("ablation needs a test or inductive split")
        write_metrics(results, breakdown, out_dir / name, label_prefix=f"{name}/")
        headline[name] = results[_headline(results)]

    _progress(4, 4, "Summarising...")
    with_m, without_m = headline["with_global"], headline["without_global"]
    summary = {
        "mrr_with_global": round(with_m.mrr, 6),
        "mrr_without_global": round(without_m.mrr, 6),
        "mrr_delta": round(with_m.mrr - without_m.mrr, 6),
        "hits@10_delta": round(with_m.hits10 - without_m.hits10, 6),
        "seed": cfg.seed,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print_rich_summary("n[v] ablation", headline, {"MRR delta": f"{summary['mrr_delta']:+.4f}"})
    return summary
